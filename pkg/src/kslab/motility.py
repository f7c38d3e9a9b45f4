"""Motility functions gamma(v) and checkers for their decay/boundedness behaviour.

Each family is an immutable value object exposing the function, its analytic
derivative, and closed-form answers to the structural questions the solver and
the experiment classifiers care about:

  A1         limsup_{s->inf} gamma(s) < 1/tau
  A2         0 < gamma_lo <= gamma(s) <= gamma_hi on (0, inf)
  A4         exists k >= l >= 0 with liminf s^k gamma(s) > 0 and
             limsup s^l gamma(s) < inf
  GrowthCond liminf_{s->inf} e^{chi*s} gamma(s) > 0  (sub-exponential decay)

Evaluations are floored at TINY_GAMMA so that gamma stays strictly positive
even where exp() underflows in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

TINY_GAMMA = 1e-300

ASSUMPTIONS = ("A1", "A2", "A4", "GrowthCond")


def _as_positive(s):
    arr = np.asarray(s, dtype=float)
    if arr.size == 0 or np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise DomainError("motility functions are defined for s > 0 only")
    return arr


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class MotilityFamily:
    """Base class; subclasses implement _gamma/_dgamma on validated arrays."""

    @property
    def kind(self) -> str:
        return KIND_BY_CLASS[type(self)]

    def gamma(self, s):
        arr = _as_positive(s)
        out = np.maximum(self._gamma(arr), TINY_GAMMA)
        return float(out) if np.isscalar(s) or np.ndim(s) == 0 else out

    def dgamma(self, s):
        arr = _as_positive(s)
        out = self._dgamma(arr)
        return float(out) if np.isscalar(s) or np.ndim(s) == 0 else out

    # Closed-form structural data; subclasses override what they can answer.
    def gamma_inf(self) -> float:
        """limsup of gamma at infinity."""
        raise NotImplementedError

    def gamma_sup(self) -> float:
        """Global supremum of gamma over (0, inf)."""
        raise NotImplementedError

    def gamma_lo(self) -> float:
        """Global infimum of gamma over (0, inf)."""
        raise NotImplementedError

    def a4_witness(self):
        """(k, l) witnessing A4, or None when no algebraic envelope exists."""
        return None

    def growth_liminf(self, chi: float) -> float:
        """liminf of e^(chi*s) * gamma(s) at infinity."""
        raise NotImplementedError

    def params(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class Exponential(MotilityFamily):
    """gamma(s) = exp(-chi*s); the critical decay rate in two dimensions."""

    chi: float

    def __post_init__(self):
        _require(self.chi > 0, "exponential motility requires chi > 0")

    def _gamma(self, s):
        return np.exp(-self.chi * s)

    def _dgamma(self, s):
        return -self.chi * np.exp(-self.chi * s)

    def gamma_inf(self):
        return 0.0

    def gamma_sup(self):
        return 1.0  # supremum as s -> 0+

    def gamma_lo(self):
        return 0.0

    def growth_liminf(self, chi):
        if chi > self.chi:
            return math.inf
        if chi == self.chi:
            return 1.0
        return 0.0


@dataclass(frozen=True)
class StretchedExponential(MotilityFamily):
    """gamma(s) = exp(-s^alpha) with 0 < alpha < 1: decays slower than any e^(-chi*s)."""

    alpha: float

    def __post_init__(self):
        _require(0.0 < self.alpha < 1.0, "stretched exponential requires alpha in (0, 1)")

    def _gamma(self, s):
        return np.exp(-np.power(s, self.alpha))

    def _dgamma(self, s):
        return -self.alpha * np.power(s, self.alpha - 1.0) * np.exp(-np.power(s, self.alpha))

    def gamma_inf(self):
        return 0.0

    def gamma_sup(self):
        return 1.0

    def gamma_lo(self):
        return 0.0

    def growth_liminf(self, chi):
        return math.inf  # chi*s - s^alpha -> inf for every chi > 0


@dataclass(frozen=True)
class Algebraic(MotilityFamily):
    """gamma(s) = s^(-k), k >= 0; satisfies the two-sided algebraic envelope exactly."""

    k: float

    def __post_init__(self):
        _require(self.k >= 0, "algebraic motility requires k >= 0")

    def _gamma(self, s):
        return np.power(s, -self.k)

    def _dgamma(self, s):
        return -self.k * np.power(s, -self.k - 1.0)

    def gamma_inf(self):
        return 1.0 if self.k == 0 else 0.0

    def gamma_sup(self):
        return 1.0 if self.k == 0 else math.inf  # blows up as s -> 0+

    def gamma_lo(self):
        return 1.0 if self.k == 0 else 0.0

    def a4_witness(self):
        return (self.k, self.k)

    def growth_liminf(self, chi):
        return 1.0 if self.k == 0 and chi == 0 else math.inf


@dataclass(frozen=True)
class AlgebraicLog(MotilityFamily):
    """gamma(s) = s^(-k1) * log(1+s)^(-k2); sub-exponential with a log correction."""

    k1: float
    k2: float

    def __post_init__(self):
        _require(self.k1 > 0 and self.k2 > 0, "algebraic-log motility requires k1, k2 > 0")

    def _gamma(self, s):
        return np.power(s, -self.k1) * np.power(np.log1p(s), -self.k2)

    def _dgamma(self, s):
        lg = np.log1p(s)
        base = np.power(s, -self.k1) * np.power(lg, -self.k2)
        return base * (-self.k1 / s - self.k2 / (lg * (1.0 + s)))

    def gamma_inf(self):
        return 0.0

    def gamma_sup(self):
        return math.inf  # s -> 0+: both factors blow up

    def gamma_lo(self):
        return 0.0

    def a4_witness(self):
        # liminf s^k1 * gamma = 0 because of the log factor; any exponent
        # strictly above k1 works for the lower envelope.  0.5 is recorded
        # as the conventional offset.
        return (self.k1 + 0.5, self.k1)

    def growth_liminf(self, chi):
        return math.inf


@dataclass(frozen=True)
class BoundedOscillatory(MotilityFamily):
    """gamma(s) = a + b*sin(omega*s): two-sided bounds, sign-changing derivative."""

    a: float
    b: float
    omega: float

    def __post_init__(self):
        _require(self.a > self.b >= 0, "bounded oscillatory motility requires a > b >= 0")
        _require(self.omega > 0, "bounded oscillatory motility requires omega > 0")

    def _gamma(self, s):
        return self.a + self.b * np.sin(self.omega * s)

    def _dgamma(self, s):
        return self.b * self.omega * np.cos(self.omega * s)

    def gamma_inf(self):
        return self.a + self.b if self.b > 0 else self.a

    def gamma_sup(self):
        return self.a + self.b

    def gamma_lo(self):
        return self.a - self.b

    def a4_witness(self):
        return (0.0, 0.0)

    def growth_liminf(self, chi):
        return math.inf


@dataclass(frozen=True)
class PeakedNonMonotonic(MotilityFamily):
    """gamma(s) = c + M / (1 + ((s - s0)/sigma)^2).

    A Lorentzian bump: arbitrarily large near s0 while the tail value c stays
    small, so the global sup and the limsup at infinity differ.
    """

    c: float
    m: float
    s0: float
    sigma: float

    def __post_init__(self):
        _require(self.c >= 0, "peaked motility requires c >= 0")
        _require(self.m > 0, "peaked motility requires M > 0")
        _require(self.s0 > 0 and self.sigma > 0, "peaked motility requires s0, sigma > 0")

    def _gamma(self, s):
        q = (s - self.s0) / self.sigma
        return self.c + self.m / (1.0 + q * q)

    def _dgamma(self, s):
        q = (s - self.s0) / self.sigma
        return -2.0 * self.m * q / (self.sigma * (1.0 + q * q) ** 2)

    def gamma_inf(self):
        return self.c

    def gamma_sup(self):
        return self.c + self.m  # attained at s = s0

    def gamma_lo(self):
        return self.c

    def a4_witness(self):
        if self.c > 0:
            return (0.0, 0.0)
        # Pure Lorentzian tail ~ M*sigma^2 / s^2.
        return (2.0, 2.0)

    def growth_liminf(self, chi):
        return math.inf


KIND_BY_CLASS = {
    Exponential: "exponential",
    StretchedExponential: "stretched_exponential",
    Algebraic: "algebraic",
    AlgebraicLog: "algebraic_log",
    BoundedOscillatory: "bounded_oscillatory",
    PeakedNonMonotonic: "peaked",
}

CLASS_BY_KIND = {v: k for k, v in KIND_BY_CLASS.items()}


def gamma_eval(family: MotilityFamily, s):
    """Evaluate gamma(s); s must be strictly positive (scalar or array)."""
    return family.gamma(s)


def gamma_deriv(family: MotilityFamily, s):
    """Evaluate the analytic derivative gamma'(s)."""
    return family.dgamma(s)


@dataclass(frozen=True)
class AssumptionReport:
    assumption: str
    holds: bool
    witnesses: dict
    method: str  # "closed-form" or "numeric-probe"
    range_limited: bool = False
    note: str = ""


DEFAULT_PROBE = (1e-3, 1e6, 10_000)


def _probe_grid(probe):
    lo, hi, n = probe
    if not (0 < lo < hi) or n < 16:
        raise DomainError("probe range must satisfy 0 < lo < hi with n >= 16")
    return np.logspace(math.log10(lo), math.log10(hi), int(n))


def check_assumption(family: MotilityFamily, assumption: str, tau: float | None = None,
                     chi: float | None = None, probe=DEFAULT_PROBE,
                     method: str = "closed-form") -> AssumptionReport:
    """Decide whether `family` satisfies one of the structural assumptions.

    All shipped families have closed-form answers; `method="numeric-probe"`
    forces evaluation on a log-spaced grid instead, with witnesses flagged as
    range-limited.
    """
    if assumption not in ASSUMPTIONS:
        raise DomainError(f"unknown assumption id {assumption!r}; expected one of {ASSUMPTIONS}")
    if assumption == "A1" and (tau is None or tau <= 0):
        raise DomainError("A1 requires tau > 0")
    if assumption == "GrowthCond" and (chi is None or chi <= 0):
        raise DomainError("GrowthCond requires chi > 0")
    if method == "numeric-probe":
        return _probe_assumption(family, assumption, tau, chi, probe)
    if method != "closed-form":
        raise DomainError(f"unknown method {method!r}")

    if assumption == "A1":
        g_inf = family.gamma_inf()
        return AssumptionReport("A1", g_inf < 1.0 / tau,
                                {"gamma_inf": g_inf, "gamma_sup": family.gamma_sup(),
                                 "tau": tau, "threshold": 1.0 / tau},
                                "closed-form")
    if assumption == "A2":
        lo, hi = family.gamma_lo(), family.gamma_sup()
        return AssumptionReport("A2", lo > 0 and math.isfinite(hi),
                                {"gamma_lo": lo, "gamma_hi": hi}, "closed-form")
    if assumption == "A4":
        wit = family.a4_witness()
        if wit is None:
            return AssumptionReport("A4", False, {}, "closed-form",
                                    note="decays faster than any algebraic rate")
        k, l = wit
        return AssumptionReport("A4", True, {"k": k, "l": l}, "closed-form")
    # GrowthCond
    liminf = family.growth_liminf(chi)
    return AssumptionReport("GrowthCond", liminf > 0, {"chi": chi, "liminf": liminf},
                            "closed-form")


def _probe_assumption(family, assumption, tau, chi, probe):
    s = _probe_grid(probe)
    g = family.gamma(s)
    tail = s >= probe[1] / 10.0  # last decade approximates the behaviour at infinity
    if assumption == "A1":
        g_inf = float(np.max(g[tail]))
        return AssumptionReport("A1", g_inf < 1.0 / tau,
                                {"gamma_inf": g_inf, "gamma_sup": float(np.max(g)),
                                 "tau": tau, "threshold": 1.0 / tau},
                                "numeric-probe", range_limited=True)
    if assumption == "A2":
        lo, hi = float(np.min(g)), float(np.max(g))
        return AssumptionReport("A2", lo > TINY_GAMMA * 10, {"gamma_lo": lo, "gamma_hi": hi},
                                "numeric-probe", range_limited=True)
    if assumption == "A4":
        # Estimate the algebraic decay rate from the tail slope in log-log.
        lt, lg = np.log(s[tail]), np.log(g[tail])
        k_est = -float(np.polyfit(lt, lg, 1)[0])
        if k_est < -0.05:
            return AssumptionReport("A4", False, {"k_est": k_est}, "numeric-probe",
                                    range_limited=True, note="gamma grows at infinity")
        k_est = max(k_est, 0.0)
        liminf = float(np.min(np.power(s[tail], k_est) * g[tail]))
        limsup = float(np.max(np.power(s[tail], k_est) * g[tail]))
        return AssumptionReport("A4", liminf > TINY_GAMMA * 10,
                                {"k": k_est, "l": k_est, "liminf": liminf, "limsup": limsup},
                                "numeric-probe", range_limited=True)
    # GrowthCond, evaluated in log space to dodge overflow of e^(chi*s).
    log_vals = chi * s[tail] + np.log(np.maximum(g[tail], TINY_GAMMA))
    log_liminf = float(np.min(log_vals))
    liminf = math.inf if log_liminf > 709 else math.exp(log_liminf)
    return AssumptionReport("GrowthCond", log_liminf > math.log(TINY_GAMMA * 10),
                            {"chi": chi, "liminf": liminf, "log_liminf": log_liminf},
                            "numeric-probe", range_limited=True)


@dataclass(frozen=True)
class EnvelopeReport:
    """Fitted constants for the two-sided algebraic envelope
    c1 * s^(-k) <= gamma(s) <= c2 * s^(-l) on [lo, hi]."""

    k: float
    l: float
    c1: float
    c2: float
    lo: float
    hi: float
    holds: bool


def algebraic_envelope(family: MotilityFamily, k: float, l: float,
                       lo: float = 1e-2, hi: float = 1e4, n: int = 4096) -> EnvelopeReport:
    """Fit the tightest constants for the algebraic envelope on a probe range.

    Accepts externally supplied (k, l) pairs, so families whose tails oscillate
    between two different algebraic rates can still be probed.
    """
    if k < l or l < 0:
        raise DomainError("envelope requires k >= l >= 0")
    s = _probe_grid((lo, hi, n))
    g = family.gamma(s)
    c1 = float(np.min(g * np.power(s, k)))
    c2 = float(np.max(g * np.power(s, l)))
    return EnvelopeReport(k, l, c1, c2, lo, hi, holds=c1 > TINY_GAMMA * 10 and math.isfinite(c2))
