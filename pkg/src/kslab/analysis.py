"""Diagnostics: the auxiliary field w, identity residuals, energies, norm
ladders, two-sided ratio bounds, exponential integrability, and the
bounded/growing classifier for whole runs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .discretization import Grid, LinOp, helmholtz_solve, laplacian
from .errors import DomainError, FormatError
from .linsolve import LuSolver
from .motility import MotilityFamily

#: Frozen diagnostics CSV schema; extras are kept in memory only.
COLUMNS = ("t", "dt", "mass", "u_min", "u_max", "v_min", "v_max", "w_min", "w_max",
           "uinf", "w_l2", "w_l4", "w_l8", "w_l16", "energy", "dissipation",
           "ratio_min", "ratio_max", "key_resid")

LP_LEVELS = (2, 4, 8, 16)


class RunDiagnostics:
    """Per-record time series of masses, extrema, norms, energies and ratios."""

    def __init__(self):
        self._rows = {c: [] for c in COLUMNS}
        self.extras = {"w2_over_gamma": [], "envelope_margin": [], "vgrad_inf": []}

    def __len__(self):
        return len(self._rows["t"])

    def column(self, name: str) -> np.ndarray:
        if name not in self._rows:
            raise DomainError(f"unknown diagnostics column {name!r}")
        return np.asarray(self._rows[name], dtype=float)

    def append_record(self, grid: Grid, t, dt, u, v, w, key_resid, gamma_v) -> None:
        vol = grid.cell_volume
        row = {
            "t": t, "dt": dt,
            "mass": float(u.sum()) * vol,
            "u_min": float(u.min()), "u_max": float(u.max()),
            "v_min": float(v.min()), "v_max": float(v.max()),
            "w_min": float(w.min()), "w_max": float(w.max()),
            "uinf": float(np.max(np.abs(u))),
            "energy": float(np.dot(w, u)) * vol,
            "dissipation": float(np.sum(u * u * gamma_v)) * vol,
            "ratio_min": float(np.min(v / w)), "ratio_max": float(np.max(v / w)),
            "key_resid": key_resid,
        }
        for p in LP_LEVELS:
            row[f"w_l{p}"] = float(np.sum(np.abs(w) ** p) * vol) ** (1.0 / p)
        if len(self) and t <= self._rows["t"][-1]:
            raise DomainError("diagnostic records must be strictly increasing in t")
        for c in COLUMNS:
            self._rows[c].append(float(row[c]))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(COLUMNS) + "\n")
            for i in range(len(self)):
                fh.write(",".join(repr(self._rows[c][i]) for c in COLUMNS) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RunDiagnostics":
        diag = cls()
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise FormatError(f"{path}: diagnostics header mismatch")
            for row in reader:
                if len(row) != len(COLUMNS):
                    raise FormatError(f"{path}: ragged diagnostics row")
                for c, val in zip(COLUMNS, row):
                    diag._rows[c].append(float(val))
        return diag


def compute_w(L: LinOp, u, tol: float = 1e-10) -> np.ndarray:
    """Auxiliary field w = (I - L)^{-1} u for nonnegative u."""
    arr = L.grid.check_field(u, "u")
    if float(arr.min()) < -1e-12:
        raise DomainError("compute_w expects u >= 0")
    return helmholtz_solve(L.grid, L, arr, tol=tol)


def key_identity_residual(grid: Grid, L: LinOp, w_prev, w_next, u_next, v_gamma,
                          dt: float, family: MotilityFamily, tol: float = 1e-10,
                          gamma_v=None) -> float:
    """Max-norm defect of the discrete resolvent identity

        (w_next - w_prev)/dt + g - (I - L)^{-1} g,   g = gamma(v) * u_next.

    For the shipped scheme with gamma frozen at the step's starting v this
    vanishes up to linear-solver error; evaluating gamma at the new v instead
    leaves an O(dt) remainder.
    """
    w_prev = grid.check_field(w_prev, "w_prev")
    w_next = grid.check_field(w_next, "w_next")
    u_next = grid.check_field(u_next, "u_next")
    if dt <= 0:
        raise DomainError("dt must be positive")
    gv = np.asarray(gamma_v) if gamma_v is not None else np.asarray(family.gamma(v_gamma))
    g = gv * u_next
    z = helmholtz_solve(grid, L, g, tol=tol)
    return float(np.max(np.abs((w_next - w_prev) / dt + g - z)))


def energy_h1(grid: Grid, L: LinOp, u, v, family: MotilityFamily, w=None,
              tol: float = 1e-10):
    """(E, dissipation) with E = sum(w*u)*vol and dissipation = sum(u^2 gamma(v))*vol.

    E equals the H1 energy ||grad w||^2 + ||w||^2 exactly at the operator
    level, because sum(w*u) = sum(w*(I-L)w) and -L is the discrete Dirichlet
    form; no gradient quadrature is involved.
    """
    u = grid.check_field(u, "u")
    v = grid.check_field(v, "v")
    if w is None:
        w = compute_w(L, u, tol=tol)
    vol = grid.cell_volume
    return float(np.dot(w, u)) * vol, float(np.sum(u * u * np.asarray(family.gamma(v)))) * vol


def _lsq_slope(t: np.ndarray, y: np.ndarray) -> float:
    if len(t) < 2:
        return math.nan
    return float(np.polyfit(t, y, 1)[0])


def _trailing_window(t: np.ndarray):
    t_mid = t[0] + 0.5 * (t[-1] - t[0])
    return t >= t_mid


# -- Lp ladder ----------------------------------------------------------------

@dataclass(frozen=True)
class LadderLevel:
    p: int
    sup: float
    slope: float
    passes: bool


@dataclass(frozen=True)
class LadderReport:
    levels: tuple
    inconclusive: bool


def lp_ladder(diag: RunDiagnostics, K: int = 4, slope_tol: float = 1e-3) -> LadderReport:
    """Per-level suprema of ||w||_{2^k} with their trailing-half slopes.

    A level passes when its slope over the trailing half of the run stays
    below `slope_tol` per unit time.
    """
    if not (1 <= K <= 8):
        raise DomainError("K must lie in 1..8")
    if 2 ** K > max(LP_LEVELS):
        raise DomainError(f"diagnostics record levels up to p={max(LP_LEVELS)}")
    t = diag.column("t")
    inconclusive = len(t) < 8
    levels = []
    for k in range(1, K + 1):
        p = 2 ** k
        y = diag.column(f"w_l{p}")
        if inconclusive:
            levels.append(LadderLevel(p, float(np.max(y)) if len(y) else math.nan,
                                      math.nan, False))
            continue
        win = _trailing_window(t)
        slope = _lsq_slope(t[win], y[win])
        levels.append(LadderLevel(p, float(np.max(y)), slope, abs(slope) <= slope_tol))
    return LadderReport(tuple(levels), inconclusive)


# -- two-sided ratio ----------------------------------------------------------

@dataclass(frozen=True)
class RatioReport:
    a_est: float       # inf over records of min(v/w)
    b_est: float       # sup over records of max(v/w)
    trend: float       # slope of max(v/w) over the trailing half
    n_records: int


def two_sided_ratio(diag: RunDiagnostics, burn_in: float = 1.0) -> RatioReport:
    """Empirical constants for the two-sided control A*w <= v <= B*w."""
    t = diag.column("t")
    keep = t >= burn_in
    if int(keep.sum()) < 2:
        return RatioReport(math.nan, math.nan, math.nan, int(keep.sum()))
    t = t[keep]
    rmin = diag.column("ratio_min")[keep]
    rmax = diag.column("ratio_max")[keep]
    win = _trailing_window(t)
    return RatioReport(float(rmin.min()), float(rmax.max()),
                       _lsq_slope(t[win], rmax[win]), len(t))


# -- Gamma primitive ----------------------------------------------------------

def gamma_big(s, l: float):
    """Integral of eta^(-l) from 1 to s: (s^(1-l)-1)/(1-l), or log s at l = 1."""
    if l < 0:
        raise DomainError("gamma_big requires l >= 0")
    arr = np.asarray(s, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("gamma_big requires s > 0")
    if l == 1.0:
        out = np.log(arr)
    else:
        out = np.expm1((1.0 - l) * np.log(arr)) / (1.0 - l)
    return float(out) if np.ndim(s) == 0 else out


# -- energy inequality --------------------------------------------------------

@dataclass(frozen=True)
class EnergyReport:
    c_cal: float
    worst_validation_ratio: float  # max over validation pairs of LHS/(c_cal*RHS)
    ok: bool
    n_pairs: int


def energy_inequality_check(diag: RunDiagnostics, calib_frac: float = 0.25,
                            slack: float = 2.0) -> EnergyReport:
    """Fit C in  dE/dt + E + dissipation <= C * sum(w^2/gamma(v))  on the first
    quarter of record pairs and validate it with the given slack on the rest."""
    t = diag.column("t")
    if len(t) < 8:
        raise DomainError("energy check needs at least 8 records")
    E = diag.column("energy")
    D = diag.column("dissipation")
    rhs = np.asarray(diag.extras["w2_over_gamma"], dtype=float)
    if len(rhs) != len(t):
        raise DomainError("energy check needs the in-memory w2_over_gamma series")
    lhs = (E[1:] - E[:-1]) / (t[1:] - t[:-1]) + E[1:] + D[1:]
    rhs = rhs[1:]
    t_pair = t[1:]
    split = t[0] + calib_frac * (t[-1] - t[0])
    calib = t_pair <= split
    if not calib.any() or calib.all():
        raise DomainError("calibration window is degenerate")
    c_cal = max(float(np.max(lhs[calib] / rhs[calib])), 1e-12)
    ratios = lhs[~calib] / (c_cal * rhs[~calib])
    worst = float(np.max(ratios))
    return EnergyReport(c_cal, worst, worst <= slack, len(lhs))


# -- key inequality -----------------------------------------------------------

@dataclass(frozen=True)
class KeyIneqReport:
    alpha_cal: float
    c3_cal: float
    alpha_full: float
    c3_full: float
    stable: bool
    n_pairs: int


def key_inequality_check(times, w_fields, u_fields, k: float, l: float,
                         c1: float, b_est: float, burn_in: float = 1.0,
                         calib_frac: float = 0.5, slack: float = 2.0) -> KeyIneqReport:
    """Fit the smallest (alpha, C3) with

        w_t + c1 * B^(-k) * w^(-k) * u  <=  alpha * (Gamma(w) + C3)

    over the calibration window, then refit on the full run; the constants of
    a genuinely time-uniform bound stay within `slack` of each other.
    """
    if c1 <= 0 or b_est <= 0:
        raise DomainError("key inequality needs positive envelope and ratio constants")
    times = np.asarray(times, dtype=float)
    if len(times) != len(w_fields) or len(times) != len(u_fields) or len(times) < 4:
        raise DomainError("need matching per-record fields (run with keep_fields)")
    pairs = [(i, i + 1) for i in range(len(times) - 1) if times[i] >= burn_in]
    if len(pairs) < 4:
        raise DomainError("too few record pairs past burn-in")
    coef = c1 * b_est ** (-k)

    def fit(subset):
        min_gamma = min(float(np.min(gamma_big(w_fields[j], l))) for _, j in subset)
        c3 = 1.0 + max(0.0, -min_gamma)
        alpha = 0.0
        for i, j in subset:
            dt = times[j] - times[i]
            w_t = (w_fields[j] - w_fields[i]) / dt
            lhs = w_t + coef * np.power(w_fields[j], -k) * u_fields[j]
            alpha = max(alpha, float(np.max(lhs / (gamma_big(w_fields[j], l) + c3))))
        return max(alpha, 0.0), c3

    t_lo = times[pairs[0][0]]
    split = t_lo + calib_frac * (times[-1] - t_lo)
    calib = [p for p in pairs if times[p[1]] <= split]
    if len(calib) < 2 or len(calib) == len(pairs):
        raise DomainError("calibration window is degenerate")
    alpha_cal, c3_cal = fit(calib)
    alpha_full, c3_full = fit(pairs)
    stable = (alpha_full <= slack * alpha_cal + 1e-12) and (c3_full <= slack * c3_cal + 1e-12)
    return KeyIneqReport(alpha_cal, c3_cal, alpha_full, c3_full, stable, len(pairs))


# -- exponential integrability ------------------------------------------------

@dataclass(frozen=True)
class BMValue:
    value: float
    log_value: float
    lam: float  # ||f||_1


def brezis_merle_value(grid: Grid, L: LinOp, f, R: float, tol: float = 1e-10) -> BMValue:
    """sum(exp(R*z))*h^d for z = (I-L)^{-1} f, evaluated in log-sum-exp form."""
    if grid.dim != 2:
        raise DomainError("exponential integrability check is two-dimensional")
    arr = grid.check_field(f, "f")
    if float(arr.min()) < 0 or not np.any(arr > 0):
        raise DomainError("f must be nonnegative with positive mass")
    lam = float(arr.sum()) * grid.cell_volume
    z = helmholtz_solve(grid, L, arr, tol=tol)
    expo = R * z
    m = float(np.max(expo))
    log_value = m + math.log(float(np.sum(np.exp(expo - m)))) + math.log(grid.cell_volume)
    value = math.inf if log_value > 700 else math.exp(log_value)
    return BMValue(value, log_value, lam)


@dataclass(frozen=True)
class BMRefinement:
    coarse: BMValue
    fine: BMValue
    rel_change: float


def brezis_merle_check(make_field, grid: Grid, R: float, tol: float = 1e-10) -> BMRefinement:
    """Evaluate the exponential integral on `grid` and on its uniform refinement.

    `make_field(grid)` must rebuild the source on any grid, so concentration
    profiles can track the resolution.  Subcritical R leaves the value stable
    under refinement; supercritical R with near-singular sources does not.
    """
    coarse = brezis_merle_value(grid, laplacian(grid), make_field(grid), R, tol=tol)
    fine_grid = Grid(grid.lengths, tuple(2 * n for n in grid.counts))
    fine = brezis_merle_value(fine_grid, laplacian(fine_grid), make_field(fine_grid), R, tol=tol)
    rel_change = float(math.expm1(fine.log_value - coarse.log_value))
    return BMRefinement(coarse, fine, rel_change)


# -- run classification -------------------------------------------------------

@dataclass(frozen=True)
class ClassifyThresholds:
    bounded_variation: float = 0.05
    bounded_slope: float = 1e-3
    growing_slope: float = 1e-2
    growing_monotone: float = 0.9


@dataclass(frozen=True)
class Classification:
    verdict: str  # "Bounded" | "Growing" | "Inconclusive"
    log_slope: float
    monotone_fraction: float
    rel_variation: float
    n_window: int


def classify_run(t, uinf, thresholds: ClassifyThresholds | None = None) -> Classification:
    """Classify the sup-norm trace over the trailing half-window.

    Depends only on the log-slope, the monotone fraction and the relative
    variation, so it is invariant under positive rescaling of the series.
    """
    th = thresholds or ClassifyThresholds()
    t = np.asarray(t, dtype=float)
    y = np.asarray(uinf, dtype=float)
    if len(t) != len(y):
        raise DomainError("t and uinf must have equal length")
    if len(t) < 16:
        return Classification("Inconclusive", math.nan, math.nan, math.nan, len(t))
    win = _trailing_window(t)
    tw, yw = t[win], np.maximum(y[win], 1e-300)
    if len(tw) < 4:
        return Classification("Inconclusive", math.nan, math.nan, math.nan, len(tw))
    log_slope = _lsq_slope(tw, np.log(yw))
    steps = np.diff(yw)
    monotone = float(np.mean(steps >= -1e-12 * yw[:-1])) if len(steps) else math.nan
    rel_var = float((yw.max() - yw.min()) / max(yw.mean(), 1e-300))
    if rel_var < th.bounded_variation and abs(log_slope) < th.bounded_slope:
        verdict = "Bounded"
    elif log_slope > th.growing_slope and monotone > th.growing_monotone:
        verdict = "Growing"
    else:
        verdict = "Inconclusive"
    return Classification(verdict, log_slope, monotone, rel_var, len(tw))


# -- flux-form cross-check ----------------------------------------------------

def _face_pairs(grid: Grid, axis: int):
    idx = np.arange(grid.n_cells).reshape(grid.counts)
    sl_left = [slice(None)] * grid.dim
    sl_left[axis] = slice(0, grid.counts[axis] - 1)
    sl_right = [slice(None)] * grid.dim
    sl_right[axis] = slice(1, grid.counts[axis])
    return idx[tuple(sl_left)].ravel(), idx[tuple(sl_right)].ravel()


def flux_form_operator(grid: Grid, family: MotilityFamily, v) -> sparse.csr_matrix:
    """Face-averaged discretization of div(gamma(v) grad u + u gamma'(v) grad v)."""
    v = grid.check_field(v, "v")
    gam = np.asarray(family.gamma(v))
    dgam = np.asarray(family.dgamma(v))
    rows, cols, vals = [], [], []
    for axis, h in enumerate(grid.spacing):
        li, ri = _face_pairs(grid, axis)
        a = 0.5 * (gam[li] + gam[ri]) / (h * h)
        q = 0.5 * (dgam[li] + dgam[ri]) * (v[ri] - v[li]) / (2.0 * h * h)
        rows.extend([li, li, ri, ri])
        cols.extend([li, ri, li, ri])
        vals.extend([-a + q, a + q, a - q, -a - q])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sparse.coo_matrix((vals, (rows, cols)),
                             shape=(grid.n_cells, grid.n_cells)).tocsr()


def flux_form_crosscheck(grid: Grid, L: LinOp, family: MotilityFamily, u, v,
                         dt: float, tol: float = 1e-12) -> float:
    """One implicit step of L(gamma(v)u) versus the face-averaged flux form.

    On smooth states the schemes agree to O(h^2)*dt plus O(dt^2); with
    constant gamma they coincide up to solver tolerance.
    """
    u = grid.check_field(u, "u")
    gamma_v = np.asarray(family.gamma(grid.check_field(v, "v")))
    eye = sparse.identity(grid.n_cells, format="csr")
    M_direct = (eye - dt * (L.mat @ sparse.diags(gamma_v))).tocsr()
    M_flux = (eye - dt * flux_form_operator(grid, family, v)).tocsr()
    u_direct, _ = LuSolver(M_direct).solve(u, rtol=tol)
    u_flux, _ = LuSolver(M_flux).solve(u, rtol=tol)
    return float(np.max(np.abs(u_direct - u_flux)))
