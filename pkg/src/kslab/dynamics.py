"""Time integration of the cross-diffusion system

    u_t = L(gamma(v) u),        tau v_t - L v + v = u,

with gamma frozen at the current v inside each step:

    (I - dt L D) u_new = u_old,               D = diag(gamma(v_old)),
    ((tau + dt) I - dt L) v_new = tau v_old + dt u_new.

Both matrices are M-matrices with unit-scaled column sums, so each step
conserves the total mass of u exactly and keeps u >= 0, v > 0.  The scheme
also satisfies, in exact arithmetic,

    (w_new - w_old)/dt + g - (I - L)^{-1} g = 0,   g = gamma(v_old) u_new,

with w = (I - L)^{-1} u, because (I - L)^{-1} L = -I + (I - L)^{-1}.  That
resolvent identity is the structural backbone every diagnostic leans on.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import analysis
from .discretization import Grid, LinOp, helmholtz_solve
from .errors import ConfigError, DomainError, NumericalError
from .linsolve import LuSolver, bicgstab, iteration_cap
from .motility import MotilityFamily

POSITIVITY_GATE = 50.0  # negatives beyond gate*tol*||u|| mean the solve is bad


@dataclass
class SimParams:
    tau: float
    dt_init: float = 0.05
    dt_min: float = 1e-6
    dt_max: float = 0.25
    t_end: float = 10.0
    u_cap: float | None = None        # absolute cap on ||u||_inf
    u_cap_factor: float = 1e6         # used when u_cap is None
    solver_tol: float = 1e-10
    record_every: int | None = 1      # steps between records
    record_dt: float | None = None    # or a time interval (exclusive with record_every)
    keep_fields: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ConfigError("need 0 < dt_min <= dt_init <= dt_max")
        if self.t_end <= 0:
            raise ConfigError("t_end must be positive")
        if self.solver_tol <= 0:
            raise ConfigError("solver_tol must be positive")
        if (self.record_every is None) == (self.record_dt is None):
            raise ConfigError("exactly one of record_every / record_dt must be set")
        if self.record_every is not None and self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if self.record_dt is not None and self.record_dt <= 0:
            raise ConfigError("record_dt must be positive")


@dataclass
class State:
    t: float
    u: np.ndarray
    v: np.ndarray


@dataclass
class StepInfo:
    dt: float
    u_resid: float
    v_resid: float
    u_iters: int
    gamma_v: np.ndarray  # gamma(v_old), the frozen diffusivity of the step
    clipped: int


# -- initial data -------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float

    def build(self, grid: Grid, seed: int = 0) -> np.ndarray:
        return np.full(grid.n_cells, float(self.value))


@dataclass(frozen=True)
class GaussianBump:
    """Bump normalized so the discrete cell sum equals `mass` exactly."""

    mass: float
    width: float | None = None        # physical standard deviation
    width_cells: float | None = None  # alternative: multiples of the spacing
    center: tuple | None = None

    def build(self, grid: Grid, seed: int = 0) -> np.ndarray:
        if self.mass <= 0:
            raise ConfigError("gaussian mass must be positive")
        if (self.width is None) == (self.width_cells is None):
            raise ConfigError("gaussian needs exactly one of width / width_cells")
        sigma = self.width if self.width is not None else self.width_cells * max(grid.spacing)
        if sigma <= 0:
            raise ConfigError("gaussian width must be positive")
        center = self.center or tuple(L / 2 for L in grid.lengths)
        if len(center) != grid.dim:
            raise ConfigError("gaussian center dimension mismatch")
        r2 = np.zeros(grid.n_cells)
        for x, c in zip(grid.coords(), center):
            r2 += (x - c) ** 2
        g = np.exp(-r2 / (2.0 * sigma * sigma))
        total = g.sum() * grid.cell_volume
        if total <= 0:
            raise ConfigError("gaussian underflowed to zero on this grid")
        return g * (self.mass / total)


@dataclass(frozen=True)
class CosinePerturbation:
    mean: float
    amplitude: float
    mode: int = 1

    def build(self, grid: Grid, seed: int = 0) -> np.ndarray:
        out = np.full(grid.n_cells, float(self.mean))
        wave = np.ones(grid.n_cells)
        for x, L in zip(grid.coords(), grid.lengths):
            wave = wave * np.cos(self.mode * math.pi * x / L)
        return out + self.amplitude * wave


@dataclass(frozen=True)
class SeededNoise:
    mean: float
    amplitude: float
    seed: int = 0

    def build(self, grid: Grid, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(self.seed + seed)
        return self.mean + self.amplitude * rng.uniform(-1.0, 1.0, grid.n_cells)


InitialData = Constant | GaussianBump | CosinePerturbation | SeededNoise


def build_initial(grid: Grid, u_spec: InitialData, v_spec: InitialData, seed: int = 0):
    """Materialize and validate the initial pair (u0 >= 0, u0 != 0, v0 > 0)."""
    u0 = grid.check_field(u_spec.build(grid, seed), "u0")
    v0 = grid.check_field(v_spec.build(grid, seed), "v0")
    if np.any(u0 < 0) or not np.any(u0 > 0):
        raise ConfigError("u0 must be nonnegative and not identically zero")
    if np.any(v0 <= 0):
        raise ConfigError("v0 must be strictly positive")
    return u0, v0


# -- stepping -----------------------------------------------------------------

class Stepper:
    """Advances one state by one IMEX step; owns the factorization caches."""

    def __init__(self, grid: Grid, L: LinOp, family: MotilityFamily, tau: float,
                 solver_tol: float = 1e-12, u_method: str = "auto",
                 u_maxiter: int | None = None):
        self.grid = grid
        self.L = L
        self.family = family
        self.tau = tau
        self.tol = solver_tol           # accepted residual level (contract)
        self.aim = solver_tol * 1e-2    # what the solvers actually target
        self.u_method = u_method  # "auto" (Krylov + LU fallback), "iterative", "direct"
        self.u_maxiter = u_maxiter
        self._eye = sparse.identity(grid.n_cells, format="csr")
        self._v_lu: OrderedDict[float, LuSolver] = OrderedDict()

    def _v_solver(self, dt: float) -> LuSolver:
        lu = self._v_lu.get(dt)
        if lu is None:
            A = ((self.tau + dt) * self._eye - dt * self.L.mat).tocsr()
            lu = LuSolver(A)
            self._v_lu[dt] = lu
            if len(self._v_lu) > 8:
                self._v_lu.popitem(last=False)
        return lu

    def step_u(self, u: np.ndarray, gamma_v: np.ndarray, dt: float):
        """Solve (I - dt L D) u_new = u, then enforce exact positivity and mass."""
        M = (self._eye - dt * (self.L.mat @ sparse.diags(gamma_v))).tocsr()
        bnorm = float(np.max(np.abs(u)))
        cap = self.u_maxiter if self.u_maxiter is not None else iteration_cap(self.grid.n_cells)
        iters = 0
        if self.u_method == "direct":
            u_new, resid = LuSolver(M).solve(u, rtol=self.aim)
        else:
            u_new, resid, iters, ok = bicgstab(M, u, x0=u, rtol=self.aim, maxiter=cap)
            if not ok and resid > self.tol * max(bnorm, 1e-300):
                if self.u_method == "iterative":
                    raise NumericalError("u-step solve did not converge", residual=resid)
                u_new, resid = LuSolver(M).solve(u, rtol=self.aim)
        if resid > self.tol * max(bnorm, 1e-300):
            raise NumericalError("u-step solve did not converge", residual=resid)

        # Solver noise can leave negatives of residual size; anything larger
        # means the solve is untrustworthy.  Clip then restore the exact mass.
        clipped = 0
        umin = float(u_new.min())
        if umin < 0.0:
            if umin < -POSITIVITY_GATE * self.tol * max(bnorm, 1.0):
                raise NumericalError("u-step positivity violated beyond solver tolerance",
                                     residual=-umin)
            clipped = int(np.count_nonzero(u_new < 0.0))
            u_new = np.maximum(u_new, 0.0)
        m_old = float(u.sum())
        m_new = float(u_new.sum())
        if m_new > 0.0 and m_new != m_old:
            u_new *= m_old / m_new
        return u_new, resid, iters, clipped

    def step_v(self, u_new: np.ndarray, v: np.ndarray, dt: float):
        b = self.tau * v + dt * u_new
        bnorm = float(np.max(np.abs(b)))
        solver = self._v_solver(dt)
        # At steady states the previous v already solves the system exactly;
        # keeping it bit-for-bit avoids factorization round-off creeping in.
        resid0 = float(np.max(np.abs(b - solver.A @ v)))
        if resid0 <= self.aim * bnorm:
            return v.copy(), resid0
        v_new, resid = solver.solve(b, rtol=self.aim)
        if resid > self.tol * bnorm:
            raise NumericalError("v-step solve did not converge", residual=resid)
        if float(v_new.min()) <= 0.0:
            raise NumericalError("v lost positivity", residual=float(v_new.min()))
        return v_new, resid

    def step(self, state: State, dt: float) -> tuple[State, StepInfo]:
        if dt <= 0:
            raise DomainError("dt must be positive")
        gamma_v = np.asarray(self.family.gamma(state.v))
        u_new, u_resid, iters, clipped = self.step_u(state.u, gamma_v, dt)
        v_new, v_resid = self.step_v(u_new, state.v, dt)
        return (State(state.t + dt, u_new, v_new),
                StepInfo(dt, u_resid, v_resid, iters, gamma_v, clipped))


def step_imex(state: State, params: SimParams, grid: Grid, L: LinOp,
              family: MotilityFamily, dt: float | None = None) -> State:
    """One step of the scheme; convenience wrapper around Stepper."""
    dt = params.dt_init if dt is None else dt
    if not (params.dt_min <= dt <= params.dt_max):
        raise DomainError("dt outside [dt_min, dt_max]")
    stepper = Stepper(grid, L, family, params.tau, params.solver_tol)
    new_state, _ = stepper.step(state, dt)
    return new_state


def adapt_dt(dt: float, rel_change: float, params: SimParams) -> float:
    """Halve after >10% per-step change of ||u||_inf, grow 1.2x below 1%."""
    if rel_change > 0.10:
        dt = dt / 2.0
    elif rel_change < 0.01:
        dt = dt * 1.2
    return min(max(dt, params.dt_min), params.dt_max)


# -- full runs ----------------------------------------------------------------

COMPLETED = "completed"
BLOWUP_SUSPECTED = "blowup_suspected"
CAP_EXCEEDED = "cap_exceeded"


@dataclass
class RunResult:
    status: str
    state: State
    diag: "analysis.RunDiagnostics"
    w0: np.ndarray
    gamma_star_obs: float
    n_steps: int
    fields: list | None = None  # (t, u, v, w) per record when keep_fields


def run(grid: Grid, L: LinOp, family: MotilityFamily, params: SimParams,
        u0: np.ndarray, v0: np.ndarray) -> RunResult:
    """Advance from t=0 to t_end, or stop early on cap breach / step failure.

    Deterministic given its inputs.  Solver failures make the loop retry with
    a halved dt; falling below dt_min terminates with BLOWUP_SUSPECTED and the
    last accepted state.
    """
    u = grid.check_field(u0, "u0").copy()
    v = grid.check_field(v0, "v0").copy()
    if np.any(u < 0) or not np.any(u > 0) or np.any(v <= 0):
        raise ConfigError("initial data must satisfy u0 >= 0, u0 != 0, v0 > 0")
    uinf = float(u.max())
    u_cap = params.u_cap if params.u_cap is not None else params.u_cap_factor * uinf
    if u_cap <= uinf:
        raise ConfigError("u_cap must exceed the initial ||u||_inf")

    stepper = Stepper(grid, L, family, params.tau, params.solver_tol)
    vol = grid.cell_volume
    tol = params.solver_tol
    diag = analysis.RunDiagnostics()
    fields = [] if params.keep_fields else None

    w0 = helmholtz_solve(grid, L, u, tol=tol)
    log_w0 = np.log(np.maximum(w0, 1e-300))

    def record(t, dt, uu, vv, ww, resid):
        gv = np.asarray(family.gamma(vv))
        diag.append_record(grid, t, dt, uu, vv, ww, resid, gv)
        diag.extras["w2_over_gamma"].append(float(np.sum(ww * ww / gv)) * vol)
        diag.extras["envelope_margin"].append(
            float(np.max(np.log(np.maximum(ww, 1e-300)) - log_w0)))
        diag.extras["vgrad_inf"].append(_vgrad_inf(grid, vv))
        if fields is not None:
            fields.append((t, uu.copy(), vv.copy(), ww.copy()))

    record(0.0, 0.0, u, v, w0, 0.0)
    w_cache = w0  # w for the *current* u, valid right after a record

    state = State(0.0, u, v)
    gamma_star_obs = float(np.max(np.asarray(family.gamma(v))))
    dt = params.dt_init
    status = COMPLETED
    n_steps = 0
    next_rec_t = params.record_dt if params.record_dt is not None else math.inf
    t_eps = 1e-12 * params.t_end

    while state.t < params.t_end - t_eps:
        dt_try = min(dt, params.t_end - state.t)
        hits_end = state.t + dt_try >= params.t_end - t_eps
        if params.record_every is not None:
            due = ((n_steps + 1) % params.record_every == 0) or hits_end
        else:
            due = (state.t + dt_try >= next_rec_t - t_eps) or hits_end
        if due and w_cache is None:
            w_cache = helmholtz_solve(grid, L, state.u, tol=tol)
        try:
            new_state, info = stepper.step(state, dt_try)
        except NumericalError:
            dt = dt_try / 2.0
            if dt < params.dt_min:
                status = BLOWUP_SUSPECTED
                break
            continue
        n_steps += 1
        gamma_star_obs = max(gamma_star_obs, float(info.gamma_v.max()))
        uinf_new = float(new_state.u.max())
        rel_change = abs(uinf_new - uinf) / max(uinf, 1e-300)

        if due:
            w_new = helmholtz_solve(grid, L, new_state.u, tol=tol)
            resid = analysis.key_identity_residual(
                grid, L, w_cache, w_new, new_state.u, state.v, dt_try, stepper.family,
                tol=tol, gamma_v=info.gamma_v)
            record(new_state.t, dt_try, new_state.u, new_state.v, w_new, resid)
            w_cache = w_new
            if params.record_dt is not None:
                while next_rec_t <= new_state.t + t_eps:
                    next_rec_t += params.record_dt
        else:
            w_cache = None

        state, uinf = new_state, uinf_new
        if uinf > u_cap:
            status = CAP_EXCEEDED
            if not due:  # make sure the terminal state is on record
                w_new = helmholtz_solve(grid, L, state.u, tol=tol)
                record(state.t, dt_try, state.u, state.v, w_new, math.nan)
            break
        dt = adapt_dt(dt_try, rel_change, params)

    return RunResult(status, state, diag, w0, gamma_star_obs, n_steps, fields)


def _vgrad_inf(grid: Grid, v: np.ndarray) -> float:
    """Max face-difference quotient of v; an informational W^{1,inf} proxy."""
    shaped = v.reshape(grid.counts)
    worst = 0.0
    for axis, h in enumerate(grid.spacing):
        d = np.abs(np.diff(shaped, axis=axis)) / h
        if d.size:
            worst = max(worst, float(d.max()))
    return worst
