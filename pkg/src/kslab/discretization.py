"""Uniform cell-centered box grids and the discrete Neumann operators on them.

The Laplacian L uses the standard second-order stencil with reflecting
(Neumann) closure.  Off-diagonal entries are nonnegative and row sums vanish,
so I - L is an M-matrix: its inverse is entrywise nonnegative, preserves the
ordering of right-hand sides, acts as the identity on constants, and has unit
column sums.  Those four facts are what make every comparison-principle and
conservation check in this package exact rather than approximate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy import sparse

from .errors import DomainError, FormatError, NumericalError
from .linsolve import LuSolver, cg, iteration_cap

MAGIC = b"KSF1"


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box [0,L1]x...x[0,Ld] split into uniform cells."""

    lengths: tuple
    counts: tuple

    def __post_init__(self):
        if not (1 <= len(self.counts) <= 3) or len(self.lengths) != len(self.counts):
            raise DomainError("grid dimension must be 1, 2 or 3 with matching lengths/counts")
        if any(n < 2 for n in self.counts):
            raise DomainError("grids need at least 2 cells per axis")
        if any(length <= 0 for length in self.lengths):
            raise DomainError("grid lengths must be positive")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.counts))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.counts[axis]) + 0.5) * h

    def coords(self):
        """Flattened cell-center coordinates, one array per axis (C order)."""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return [m.ravel() for m in mesh]

    def check_field(self, f, name="field") -> np.ndarray:
        arr = np.ascontiguousarray(f, dtype=float).ravel()
        if arr.shape[0] != self.n_cells:
            raise DomainError(f"{name} has {arr.shape[0]} values, grid has {self.n_cells} cells")
        return arr


def build_grid(dim: int, lengths, counts) -> Grid:
    lengths = tuple(float(x) for x in lengths)
    counts = tuple(int(n) for n in counts)
    if len(lengths) != dim or len(counts) != dim:
        raise DomainError(f"expected {dim} lengths and counts")
    return Grid(lengths, counts)


def _lap1d(n: int, h: float) -> sparse.csr_matrix:
    c = 1.0 / (h * h)
    main = np.full(n, -2.0 * c)
    main[0] = main[-1] = -c  # reflecting closure
    off = np.full(n - 1, c)
    return sparse.diags([off, main, off], [-1, 0, 1], format="csr")


class LinOp:
    """Sparse symmetric Neumann Laplacian on a grid, plus cached factorizations."""

    def __init__(self, grid: Grid, mat: sparse.csr_matrix):
        self.grid = grid
        self.mat = mat
        self._helm = None
        self._helm_lu = None

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.mat @ f

    @property
    def helmholtz_matrix(self) -> sparse.csr_matrix:
        if self._helm is None:
            self._helm = (sparse.identity(self.grid.n_cells, format="csr") - self.mat).tocsr()
        return self._helm

    @property
    def helmholtz_lu(self) -> LuSolver:
        if self._helm_lu is None:
            self._helm_lu = LuSolver(self.helmholtz_matrix)
        return self._helm_lu


def laplacian(grid: Grid) -> LinOp:
    """Assemble the Neumann Laplacian as a kronecker sum of 1D stencils."""
    blocks = [_lap1d(n, h) for n, h in zip(grid.counts, grid.spacing)]
    eyes = [sparse.identity(n, format="csr") for n in grid.counts]
    total = None
    for axis in range(grid.dim):
        factors = [blocks[a] if a == axis else eyes[a] for a in range(grid.dim)]
        term = reduce(lambda x, y: sparse.kron(x, y, format="csr"), factors)
        total = term if total is None else total + term
    return LinOp(grid, total.tocsr())


def helmholtz_solve(grid: Grid, L: LinOp, f, tol: float = 1e-10,
                    method: str = "direct") -> np.ndarray:
    """Solve (I - L) z = f to ||(I-L)z - f||_inf <= tol * ||f||_inf.

    Because I - L is an M-matrix with unit column sums, the solution inherits
    nonnegativity from f, obeys the maximum principle, and has the same sum.
    """
    b = grid.check_field(f, "f")
    if tol <= 0:
        raise DomainError("tol must be positive")
    A = L.helmholtz_matrix
    bnorm = float(np.max(np.abs(b)))
    if bnorm == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        z, resid = L.helmholtz_lu.solve(b, rtol=min(tol, 1e-12))
        if resid <= tol * bnorm:
            return z
        raise NumericalError("Helmholtz solve failed", residual=resid)
    if method != "cg":
        raise DomainError(f"unknown solve method {method!r}")
    z, resid, _, ok = cg(A, b, rtol=tol, maxiter=iteration_cap(grid.n_cells))
    if ok:
        return z
    # Direct fallback (sparse factorization; exact where the iteration stalled).
    z, resid = L.helmholtz_lu.solve(b, rtol=min(tol, 1e-12))
    if resid <= tol * bnorm:
        return z
    raise NumericalError("Helmholtz solve failed", residual=resid)


def semigroup_apply(grid: Grid, L: LinOp, a: float, t: float, f,
                    substeps: int, tol: float = 1e-10) -> np.ndarray:
    """Approximate exp(a*(L - I)*t) f by `substeps` implicit Euler resolvents.

    Each substep solves (I + a*dt*(I - L)) z_new = z_old, an M-matrix system,
    so nonnegativity and the maximum principle are preserved exactly.
    """
    z = grid.check_field(f, "f").copy()
    if a <= 0 or t < 0 or substeps < 1:
        raise DomainError("semigroup_apply requires a > 0, t >= 0, substeps >= 1")
    if t == 0.0:
        return z
    dt = t / substeps
    A = (sparse.identity(grid.n_cells, format="csr")
         + (a * dt) * L.helmholtz_matrix).tocsr()
    lu = LuSolver(A)
    for _ in range(substeps):
        znorm = float(np.max(np.abs(z)))
        if znorm == 0.0:
            return z
        z, resid = lu.solve(z, rtol=min(tol, 1e-12))
        if resid > tol * znorm:
            raise NumericalError("semigroup resolvent failed", residual=resid)
    return z


# -- field serialization ------------------------------------------------------

_HEADER = struct.Struct("<4sIIII")  # magic, dim, n1, n2, n3 (unused axes = 1)


def write_snapshot(path, grid: Grid, field) -> None:
    """Write a field in the flat binary snapshot format (little-endian f64)."""
    arr = grid.check_field(field)
    counts = tuple(grid.counts) + (1,) * (3 - grid.dim)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.dim, *counts))
        fh.write(arr.astype("<f8").tobytes())


def read_snapshot(path):
    """Read a binary snapshot; returns (dim, counts, values) with values in C order."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, dim, n1, n2, n3 = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if not (1 <= dim <= 3):
            raise FormatError(f"{path}: bad dimension {dim}")
        counts = (n1, n2, n3)[:dim]
        if any(n < 1 for n in counts) or any(n != 1 for n in (n1, n2, n3)[dim:]):
            raise FormatError(f"{path}: inconsistent cell counts {(n1, n2, n3)}")
        n = int(np.prod(counts))
        payload = fh.read()
    if len(payload) != 8 * n:
        raise FormatError(f"{path}: expected {8 * n} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").astype(float)
    return dim, counts, values


def field_to_csv(path, grid: Grid, field) -> None:
    """Write one `x[,y[,z]],value` row per cell."""
    arr = grid.check_field(field)
    coords = grid.coords()
    names = ["x", "y", "z"][: grid.dim]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names + ["value"]) + "\n")
        for i in range(grid.n_cells):
            cols = [repr(float(c[i])) for c in coords] + [repr(float(arr[i]))]
            fh.write(",".join(cols) + "\n")
