"""Row-action solver for the nonnegative quadratically regularized problem

    min_{x >= 0}  ||A x - y||^2 + alpha ||x||^2 .

Each iteration touches a single row of A (cost independent of n), carrying a
dual variable z alongside the primal iterate; at the end of every pass over
the rows, and after the final iteration, a componentwise correction driven
by a second dual variable pushes the iterate toward the nonnegative orthant
(for relaxation 1 it lands there exactly).

The iteration indexing is kept verbatim: with k = 1, 2, ..., K the row is
(k mod n) + 1 in 1-based terms, so row 2 is touched first and the
correction fires whenever the row index equals n, i.e. at k = n-1, 2n-1, ...
and additionally at k = K.

The sweep loop is the package's hottest kernel; it is compiled with numba
when available and falls back to the identical pure-numpy code otherwise
(see `_accel`).
"""
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from ._accel import HAVE_NUMBA, njit, resolve_backend
from .results import ReconstructionResult


@dataclass
class KaczmarzConfig:
    """Solver parameters.

    alpha : regularization weight, > 0
    omega : relaxation, in (0, 2); 1 recovers plain projections
    sweeps : passes over the rows; total iterations = sweeps * n_rows
    x0 : optional start vector (default zero); because the dual state always
        starts at zero, a nonzero start acts as the proximal center of the
        penalty, i.e. the limit solves min ||Ax - y||^2 + alpha ||x - x0||^2
    enforce_nonneg : apply the orthant correction (and return x >= 0 exactly)
    stop_tol : optional relative-change stop checked once per sweep; 0 = off
    """

    alpha: float
    omega: float = 1.0
    sweeps: int = 20
    x0: np.ndarray = None
    enforce_nonneg: bool = True
    stop_tol: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.omega < 2:
            raise ValueError(f"omega must lie in (0, 2), got {self.omega}")
        if self.sweeps < 1:
            raise ValueError("need at least one sweep")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be nonnegative")


@dataclass
class KaczmarzState:
    """Mutable iteration state: primal x, row duals z, constraint duals zbar."""

    x: np.ndarray  # (m,)
    z: np.ndarray  # (n,)
    zbar: np.ndarray  # (m,)
    k: int = 0  # iterations executed so far


class SolverDiverged(RuntimeError):
    """Nonfinite update encountered; carries (iteration, row)."""

    def __init__(self, iteration, row):
        super().__init__(
            f"nonfinite update at iteration {iteration}, row {row}; "
            "check the conditioning/scaling of the inputs"
        )
        self.iteration = iteration
        self.row = row


def _sweep_kernel(A, y, x, z, zbar, row_sq, alpha, omega, k_start, k_stop, k_total, nonneg):
    # One source for both backends: compiled by numba when available,
    # executed as-is (vectorized numpy per row) otherwise.
    n = A.shape[0]
    sqa = math.sqrt(alpha)
    for k in range(k_start, k_stop + 1):
        i = k % n  # 0-based; the 1-based row index of the scheme is i + 1
        rn = row_sq[i]
        if rn > 0.0:
            eta = -omega * (np.dot(A[i], x) + sqa * z[i] - y[i]) / (rn + alpha)
            if not math.isfinite(eta):
                return k, i
            z[i] += eta * sqa
            x += eta * A[i]
        if i == n - 1 or k == k_total:
            if nonneg:
                etab = -np.minimum(zbar, omega * x)
                zbar += etab
                x += etab
    return -1, -1


if HAVE_NUMBA:
    _sweep_kernel_jit = njit(cache=True)(_sweep_kernel)
else:  # pragma: no cover - exercised in TIKRECO_NO_NUMBA runs
    _sweep_kernel_jit = _sweep_kernel


def _correction(x, zbar, omega):
    etab = -np.minimum(zbar, omega * x)
    zbar += etab
    x += etab


def run_sweeps(A, y, cfg: KaczmarzConfig, state: KaczmarzState, n_sweeps, k_total,
               backend=None):
    """Advance the iteration by ``n_sweeps`` passes, mutating ``state``.

    ``k_total`` is the global iteration budget the final correction is tied
    to; chunked execution with the same ``k_total`` is bit-identical to a
    single call.
    """
    kernel = _sweep_kernel_jit if resolve_backend(backend) == "numba" else _sweep_kernel
    n = A.shape[0]
    row_sq = np.einsum("ij,ij->i", A, A)
    k_start = state.k + 1
    k_stop = min(state.k + n_sweeps * n, k_total)
    if k_stop < k_start:
        return state
    err_k, err_i = kernel(
        A, y, state.x, state.z, state.zbar, row_sq,
        float(cfg.alpha), float(cfg.omega), k_start, k_stop, k_total,
        cfg.enforce_nonneg,
    )
    if err_k >= 0:
        raise SolverDiverged(int(err_k), int(err_i) + 1)
    state.k = k_stop
    return state


def kaczmarz_solve(A, y, cfg: KaczmarzConfig, method="STD", backend=None):
    """Run the regularized row-action iteration for ``cfg.sweeps`` passes.

    Returns a ReconstructionResult holding the final iterate, the executed
    iteration count, the residual norm ||A x - y|| and the wall time of the
    iteration. Rows with zero norm are skipped (their update carries no
    information) with a warning. With ``enforce_nonneg`` the returned vector
    is nonnegative exactly, not up to a tolerance.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    n, m = A.shape
    if y.shape[0] != n:
        raise ValueError(f"data length {y.shape[0]} does not match {n} rows")

    if cfg.x0 is None:
        x = np.zeros(m)
    else:
        x = np.array(cfg.x0, dtype=np.float64).reshape(-1).copy()
        if x.shape[0] != m:
            raise ValueError("x0 length does not match the column count")

    row_sq = np.einsum("ij,ij->i", A, A)
    n_zero = int(np.count_nonzero(row_sq == 0.0))
    if n_zero:
        warnings.warn(f"{n_zero} zero rows are skipped by the iteration", stacklevel=2)

    kernel = _sweep_kernel_jit if resolve_backend(backend) == "numba" else _sweep_kernel
    state = KaczmarzState(x=x, z=np.zeros(n), zbar=np.zeros(m), k=0)
    k_total = cfg.sweeps * n

    t0 = time.perf_counter()
    if cfg.stop_tol > 0.0:
        x_prev = state.x.copy()
        stopped_early = False
        while state.k < k_total:
            k_stop = min(state.k + n, k_total)
            err_k, err_i = kernel(
                A, y, state.x, state.z, state.zbar, row_sq,
                float(cfg.alpha), float(cfg.omega), state.k + 1, k_stop, k_total,
                cfg.enforce_nonneg,
            )
            if err_k >= 0:
                raise SolverDiverged(int(err_k), int(err_i) + 1)
            state.k = k_stop
            change = np.linalg.norm(state.x - x_prev)
            if change <= cfg.stop_tol * max(np.linalg.norm(state.x), 1e-300):
                stopped_early = state.k < k_total
                break
            x_prev[:] = state.x
        if stopped_early and cfg.enforce_nonneg:
            # mirror the final-iteration correction the full run would apply
            _correction(state.x, state.zbar, cfg.omega)
    else:
        err_k, err_i = kernel(
            A, y, state.x, state.z, state.zbar, row_sq,
            float(cfg.alpha), float(cfg.omega), 1, k_total, k_total,
            cfg.enforce_nonneg,
        )
        if err_k >= 0:
            raise SolverDiverged(int(err_k), int(err_i) + 1)
        state.k = k_total
    wall = time.perf_counter() - t0

    x = state.x
    if cfg.enforce_nonneg:
        # the correction lands in the orthant exactly for omega = 1; for
        # other relaxations the final iterate may hang slightly below it
        x = np.maximum(x, 0.0)

    return ReconstructionResult(
        x=x,
        alpha=cfg.alpha,
        method=method,
        iterations=state.k,
        residual_norm=residual_norm(A, x, y),
        wall_time_s=wall,
    )


def residual_norm(A, x, y):
    """Euclidean norm of A x - y."""
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if A.shape[1] != x.shape[0] or A.shape[0] != y.shape[0]:
        raise ValueError(
            f"dimension mismatch: A {A.shape}, x {x.shape}, y {y.shape}"
        )
    return float(np.linalg.norm(A @ x - y))
