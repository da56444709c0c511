"""Regularization-parameter grids and automatic choice rules.

Both rules walk a geometric grid alpha_i = alpha0 * q**i (largest value
first). The discrepancy rule picks the first index whose residual falls
under a noise-level bound tau*delta + sigma*eps; the quasi-optimality rule
picks the index minimizing the distance between consecutive solutions and
needs no noise knowledge at all.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AlphaGrid:
    """Geometric sequence alpha_i = alpha0 * q**i, i = 0..count-1."""

    alpha0: float
    q: float
    count: int

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.q < 1:
            raise ValueError(f"decay factor must lie in (0, 1), got {self.q}")
        if self.count < 2:
            raise ValueError("grid needs at least two values")

    @property
    def values(self):
        return self.alpha0 * self.q ** np.arange(self.count, dtype=np.float64)

    def __getitem__(self, i):
        if not 0 <= i < self.count:
            raise IndexError(f"grid index {i} out of range [0, {self.count})")
        return float(self.alpha0 * self.q**i)

    def __len__(self):
        return self.count


def alpha_grid(alpha0=100.0, q=0.5, count=50):
    return AlphaGrid(alpha0=float(alpha0), q=float(q), count=int(count))


@dataclass
class RuleOutcome:
    """Chosen grid point plus the per-index diagnostics that led to it."""

    index: int  # -1 when no admissible value exists
    alpha: float  # nan when no admissible value exists
    admissible: bool
    diagnostics: np.ndarray = field(default=None)  # residuals or distances
    rule: str = ""

    @property
    def found(self):
        return self.index >= 0


def dp_bound(tau, delta, sigma=0.0, eps=0.0):
    """Residual admissibility bound tau*delta + sigma*eps.

    tau > 1 (say 1.1) guards the data-noise level delta; sigma scales the
    operator-perturbation level eps and should dominate the solution norm.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    if min(delta, sigma, eps) < 0:
        raise ValueError("delta, sigma, eps must be nonnegative")
    return tau * delta + sigma * eps


def discrepancy_select(grid: AlphaGrid, residuals, bound, fallback_min_residual=False):
    """First grid index whose residual does not exceed the bound.

    Residuals must be ordered by grid index (decreasing alpha). When no
    index is admissible the outcome reports that explicitly; opting in to
    ``fallback_min_residual`` returns the minimal-residual index instead,
    which mirrors the pragmatic choice of treating the smallest achieved
    residual as the bound.
    """
    residuals = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if residuals.shape[0] != len(grid):
        raise ValueError("need one residual per grid value")
    if not np.all(np.isfinite(residuals)):
        raise ValueError("residuals must be finite")
    if bound <= 0:
        raise ValueError("bound must be positive")
    hits = np.nonzero(residuals <= bound)[0]
    if hits.size:
        i = int(hits[0])
        return RuleOutcome(
            index=i, alpha=grid[i], admissible=True,
            diagnostics=residuals, rule="discrepancy",
        )
    if fallback_min_residual:
        i = int(np.argmin(residuals))
        return RuleOutcome(
            index=i, alpha=grid[i], admissible=False,
            diagnostics=residuals, rule="discrepancy(min-residual fallback)",
        )
    return RuleOutcome(
        index=-1, alpha=float("nan"), admissible=False,
        diagnostics=residuals, rule="discrepancy",
    )


def quasi_opt_select(grid: AlphaGrid, solutions):
    """Index minimizing || x_{i+1} - x_i || over consecutive grid solutions.

    Ties break toward the smaller index, i.e. toward more regularization.
    """
    if len(solutions) < 2:
        raise ValueError("need at least two solutions")
    if len(solutions) > len(grid):
        raise ValueError("more solutions than grid values")
    sols = [np.asarray(s, dtype=np.float64).reshape(-1) for s in solutions]
    dists = np.array(
        [np.linalg.norm(b - a) for a, b in zip(sols[:-1], sols[1:])]
    )
    i = int(np.argmin(dists))  # argmin takes the first minimum: smaller i
    return RuleOutcome(
        index=i, alpha=grid[i], admissible=True,
        diagnostics=dists, rule="quasi-optimality",
    )
