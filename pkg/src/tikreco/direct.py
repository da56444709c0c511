"""Non-iterative reconstruction on low-rank factors.

Applies a spectral filter to the projected data and projects the result
onto the nonnegative orthant:

    x = max(V diag(s_j / (s_j^2 + alpha^2)) U^t y, 0).

The alpha^2 in the filter denominator is deliberate and kept as the
default; pass ``classic_filter=True`` for the s/(s^2 + alpha) variant of
classical quadratic regularization when cross-method comparability of
alpha matters. The constraint handling is a plain projection, so this is
a fast approximation to the constrained minimizer, not the minimizer
itself.
"""
import time
import warnings

import numpy as np

from .results import ReconstructionResult
from .rsvd import LowRankFactors


def filtered_inverse(factors: LowRankFactors, y, alpha, classic_filter=False,
                     method="rSVD2"):
    """Filtered pseudo-inverse reconstruction from rank-k factors.

    With alpha = 0 and a singular value of exactly 0 the corresponding
    filter entry is defined as 0 (the component is dropped) with a warning.
    The returned vector is nonnegative exactly.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != factors.U.shape[0]:
        raise ValueError(
            f"data length {y.shape[0]} != operator rows {factors.U.shape[0]}"
        )
    s = factors.S
    if np.any(s < 0):
        raise ValueError("singular values must be nonnegative")

    t0 = time.perf_counter()
    w = factors.U.T @ y
    denom = s**2 + (alpha if classic_filter else alpha**2)
    filt = np.zeros_like(s)
    nonzero = denom > 0.0
    if not np.all(nonzero):
        warnings.warn(
            f"{int(np.count_nonzero(~nonzero))} zero singular values at "
            "alpha = 0; their components are dropped",
            stacklevel=2,
        )
    filt[nonzero] = s[nonzero] / denom[nonzero]
    x = np.maximum(factors.V @ (filt * w), 0.0)
    wall = time.perf_counter() - t0

    residual = float(np.linalg.norm(factors.S * (factors.V.T @ x) - w))
    return ReconstructionResult(
        x=x,
        alpha=alpha,
        method=method,
        iterations=0,
        residual_norm=residual,
        wall_time_s=wall,
    )
