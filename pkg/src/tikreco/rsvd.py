"""Randomized rank-k factorization and the reduced regularized problem.

The factorization probes the range of A with a seeded Gaussian sketch,
optionally sharpened by power iterations (re-orthonormalized between every
application of A and A^t for stability), then takes the exact SVD of the
small projected matrix. Replacing A by its rank-k factors shrinks the
row count of the regularized least-squares problem from n to k: the
objective || S_k V_k^t x - U_k^t y ||^2 + alpha ||x||^2 differs from the
one with U_k S_k V_k^t in place of A only by a constant.
"""
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .io_formats import read_manifest, read_matrix, write_manifest, write_matrix


@dataclass
class LowRankFactors:
    """Rank-k triple (U, S, V) with the sketch parameters that produced it."""

    U: np.ndarray  # (n, k), orthonormal columns
    S: np.ndarray  # (k,), nonincreasing, nonnegative
    V: np.ndarray  # (m, k), orthonormal columns
    k: int
    oversample: int = 5  # p
    power_iters: int = 0  # q
    seed: int = 0

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def matrix(self):
        """Densify U diag(S) V^t (test/diagnostic helper)."""
        return (self.U * self.S) @ self.V.T


@dataclass
class ReducedProblem:
    """k-row substitute for the n-row regularized problem."""

    B: np.ndarray  # (k, m) = diag(S) V^t; rows orthogonal with norms S
    z: np.ndarray  # (k,) = U^t y
    factors: LowRankFactors


def _orth(M):
    # reduced Householder QR; stable enough between power steps
    Q, _ = np.linalg.qr(M)
    return Q


def _gaussian_sketch(rng, rows, cols):
    # draw column-by-column from the stream so a future per-column parallel
    # generation can reproduce the exact same matrix
    return rng.standard_normal((cols, rows)).T


def rsvd(A, k, oversample=5, power_iters=0, seed=0):
    """Randomized SVD truncated to rank k.

    Parameters
    ----------
    A : (n, m) array
    k : target rank, 1 <= k <= min(n, m)
    oversample : extra sketch columns p (clamped down if k+p exceeds min(n, m))
    power_iters : number q of (A A^t) applications sharpening the sketch
    seed : seed for the Gaussian sketch; fixed seed means bit-identical factors

    Matrices with fewer rows than columns are handled by factorizing the
    transpose and swapping the factors.
    """
    A = np.asarray(A, dtype=np.float64)
    n, m = A.shape
    if not 1 <= k <= min(n, m):
        raise ValueError(f"target rank {k} out of range [1, {min(n, m)}]")
    if n < m:
        f = rsvd(A.T, k, oversample=oversample, power_iters=power_iters, seed=seed)
        return LowRankFactors(
            U=f.V, S=f.S, V=f.U, k=k,
            oversample=f.oversample, power_iters=power_iters, seed=seed,
        )

    if k + oversample > m:
        clamped = m - k
        warnings.warn(
            f"oversampling {oversample} exceeds column budget; clamped to {clamped}",
            stacklevel=2,
        )
        oversample = clamped

    rng = np.random.default_rng(seed)
    omega = _gaussian_sketch(rng, m, k + oversample)
    Q = _orth(A @ omega)
    for _ in range(power_iters):
        Q = _orth(A.T @ Q)
        Q = _orth(A @ Q)
    B = Q.T @ A
    Wb, S, Vt = np.linalg.svd(B, full_matrices=False)
    return LowRankFactors(
        U=(Q @ Wb)[:, :k],
        S=S[:k].copy(),
        V=Vt[:k].T.copy(),
        k=k,
        oversample=oversample,
        power_iters=power_iters,
        seed=seed,
    )


def reduce_problem(factors: LowRankFactors, y):
    """Project the data onto the factor range: B = diag(S) V^t, z = U^t y."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != factors.U.shape[0]:
        raise ValueError(
            f"data length {y.shape[0]} != operator rows {factors.U.shape[0]}"
        )
    B = factors.S[:, None] * factors.V.T
    z = factors.U.T @ y
    return ReducedProblem(B=B, z=z, factors=factors)


def energy_fraction(singular_values, k):
    """Cumulative squared spectrum fraction (sum_{i<=k} s_i^2) / (sum_i s_i^2)."""
    s = np.asarray(singular_values, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a nonempty 1-D spectrum")
    if np.any(s < 0) or np.any(np.diff(s) > 0):
        raise ValueError("spectrum must be nonincreasing and nonnegative")
    if not 1 <= k <= s.size:
        raise ValueError(f"k must be in [1, {s.size}], got {k}")
    total = float((s**2).sum())
    if total == 0.0:
        raise ValueError("all-zero spectrum has no energy fraction")
    return float((s[:k] ** 2).sum()) / total


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_factors(directory, factors: LowRankFactors):
    """Three matrix files plus a manifest with (k, p, q, seed)."""
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "U.smx"), factors.U)
    write_matrix(os.path.join(directory, "S.smx"), factors.S.reshape(1, -1))
    write_matrix(os.path.join(directory, "V.smx"), factors.V)
    write_manifest(
        os.path.join(directory, "manifest.txt"),
        {
            "k": factors.k,
            "oversample": factors.oversample,
            "power_iters": factors.power_iters,
            "seed": factors.seed,
        },
    )


def load_factors(directory):
    man = read_manifest(os.path.join(directory, "manifest.txt"))
    return LowRankFactors(
        U=read_matrix(os.path.join(directory, "U.smx")),
        S=read_matrix(os.path.join(directory, "S.smx")).reshape(-1),
        V=read_matrix(os.path.join(directory, "V.smx")),
        k=int(man["k"]),
        oversample=int(man["oversample"]),
        power_iters=int(man["power_iters"]),
        seed=int(man["seed"]),
    )
