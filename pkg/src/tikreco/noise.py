"""Noise statistics from repeated background measurements, and whitening.

Whitening turns the heteroscedastic measurement model y = Ax + eta,
eta ~ N(mu, C), into an ordinary least-squares problem W A x = W (y - mu)
whose noise has identity covariance, so rows with large variance are
weighed down instead of polluting the fit.
"""
import warnings
from dataclasses import dataclass

import numpy as np

DIAGONAL = "diagonal"
FULL = "full"


@dataclass
class CovarianceModel:
    """Per-row mean and either diagonal variances or a full covariance."""

    mean: np.ndarray
    kind: str
    variances: np.ndarray = None  # diagonal kind
    full: np.ndarray = None  # full kind, symmetric PSD
    n_samples: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        if self.kind == DIAGONAL:
            self.variances = np.asarray(self.variances, dtype=np.float64).reshape(-1)
            if self.variances.shape != self.mean.shape:
                raise ValueError("variances must match the mean in length")
            if np.any(self.variances < 0):
                raise ValueError("variances must be nonnegative")
        elif self.kind == FULL:
            self.full = np.asarray(self.full, dtype=np.float64)
            n = self.mean.shape[0]
            if self.full.shape != (n, n):
                raise ValueError("full covariance must be n x n")
            sym_err = np.abs(self.full - self.full.T).max()
            if sym_err > 1e-12 * max(1.0, np.abs(self.full).max()):
                raise ValueError("full covariance must be symmetric")
        else:
            raise ValueError(f"unknown covariance kind {self.kind!r}")

    @property
    def n(self):
        return self.mean.shape[0]


@dataclass
class WhiteningOperator:
    """Either a per-row scaling or a dense whitening matrix."""

    kind: str
    weights: np.ndarray = None  # diagonal kind, all > 0
    dense: np.ndarray = None  # full kind
    eps_var: float = 0.0  # variance floor used during construction

    def __post_init__(self):
        if self.kind == DIAGONAL:
            self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
                raise ValueError("diagonal weights must be finite and positive")
        elif self.kind == FULL:
            self.dense = np.asarray(self.dense, dtype=np.float64)
        else:
            raise ValueError(f"unknown whitening kind {self.kind!r}")

    @property
    def n(self):
        return self.weights.shape[0] if self.kind == DIAGONAL else self.dense.shape[0]


def estimate_covariance(samples, kind=DIAGONAL):
    """Sample mean and unbiased covariance from repeated background vectors.

    Parameters
    ----------
    samples : array (K, n) or sequence of K length-n vectors
    kind : "diagonal" or "full"

    A full estimate from fewer than n+1 samples is rank deficient and only
    warned about, not rejected.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        samples = np.vstack([np.asarray(s).reshape(-1) for s in samples])
    k, n = samples.shape
    if k < 2:
        raise ValueError(f"need at least 2 samples to estimate noise, got {k}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    if kind == DIAGONAL:
        variances = (centered**2).sum(axis=0) / (k - 1)
        return CovarianceModel(mean=mean, kind=DIAGONAL, variances=variances, n_samples=k)
    if kind == FULL:
        if k < n + 1:
            warnings.warn(
                f"full covariance from {k} samples of dimension {n} is rank "
                "deficient; consider the diagonal estimate",
                stacklevel=2,
            )
        C = centered.T @ centered / (k - 1)
        C = 0.5 * (C + C.T)
        return CovarianceModel(mean=mean, kind=FULL, full=C, n_samples=k)
    raise ValueError(f"unknown covariance kind {kind!r}")


def _default_floor(scale):
    # dead rows get a finite weight; a zero model falls back to unit variance
    return 1e-12 * scale if scale > 0 else 1.0


def whitening_from(model: CovarianceModel, eps_var=None):
    """Whitening operator from a covariance model.

    Diagonal: weights 1/sqrt(max(var, eps_var)). Full: eigendecompose
    C = Q L Q^t, clamp eigenvalues at eps_var, W = L^{-1/2} Q^t. When
    ``eps_var`` is omitted it defaults to 1e-12 times the largest variance.
    """
    if model.kind == DIAGONAL:
        if eps_var is None:
            eps_var = _default_floor(float(model.variances.max(initial=0.0)))
        if eps_var <= 0:
            raise ValueError("variance floor must be positive")
        weights = 1.0 / np.sqrt(np.maximum(model.variances, eps_var))
        return WhiteningOperator(kind=DIAGONAL, weights=weights, eps_var=eps_var)
    eigvals, eigvecs = np.linalg.eigh(model.full)
    if eps_var is None:
        eps_var = _default_floor(float(eigvals.max(initial=0.0)))
    if eps_var <= 0:
        raise ValueError("variance floor must be positive")
    clamped = np.maximum(eigvals, eps_var)
    W = (eigvecs / np.sqrt(clamped)).T  # L^{-1/2} Q^t
    return WhiteningOperator(kind=FULL, dense=W, eps_var=eps_var)


def apply_whitening(W: WhiteningOperator, A, y, mean=None):
    """Transform (A, y) to (W A, W (y - mean)). Diagonal kind is row scaling."""
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if A.shape[0] != W.n or y.shape[0] != W.n:
        raise ValueError(
            f"dimension mismatch: whitening is {W.n}-dim, A {A.shape}, y {y.shape}"
        )
    if mean is None:
        shifted = y
    else:
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        if mean.shape[0] != W.n:
            raise ValueError("mean length does not match")
        shifted = y - mean
    if W.kind == DIAGONAL:
        return A * W.weights[:, None], shifted * W.weights
    return W.dense @ A, W.dense @ shifted


def save_covariance(directory, model: CovarianceModel):
    """Mean and variances as vector files (or the full matrix) plus a manifest."""
    import os

    from .io_formats import write_manifest, write_matrix, write_vector

    os.makedirs(directory, exist_ok=True)
    write_vector(os.path.join(directory, "mean.vec"), model.mean)
    if model.kind == DIAGONAL:
        write_vector(os.path.join(directory, "variances.vec"), model.variances)
    else:
        write_matrix(os.path.join(directory, "C.smx"), model.full)
    write_manifest(
        os.path.join(directory, "manifest.txt"),
        {"kind": model.kind, "n": model.n, "samples": model.n_samples},
    )


def load_covariance(directory):
    import os

    from .io_formats import read_manifest, read_matrix, read_vector

    man = read_manifest(os.path.join(directory, "manifest.txt"))
    mean = read_vector(os.path.join(directory, "mean.vec"))
    if man["kind"] == DIAGONAL:
        return CovarianceModel(
            mean=mean, kind=DIAGONAL,
            variances=read_vector(os.path.join(directory, "variances.vec")),
            n_samples=int(man["samples"]),
        )
    return CovarianceModel(
        mean=mean, kind=FULL,
        full=read_matrix(os.path.join(directory, "C.smx")),
        n_samples=int(man["samples"]),
    )
