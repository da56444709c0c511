"""Desk-scale synthetic test problems.

Builds operators with a prescribed singular spectrum (random orthonormal
factors around a chosen diagonal), a voxelized cone phantom, and noisy
measurement vectors with simulated background repetitions, all seeded for
exact reproducibility.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .io_formats import VoxelGrid
from .noise import DIAGONAL, CovarianceModel

ALGEBRAIC = "algebraic"
EXPONENTIAL = "exponential"
EXPLICIT = "explicit"


@dataclass(frozen=True)
class SpectrumSpec:
    """Prescribed singular values.

    algebraic(rate r):    s_i = i**(-r),  i = 1, 2, ...
    exponential(rho):     s_i = rho**i,   i = 0, 1, ...
    explicit(values):     given list, nonincreasing positive
    """

    kind: str
    rate: float = 0.0  # algebraic r or exponential rho
    values: tuple = ()

    def resolve(self, size):
        if self.kind == ALGEBRAIC:
            if self.rate <= 0:
                raise ValueError("algebraic decay rate must be positive")
            return np.arange(1, size + 1, dtype=np.float64) ** (-self.rate)
        if self.kind == EXPONENTIAL:
            if not 0 < self.rate < 1:
                raise ValueError("exponential base must lie in (0, 1)")
            return self.rate ** np.arange(size, dtype=np.float64)
        if self.kind == EXPLICIT:
            s = np.asarray(self.values, dtype=np.float64)
            if s.size != size:
                raise ValueError(f"explicit spectrum has {s.size} values, need {size}")
            if np.any(s <= 0) or np.any(np.diff(s) > 0):
                raise ValueError("explicit spectrum must be positive nonincreasing")
            return s.copy()
        raise ValueError(f"unknown spectrum kind {self.kind!r}")


def algebraic_spectrum(rate):
    return SpectrumSpec(kind=ALGEBRAIC, rate=float(rate))


def exponential_spectrum(rho):
    return SpectrumSpec(kind=EXPONENTIAL, rate=float(rho))


def explicit_spectrum(values):
    return SpectrumSpec(kind=EXPLICIT, values=tuple(float(v) for v in values))


@dataclass
class SyntheticProblem:
    """Operator, nonnegative truth, clean and noisy data, and the noise model."""

    A: np.ndarray
    x_true: np.ndarray
    y_true: np.ndarray
    y_delta: np.ndarray
    noise: CovarianceModel
    delta: float  # || y_delta - y_true ||
    seed: int
    empty_scans: np.ndarray = None  # (K_e, n) simulated background draws
    grid: VoxelGrid = None
    extra: dict = field(default_factory=dict)


def synth_operator(n, m, spec: SpectrumSpec, seed=0):
    """Dense n x m operator with the prescribed singular spectrum.

    The singular vectors are orthonormal factors of seeded Gaussian
    matrices, so the operator is deterministic given (n, m, spec, seed).
    """
    if n < 1 or m < 1:
        raise ValueError("operator dims must be >= 1")
    r = min(n, m)
    sigma = spec.resolve(r)
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, r)))
    V, _ = np.linalg.qr(rng.standard_normal((m, r)))
    return (U * sigma) @ V.T


_CONE_AXES = {"x": 0, "y": 1, "z": 2}


def cone_phantom(grid: VoxelGrid, tip_radius_mm, apex_angle_deg, height_mm,
                 concentration, axis="z"):
    """Binary cone phantom on a voxel grid.

    The cone's axis runs along the chosen grid axis through the transverse
    center, the tip sits at the low end of that axis, and the radius grows
    as ``tip_radius + h * tan(apex_angle)`` with the distance h from the
    tip. A voxel is flagged iff its center lies inside; flagged voxels get
    ``concentration``, everything else 0. A cone poking out of the grid is
    clipped with a warning.
    """
    if tip_radius_mm < 0 or height_mm <= 0 or concentration <= 0:
        raise ValueError("cone dimensions and concentration must be positive")
    if not 0 <= apex_angle_deg < 90:
        raise ValueError("apex angle must lie in [0, 90) degrees")
    ax = _CONE_AXES.get(str(axis).lower())
    if ax is None:
        raise ValueError(f"axis must be one of x/y/z, got {axis!r}")

    t1, t2 = [a for a in range(3) if a != ax]
    extent_ax = grid.dims[ax] * grid.spacing[ax]
    max_radius = tip_radius_mm + height_mm * math.tan(math.radians(apex_angle_deg))
    extent_t1 = grid.dims[t1] * grid.spacing[t1]
    extent_t2 = grid.dims[t2] * grid.spacing[t2]
    if height_mm > extent_ax or 2 * max_radius > min(extent_t1, extent_t2):
        warnings.warn(
            "cone does not fit inside the grid and is clipped "
            f"(height {height_mm} mm vs extent {extent_ax} mm, "
            f"diameter {2 * max_radius:.1f} mm vs cross-section "
            f"{extent_t1} x {extent_t2} mm)",
            stacklevel=2,
        )

    centers = [grid.centers_1d(a) for a in range(3)]
    # broadcast voxel-center coordinates to the full volume, [iz, iy, ix]
    cx = centers[0][None, None, :]
    cy = centers[1][None, :, None]
    cz = centers[2][:, None, None]
    coords = (cx, cy, cz)

    h = coords[ax] - grid.origin[ax]  # distance from the tip plane
    c1 = grid.origin[t1] + 0.5 * extent_t1
    c2 = grid.origin[t2] + 0.5 * extent_t2
    r_sq = (coords[t1] - c1) ** 2 + (coords[t2] - c2) ** 2
    radius = tip_radius_mm + h * math.tan(math.radians(apex_angle_deg))
    inside = (h >= 0) & (h <= height_mm) & (r_sq <= radius**2)

    vol = np.where(inside, float(concentration), 0.0)
    if not vol.any():
        warnings.warn("cone lies entirely outside the grid", stacklevel=2)
    return vol.reshape(-1)  # x-fastest linearization, matching VoxelGrid


def _draw_noise(rng, model: CovarianceModel, size):
    xi = rng.standard_normal((size, model.n))
    if model.kind == DIAGONAL:
        return model.mean + xi * np.sqrt(model.variances)
    eigvals, eigvecs = np.linalg.eigh(model.full)
    half = eigvecs * np.sqrt(np.maximum(eigvals, 0.0))
    return model.mean + xi @ half.T


def make_problem(A, x_true, noise: CovarianceModel, repetitions=2, seed=0,
                 grid=None):
    """Noisy data y_delta = A x_true + eta plus simulated empty scans.

    eta and the ``repetitions`` background-only draws come from the same
    seeded Gaussian model, so estimating the covariance from the returned
    empty scans and whitening with it closes the loop.
    """
    A = np.asarray(A, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64).reshape(-1)
    if A.shape[1] != x_true.shape[0]:
        raise ValueError("truth length does not match operator columns")
    if noise.n != A.shape[0]:
        raise ValueError("noise dimension does not match operator rows")
    if np.any(x_true < 0):
        raise ValueError("truth must be nonnegative")

    rng = np.random.default_rng(seed)
    y_true = A @ x_true
    eta = _draw_noise(rng, noise, 1)[0]
    y_delta = y_true + eta
    empty = _draw_noise(rng, noise, int(repetitions))
    return SyntheticProblem(
        A=A,
        x_true=x_true,
        y_true=y_true,
        y_delta=y_delta,
        noise=noise,
        delta=float(np.linalg.norm(y_delta - y_true)),
        seed=seed,
        empty_scans=empty,
        grid=grid,
    )
