"""Reconstruction outputs and their on-disk form (CSV vector + metadata)."""
from dataclasses import dataclass, field

import numpy as np

from .io_formats import read_manifest, read_vector_csv, write_manifest, write_vector_csv


@dataclass
class ReconstructionResult:
    x: np.ndarray
    alpha: float
    method: str  # e.g. STD / SNR / rSVD1 / rSVD2
    iterations: int = 0
    residual_norm: float = float("nan")
    wall_time_s: float = float("nan")
    extra: dict = field(default_factory=dict)


def save_result(prefix, result: ReconstructionResult):
    """Write ``<prefix>.csv`` (one value per line) and ``<prefix>.meta``."""
    write_vector_csv(f"{prefix}.csv", result.x)
    meta = {
        "method": result.method,
        "alpha": repr(float(result.alpha)),
        "iterations": result.iterations,
        "residual_norm": repr(float(result.residual_norm)),
        "wall_time_s": repr(float(result.wall_time_s)),
        "m": result.x.shape[0],
    }
    meta.update({k: v for k, v in result.extra.items()})
    write_manifest(f"{prefix}.meta", meta)


def load_result(prefix):
    x = read_vector_csv(f"{prefix}.csv")
    man = read_manifest(f"{prefix}.meta")
    known = {"method", "alpha", "iterations", "residual_norm", "wall_time_s", "m"}
    return ReconstructionResult(
        x=x,
        alpha=float(man["alpha"]),
        method=man["method"],
        iterations=int(man["iterations"]),
        residual_norm=float(man["residual_norm"]),
        wall_time_s=float(man["wall_time_s"]),
        extra={k: v for k, v in man.items() if k not in known},
    )


def relative_error(x, truth):
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    nrm = np.linalg.norm(truth)
    if nrm == 0.0:
        return float(np.linalg.norm(np.asarray(x).reshape(-1)))
    return float(np.linalg.norm(np.asarray(x).reshape(-1) - truth) / nrm)
