"""Reconstruction toolkit for calibrated ill-posed linear systems.

Core pieces: calibration ingest with frequency selection, noise whitening,
randomized low-rank reduction, a nonnegativity-constrained regularized
row-action solver, automatic regularization-parameter choice, and a
verification harness for the perturbed-operator error bound.
"""
__version__ = "0.1.0"

from ._accel import HAVE_NUMBA, default_backend
from .calib import (
    CalibrationSet,
    FrequencyIndexSet,
    SnrMeasure,
    TimeSignal,
    assemble_system_matrix,
    background_correct,
    band_pass_indices,
    normalize_operator,
    project_signal,
    rows_for_target,
    select_rows,
    snr_measure,
)
from .direct import filtered_inverse
from .io_formats import VoxelGrid, export_slice_image, read_matrix, read_vector, write_matrix, write_vector
from .kaczmarz import KaczmarzConfig, KaczmarzState, kaczmarz_solve, residual_norm
from .noise import CovarianceModel, WhiteningOperator, apply_whitening, estimate_covariance, whitening_from
from .params import AlphaGrid, RuleOutcome, alpha_grid, discrepancy_select, dp_bound, quasi_opt_select
from .results import ReconstructionResult, relative_error
from .rsvd import LowRankFactors, ReducedProblem, energy_fraction, reduce_problem, rsvd
from .synth import (
    SpectrumSpec,
    SyntheticProblem,
    algebraic_spectrum,
    cone_phantom,
    explicit_spectrum,
    exponential_spectrum,
    make_problem,
    synth_operator,
)
from .bounds import (
    BoundInstance,
    bound_sweep,
    construct_source,
    quadratic_bound_rhs,
    verify_bound,
)
