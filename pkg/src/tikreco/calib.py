"""Calibration ingest: Fourier-coefficient projection, system-matrix assembly,
background subtraction, frequency selection, operator normalization.

Conventions used throughout:

  * time signals are uniform samples of a T-periodic voltage, length N_s;
  * the projection basis is ``psi_j(t) = T**-0.5 * (-1)**j * exp(2j*pi*j*t/T)``,
    and inner products are evaluated with the rectangle rule, which is exact
    for band-limited signals with resolvable index ``|j| < N_s/2``;
  * stacked coefficient vectors are laid out coil-major, index ascending
    within each coil, real part before imaginary part for each index.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .io_formats import read_manifest, read_vector, write_manifest, write_vector


@dataclass(frozen=True)
class TimeSignal:
    """Uniformly sampled T-periodic voltage signal."""

    samples: np.ndarray
    period: float  # T, seconds

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.shape[0] < 2:
            raise ValueError("signal needs at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError("signal samples must be finite")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def n_samples(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class FrequencyIndexSet:
    """Per-coil retained frequency indices with their selection parameters."""

    per_coil: tuple  # one strictly increasing int array per coil
    band: tuple = (0.0, math.inf)  # (b1, b2) in Hz
    tau: float = 0.0

    def __post_init__(self):
        coils = tuple(np.asarray(j, dtype=np.int64) for j in self.per_coil)
        object.__setattr__(self, "per_coil", coils)
        for j in coils:
            if j.size > 1 and not np.all(np.diff(j) > 0):
                raise ValueError("index lists must be strictly increasing")
        b1, b2 = self.band
        if not 0 <= b1 < b2:
            raise ValueError(f"band limits must satisfy 0 <= b1 < b2: {self.band}")
        if self.tau < 0:
            raise ValueError("threshold must be nonnegative")

    @property
    def n_coils(self):
        return len(self.per_coil)

    @property
    def n_rows(self):
        # one Re and one Im row per retained index
        return int(sum(2 * j.size for j in self.per_coil))


@dataclass
class CalibrationSet:
    """Raw calibration scans plus the interleaved empty-scanner scans.

    ``signals`` has shape (m, L, N_s): one scan per grid position and coil.
    ``empty_scans`` has shape (K_e, L, N_s). One empty scan is recorded
    every ``schedule`` calibration positions, so calibration scan i sits
    between empty scans ``i // schedule`` and ``i // schedule + 1``.
    ``c0`` is the calibration sample concentration.
    """

    signals: np.ndarray
    empty_scans: np.ndarray
    period: float
    schedule: int = 1  # G
    c0: float = 1.0

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.empty_scans = np.asarray(self.empty_scans, dtype=np.float64)
        if self.signals.ndim != 3:
            raise ValueError("signals must have shape (m, L, N_s)")
        if self.empty_scans.ndim != 3:
            raise ValueError("empty_scans must have shape (K_e, L, N_s)")
        m, L, ns = self.signals.shape
        ke, le, nse = self.empty_scans.shape
        if m < 1 or L < 1:
            raise ValueError("need at least one position and one coil")
        if ke < 2:
            raise ValueError("need at least two empty scans")
        if (le, nse) != (L, ns):
            raise ValueError("empty scans must match signals in coils/samples")
        if ns < 2:
            raise ValueError("signals need at least 2 samples")
        if self.schedule < 1:
            raise ValueError("schedule interval must be >= 1")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.c0 <= 0:
            raise ValueError("sample concentration must be positive")

    @property
    def n_positions(self):
        return self.signals.shape[0]

    @property
    def n_coils(self):
        return self.signals.shape[1]

    @property
    def n_samples(self):
        return self.signals.shape[2]

    @property
    def n_empty(self):
        return self.empty_scans.shape[0]


@dataclass
class SnrMeasure:
    """Per-coil, per-index quality ratios; +inf marks a vanishing background."""

    indices: np.ndarray  # candidate indices, ascending
    values: np.ndarray  # (L, len(indices)), >= 0, possibly +inf
    degenerate: list = field(default_factory=list)  # (coil, index) with den == 0

    def value(self, coil, j):
        pos = int(np.searchsorted(self.indices, j))
        if pos >= self.indices.size or self.indices[pos] != j:
            raise KeyError(f"index {j} not among candidates")
        return float(self.values[coil, pos])


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def _project_samples(samples, period, indices):
    """Rectangle-rule coefficients <v, psi_j> for every j in `indices`.

    samples may be (..., N_s); the result is (..., len(indices)) complex.
    """
    samples = np.asarray(samples, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    ns = samples.shape[-1]
    if np.any(np.abs(indices) >= ns / 2):
        bad = indices[np.abs(indices) >= ns / 2]
        raise ValueError(f"unresolvable frequency index {bad.tolist()} for N_s={ns}")
    spectrum = np.fft.fft(samples, axis=-1)  # bin b = sum_s v_s e^{-2i pi b s/Ns}
    bins = np.mod(indices, ns)
    signs = np.where(indices % 2 == 0, 1.0, -1.0)
    scale = math.sqrt(period) / ns  # (T/Ns) * T**-0.5
    return scale * signs * spectrum[..., bins]


def project_signal(sig: TimeSignal, indices):
    """Project a time signal onto the basis functions for the given indices.

    Returns one complex coefficient per index. Indices beyond the Nyquist
    limit of the sampling raise a ValueError.
    """
    return _project_samples(sig.samples, sig.period, indices)


# ---------------------------------------------------------------------------
# system matrix assembly and background correction
# ---------------------------------------------------------------------------

def _stack_coefficients(coeffs_per_coil):
    """Interleave [Re, Im] per index and concatenate coils."""
    parts = []
    for c in coeffs_per_coil:
        block = np.empty(2 * c.shape[-1], dtype=np.float64)
        block[0::2] = c.real
        block[1::2] = c.imag
        parts.append(block)
    return np.concatenate(parts)


def stack_signals(signals, period, idx: FrequencyIndexSet):
    """Stacked real coefficient vector of one multi-coil scan, shape (n,)."""
    signals = np.asarray(signals, dtype=np.float64)
    if signals.shape[0] != idx.n_coils:
        raise ValueError(
            f"scan has {signals.shape[0]} coils, index set expects {idx.n_coils}"
        )
    coeffs = [
        _project_samples(signals[ell], period, idx.per_coil[ell])
        for ell in range(idx.n_coils)
    ]
    return _stack_coefficients(coeffs)


def assemble_system_matrix(cal: CalibrationSet, idx: FrequencyIndexSet):
    """Build (S, v0) from a calibration set.

    Column i of S is the stacked coefficient vector of the position-i scans
    divided by the sample concentration c0; v0 is the stacked coefficient
    vector of the mean empty scan.
    """
    if idx.n_coils != cal.n_coils:
        raise ValueError(
            f"index set has {idx.n_coils} coils, calibration has {cal.n_coils}"
        )
    n = idx.n_rows
    S = np.empty((n, cal.n_positions), dtype=np.float64)
    for i in range(cal.n_positions):
        S[:, i] = stack_signals(cal.signals[i], cal.period, idx) / cal.c0
    mean_empty = cal.empty_scans.mean(axis=0)  # (L, N_s)
    v0 = stack_signals(mean_empty, cal.period, idx)
    return S, v0


def background_correct(S, v0, v):
    """Subtract the background column: A = S - v0 * 1^t, y = v - v0."""
    S = np.asarray(S, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if S.shape[0] != v0.shape[0] or v.shape[0] != v0.shape[0]:
        raise ValueError(
            f"dimension mismatch: S {S.shape}, v0 {v0.shape}, v {v.shape}"
        )
    return S - v0[:, None], v - v0


# ---------------------------------------------------------------------------
# frequency selection
# ---------------------------------------------------------------------------

def band_pass_indices(b1, b2, period, j_max):
    """All indices j with |j| <= j_max whose frequency |j|/T lies in [b1, b2]."""
    if not 0 <= b1 < b2:
        raise ValueError(f"band limits must satisfy 0 <= b1 < b2, got ({b1}, {b2})")
    if j_max < 0:
        raise ValueError("j_max must be nonnegative")
    if period <= 0:
        raise ValueError("period must be positive")
    j = np.arange(-int(j_max), int(j_max) + 1, dtype=np.int64)
    freq = np.abs(j) / period
    return j[(freq >= b1) & (freq <= b2)]


def snr_measure(cal: CalibrationSet, candidates):
    """Quality ratio of calibration-signal content to background content.

    For coil ell and index j the value is

        mean_i |<v_ell_i - mu_ell_i, psi_j>|  /  mean_k |<e_ell_k - mu_ell, psi_j>|

    where mu_ell is the mean empty scan and mu_ell_i interpolates linearly
    between the empty scans recorded before and after calibration scan i
    (weight 1 on the previous scan immediately after it was taken, falling
    linearly over the `schedule` block). A vanishing denominator yields +inf
    and is recorded as degenerate: such a row shows no background energy at
    all and is maximally trusted.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    m, L, _ = cal.signals.shape
    ke = cal.n_empty
    g = cal.schedule
    last_block = (m - 1) // g
    if last_block + 1 > ke - 1:
        raise ValueError(
            f"schedule inconsistent: {m} scans at interval {g} need at least "
            f"{last_block + 2} empty scans, got {ke}"
        )

    cal_coeff = _project_samples(cal.signals, cal.period, candidates)  # (m, L, nj)
    emp_coeff = _project_samples(cal.empty_scans, cal.period, candidates)  # (ke, L, nj)
    mean_coeff = emp_coeff.mean(axis=0)  # (L, nj); projection is linear

    blocks = np.arange(m) // g  # k_i
    kappa = 1.0 - (np.arange(m) % g) / g  # weight on the previous empty scan
    interp = (
        kappa[:, None, None] * emp_coeff[blocks]
        + (1.0 - kappa)[:, None, None] * emp_coeff[blocks + 1]
    )

    num = np.abs(cal_coeff - interp).mean(axis=0)  # (L, nj)
    den = np.abs(emp_coeff - mean_coeff[None]).mean(axis=0)  # (L, nj)

    values = np.full_like(num, np.inf)
    nonzero = den > 0.0
    values[nonzero] = num[nonzero] / den[nonzero]

    degenerate = [
        (int(ell), int(candidates[p])) for ell, p in zip(*np.nonzero(~nonzero))
    ]
    if degenerate:
        warnings.warn(
            f"{len(degenerate)} (coil, index) pairs have zero background "
            "energy; their quality measure is +inf",
            stacklevel=2,
        )
    return SnrMeasure(indices=candidates, values=values, degenerate=degenerate)


def _band_positions(d: SnrMeasure, band):
    band = np.asarray(band, dtype=np.int64)
    pos = np.searchsorted(d.indices, band)
    if np.any(pos >= d.indices.size) or np.any(d.indices[pos] != band):
        raise ValueError("band contains indices without a computed measure")
    return band, pos


def select_rows(d: SnrMeasure, band, tau):
    """Threshold the measure over a band.

    Returns the retained FrequencyIndexSet and a boolean row mask over the
    full-band stacked layout (both the Re and the Im row of a kept index
    are kept).
    """
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    band, pos = _band_positions(d, band)
    L = d.values.shape[0]
    keep = d.values[:, pos] >= tau  # (L, |band|); inf >= anything
    per_coil = tuple(band[keep[ell]] for ell in range(L))
    mask = np.repeat(keep.reshape(-1), 2)
    return FrequencyIndexSet(per_coil=per_coil, tau=float(tau)), mask


def rows_for_target(d: SnrMeasure, band, k_target):
    """Largest threshold whose mask keeps at least ``k_target`` rows.

    Ties at the cut are broken toward larger measure values, then by
    (coil, index) lexicographic order, trimming to exactly ``k_target``
    rows while keeping Re/Im pairs together.
    """
    if k_target % 2 != 0:
        raise ValueError("k_target must be even: rows come in Re/Im pairs")
    band, pos = _band_positions(d, band)
    L = d.values.shape[0]
    total_rows = 2 * L * band.size
    if not 0 < k_target <= total_rows:
        raise ValueError(f"k_target must be in (0, {total_rows}], got {k_target}")

    vals = d.values[:, pos]  # (L, |band|)
    entries = sorted(
        ((float(vals[ell, p]), ell, p) for ell in range(L) for p in range(band.size)),
        key=lambda t: (-t[0], t[1], band[t[2]]),
    )
    kept = entries[: k_target // 2]
    tau_k = kept[-1][0]

    keep = np.zeros((L, band.size), dtype=bool)
    for _, ell, p in kept:
        keep[ell, p] = True
    mask = np.repeat(keep.reshape(-1), 2)
    return tau_k, mask


# ---------------------------------------------------------------------------
# operator normalization
# ---------------------------------------------------------------------------

_POWER_SEED = 0x51A7

def normalize_operator(A, y, rel_tol=1e-10, max_iter=10000):
    """Scale (A, y) by the spectral norm of A estimated by power iteration.

    Returns (A/s, y/s, s) with s accurate to ``rel_tol`` relative; the start
    vector is drawn from a fixed seed so the estimate is reproducible.
    """
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.any(A):
        raise ValueError("cannot normalize a zero operator")
    rng = np.random.default_rng(_POWER_SEED)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        lam = np.linalg.norm(w)
        if lam == 0.0:  # start vector lay in the null space; redraw
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        s_new = math.sqrt(lam)
        v = w / lam
        if abs(s_new - s) <= rel_tol * s_new:
            s = s_new
            break
        s = s_new
    return A / s, y / s, s


# ---------------------------------------------------------------------------
# directory serialization
# ---------------------------------------------------------------------------

def save_calibration(directory, cal: CalibrationSet):
    """One VectorFile per scan plus a flat manifest."""
    import os

    os.makedirs(directory, exist_ok=True)
    for i in range(cal.n_positions):
        for ell in range(cal.n_coils):
            write_vector(
                os.path.join(directory, f"cal_{i:05d}_coil{ell}.vec"),
                cal.signals[i, ell],
            )
    for k in range(cal.n_empty):
        for ell in range(cal.n_coils):
            write_vector(
                os.path.join(directory, f"empty_{k:05d}_coil{ell}.vec"),
                cal.empty_scans[k, ell],
            )
    write_manifest(
        os.path.join(directory, "manifest.txt"),
        {
            "period_s": repr(cal.period),
            "n_samples": cal.n_samples,
            "n_coils": cal.n_coils,
            "n_positions": cal.n_positions,
            "n_empty": cal.n_empty,
            "schedule": cal.schedule,
            "c0_mmol_l": repr(cal.c0),
            "scan_order": "cal_<position>_coil<coil>.vec ascending",
        },
    )


def load_calibration(directory):
    import os

    man = read_manifest(os.path.join(directory, "manifest.txt"))
    m = int(man["n_positions"])
    L = int(man["n_coils"])
    ke = int(man["n_empty"])
    ns = int(man["n_samples"])
    signals = np.empty((m, L, ns))
    for i in range(m):
        for ell in range(L):
            signals[i, ell] = read_vector(
                os.path.join(directory, f"cal_{i:05d}_coil{ell}.vec")
            )
    empty = np.empty((ke, L, ns))
    for k in range(ke):
        for ell in range(L):
            empty[k, ell] = read_vector(
                os.path.join(directory, f"empty_{k:05d}_coil{ell}.vec")
            )
    return CalibrationSet(
        signals=signals,
        empty_scans=empty,
        period=float(man["period_s"]),
        schedule=int(man["schedule"]),
        c0=float(man["c0_mmol_l"]),
    )
