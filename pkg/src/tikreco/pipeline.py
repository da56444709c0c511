"""End-to-end orchestration: build/whiten/reduce/solve/select/compare.

A run is described by a flat sectioned config file::

    [problem]
    kind = synth            # or: files
    n = 200
    m = 100
    spectrum = algebraic:2
    seed = 7
    noise_rel = 0.01
    repetitions = 50

    [whiten]
    enabled = true

    [method STD]
    alpha = 0.01
    sweeps = 20

    [method rSVD1]
    alpha = 0.01
    k = 20

    [run]
    repeats = 3

Unknown keys fail with a line-numbered message. Every output directory
carries a manifest with the full config, seeds and module versions, so a
run can be reproduced bit-for-bit (timing numbers aside).
"""
import os
import time

import numpy as np

from . import __version__
from ._accel import HAVE_NUMBA, default_backend
from .calib import normalize_operator
from .direct import filtered_inverse
from .io_formats import (
    VoxelGrid,
    export_slice_image,
    read_matrix,
    read_vector,
    write_manifest,
    write_vector,
)
from .kaczmarz import KaczmarzConfig, kaczmarz_solve, residual_norm
from .noise import (
    DIAGONAL,
    CovarianceModel,
    apply_whitening,
    estimate_covariance,
    whitening_from,
)
from .params import alpha_grid, discrepancy_select, quasi_opt_select
from .results import relative_error, save_result
from .rsvd import rsvd
from .synth import (
    SyntheticProblem,
    algebraic_spectrum,
    cone_phantom,
    explicit_spectrum,
    exponential_spectrum,
    make_problem,
    synth_operator,
)


class ConfigError(ValueError):
    """Config file problem; message carries file:line."""


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def parse_config(path):
    """Parse a sectioned key=value file into [(section, {key: (value, line)})]."""
    sections = []
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise ConfigError(f"{path}:{lineno}: unterminated section header")
                name = line[1:-1].strip()
                if not name:
                    raise ConfigError(f"{path}:{lineno}: empty section name")
                current = (name, {}, lineno)
                sections.append(current)
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if current is None:
                raise ConfigError(f"{path}:{lineno}: key outside any section")
            key, _, value = line.partition("=")
            key = key.strip()
            if key in current[1]:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            current[1][key] = (value.strip(), lineno)
    return sections


_SECTION_KEYS = {
    "problem": {
        "kind", "n", "m", "spectrum", "seed", "noise_rel", "hetero_ratio",
        "repetitions", "truth", "matrix", "rhs", "truth_file", "empty",
        "grid_dims", "grid_spacing", "cone_tip_radius", "cone_apex_deg",
        "cone_height", "cone_concentration", "cone_axis",
    },
    "whiten": {"enabled", "kind", "eps_var"},
    "method": {"alpha", "sweeps", "omega", "k", "oversample", "power_iters",
               "seed", "classic_filter", "stop_tol"},
    "select": {"rule", "alpha0", "q", "count", "sweeps", "tau", "delta",
               "sigma", "eps", "fallback_min_residual"},
    "run": {"repeats", "normalize", "include_preprocessing"},
}

_METHODS = {"STD", "SNR", "rSVD1", "rSVD2"}


def _check_keys(path, name, keys, kind):
    allowed = _SECTION_KEYS[kind]
    for key, (_, lineno) in keys.items():
        if key not in allowed:
            raise ConfigError(
                f"{path}:{lineno}: unknown key {key!r} in section [{name}]"
            )


def _get(keys, name, default=None, cast=str):
    if name not in keys:
        return default
    value, lineno = keys[name]
    try:
        if cast is bool:
            low = value.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        return cast(value)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: cannot parse {name} = {value!r}") from exc


def parse_spectrum(text):
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind == "algebraic":
        return algebraic_spectrum(float(arg))
    if kind == "exponential":
        return exponential_spectrum(float(arg))
    if kind == "explicit":
        return explicit_spectrum([float(v) for v in arg.split(",")])
    raise ConfigError(f"unknown spectrum {text!r}")


# ---------------------------------------------------------------------------
# problem acquisition
# ---------------------------------------------------------------------------

def _to_bool(value):
    if isinstance(value, bool):
        return value
    low = str(value).lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"cannot parse boolean {value!r}")


def _hetero_variances(n, base_var, ratio, rng):
    """Log-spaced per-row variances spanning `ratio`, randomly permuted."""
    if ratio <= 1:
        return np.full(n, base_var)
    spread = np.logspace(0.0, np.log10(ratio), n)
    spread *= n / spread.sum()  # keep the average variance at base_var
    return base_var * rng.permutation(spread)


def build_synth_problem(n, m, spectrum, seed=0, noise_rel=0.01, hetero_ratio=1.0,
                        repetitions=50, truth="uniform", grid=None, cone=None):
    """Seeded synthetic problem with optional phantom truth and backgrounds."""
    A = synth_operator(n, m, spectrum, seed=seed)
    rng = np.random.default_rng(seed + 1)
    if truth == "cone":
        if grid is None or cone is None:
            raise ConfigError("cone truth needs grid and cone parameters")
        x_true = cone_phantom(grid, **cone)
    elif truth == "uniform":
        x_true = rng.uniform(0.0, 1.0, size=m)
    elif truth == "sparse":
        x_true = np.where(rng.uniform(size=m) < 0.2, rng.uniform(1.0, 2.0, m), 0.0)
    else:
        raise ConfigError(f"unknown truth kind {truth!r}")
    y_clean_norm = np.linalg.norm(A @ x_true)
    base_var = (noise_rel * y_clean_norm) ** 2 / max(n, 1)
    variances = _hetero_variances(n, base_var, hetero_ratio, rng)
    noise = CovarianceModel(mean=np.zeros(n), kind=DIAGONAL, variances=variances)
    problem = make_problem(A, x_true, noise, repetitions=repetitions,
                           seed=seed + 2, grid=grid)
    return problem


def _load_files_problem(keys, base_dir):
    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    matrix = _get(keys, "matrix")
    rhs = _get(keys, "rhs")
    if matrix is None or rhs is None:
        raise ConfigError("files problem needs 'matrix' and 'rhs'")
    A = read_matrix(resolve(matrix))
    y = read_vector(resolve(rhs))
    truth = _get(keys, "truth_file")
    x_true = read_vector(resolve(truth)) if truth else None
    empty = _get(keys, "empty")
    empty_scans = read_matrix(resolve(empty)) if empty else None
    noise = None
    delta = float("nan")
    if empty_scans is not None:
        noise = estimate_covariance(empty_scans, kind=DIAGONAL)
    return SyntheticProblem(
        A=A, x_true=x_true, y_true=None, y_delta=y, noise=noise,
        delta=delta, seed=-1, empty_scans=empty_scans,
    )


def _problem_from_section(keys, path, base_dir):
    kind = _get(keys, "kind", "synth")
    if kind == "files":
        return _load_files_problem(keys, base_dir)
    if kind != "synth":
        raise ConfigError(f"unknown problem kind {kind!r}")
    n = _get(keys, "n", cast=int)
    m = _get(keys, "m", cast=int)
    if n is None or m is None:
        raise ConfigError("synth problem needs n and m")
    spectrum = parse_spectrum(_get(keys, "spectrum", "algebraic:2"))
    grid = None
    cone = None
    if "grid_dims" in keys:
        dims = tuple(int(v) for v in _get(keys, "grid_dims").split(","))
        spacing = tuple(
            float(v) for v in _get(keys, "grid_spacing", "1,1,1").split(",")
        )
        grid = VoxelGrid(dims=dims, spacing=spacing)
        if grid.size != m:
            raise ConfigError(f"grid size {grid.size} != m = {m}")
    truth = _get(keys, "truth", "uniform")
    if truth == "cone":
        cone = {
            "tip_radius_mm": _get(keys, "cone_tip_radius", 1.0, float),
            "apex_angle_deg": _get(keys, "cone_apex_deg", 10.0, float),
            "height_mm": _get(keys, "cone_height", 22.0, float),
            "concentration": _get(keys, "cone_concentration", 50.0, float),
            "axis": _get(keys, "cone_axis", "z"),
        }
    return build_synth_problem(
        n, m, spectrum,
        seed=_get(keys, "seed", 0, int),
        noise_rel=_get(keys, "noise_rel", 0.01, float),
        hetero_ratio=_get(keys, "hetero_ratio", 1.0, float),
        repetitions=_get(keys, "repetitions", 50, int),
        truth=truth, grid=grid, cone=cone,
    )


# ---------------------------------------------------------------------------
# method execution
# ---------------------------------------------------------------------------

def quality_scores_from_empty(y, empty_scans):
    """Per-row signal-to-background ratio for problems without coil structure.

    Numerator: deviation of the measurement from the mean background;
    denominator: mean absolute background fluctuation. Rows with zero
    background fluctuation score +inf (maximally trusted).
    """
    empty_scans = np.asarray(empty_scans, dtype=np.float64)
    mean = empty_scans.mean(axis=0)
    den = np.abs(empty_scans - mean).mean(axis=0)
    num = np.abs(np.asarray(y, dtype=np.float64) - mean)
    scores = np.full_like(num, np.inf)
    nz = den > 0
    scores[nz] = num[nz] / den[nz]
    return scores


def top_k_rows(scores, k):
    """Boolean mask keeping the k best-scoring rows (ties by row order)."""
    order = np.lexsort((np.arange(scores.size), -scores))
    mask = np.zeros(scores.size, dtype=bool)
    mask[order[:k]] = True
    return mask


class MethodRunner:
    """Prepares one method's system once, then solves it (repeatably)."""

    def __init__(self, name, params, A, y, empty_scans=None):
        if name not in _METHODS:
            raise ConfigError(f"unknown method {name!r}; pick from {sorted(_METHODS)}")
        self.name = name
        self.alpha = float(params.get("alpha", 0.01))
        self.sweeps = int(params.get("sweeps", 20))
        self.omega = float(params.get("omega", 1.0))
        self.k = None if params.get("k") is None else int(params.get("k"))
        self.prep_time = 0.0
        self._prepare(params, A, y, empty_scans)

    def _prepare(self, params, A, y, empty_scans):
        t0 = time.perf_counter()
        if self.name == "STD":
            self.A, self.y = A, y
        elif self.name == "SNR":
            if self.k is None:
                raise ConfigError("SNR method needs k")
            if empty_scans is None:
                raise ConfigError("SNR method needs background scans")
            scores = quality_scores_from_empty(y, empty_scans)
            mask = top_k_rows(scores, int(self.k))
            self.A, self.y = A[mask], y[mask]
            self.mask = mask
        elif self.name in ("rSVD1", "rSVD2"):
            if self.k is None:
                raise ConfigError(f"{self.name} needs k")
            self.factors = rsvd(
                A, int(self.k),
                oversample=int(params.get("oversample", 5)),
                power_iters=int(params.get("power_iters", 0)),
                seed=int(params.get("seed", 0)),
            )
            self.full_y = y
            if self.name == "rSVD1":
                self.B = self.factors.S[:, None] * self.factors.V.T
            self.classic_filter = _to_bool(params.get("classic_filter", False))
        self.prep_time = time.perf_counter() - t0

    def solve(self, alpha=None):
        alpha = self.alpha if alpha is None else alpha
        if self.name in ("STD", "SNR"):
            cfg = KaczmarzConfig(alpha=alpha, omega=self.omega, sweeps=self.sweeps)
            return kaczmarz_solve(self.A, self.y, cfg, method=self.name)
        if self.name == "rSVD1":
            z = self.factors.U.T @ self.full_y
            cfg = KaczmarzConfig(alpha=alpha, omega=self.omega, sweeps=self.sweeps)
            return kaczmarz_solve(self.B, z, cfg, method=self.name)
        return filtered_inverse(
            self.factors, self.full_y, alpha,
            classic_filter=self.classic_filter, method=self.name,
        )


# ---------------------------------------------------------------------------
# pipeline driver
# ---------------------------------------------------------------------------

def run_pipeline(config_path, out_dir):
    """Execute a config: problem, optional whitening, methods, rules, timing.

    Returns a dict with the problem, per-method results, timing rows and
    rule outcomes; all artifacts land in ``out_dir``.
    """
    sections = parse_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    base_dir = os.path.dirname(os.path.abspath(config_path))

    problem_keys = None
    whiten_keys = {}
    run_keys = {}
    select_keys = None
    method_sections = []
    for name, keys, lineno in sections:
        parts = name.split(None, 1)
        head = parts[0]
        if head == "problem":
            _check_keys(config_path, name, keys, "problem")
            problem_keys = keys
        elif head == "whiten":
            _check_keys(config_path, name, keys, "whiten")
            whiten_keys = keys
        elif head == "run":
            _check_keys(config_path, name, keys, "run")
            run_keys = keys
        elif head == "select":
            _check_keys(config_path, name, keys, "select")
            select_keys = keys
        elif head == "method":
            if len(parts) != 2:
                raise ConfigError(
                    f"{config_path}:{lineno}: method section needs a name, "
                    "e.g. [method STD]"
                )
            _check_keys(config_path, name, keys, "method")
            method_sections.append((parts[1], keys, lineno))
        else:
            raise ConfigError(f"{config_path}:{lineno}: unknown section [{name}]")
    if problem_keys is None:
        raise ConfigError(f"{config_path}: missing [problem] section")
    if not method_sections:
        raise ConfigError(f"{config_path}: no [method ...] sections given")

    problem = _problem_from_section(problem_keys, config_path, base_dir)
    A, y = problem.A, problem.y_delta

    whitened = _get(whiten_keys, "enabled", False, bool)
    if whitened:
        if problem.empty_scans is None:
            raise ConfigError("whitening requested but no background scans exist")
        model = estimate_covariance(
            problem.empty_scans, kind=_get(whiten_keys, "kind", DIAGONAL)
        )
        W = whitening_from(model, eps_var=_get(whiten_keys, "eps_var", None, float))
        A, y = apply_whitening(W, A, y, mean=model.mean)

    scale = 1.0
    if _get(run_keys, "normalize", True, bool):
        A, y, scale = normalize_operator(A, y)

    repeats = _get(run_keys, "repeats", 1, int)
    include_prep = _get(run_keys, "include_preprocessing", False, bool)

    # compile the sweep kernel outside any timed region
    kaczmarz_solve(A[: min(4, A.shape[0])], y[: min(4, A.shape[0])],
                   KaczmarzConfig(alpha=1.0, sweeps=1))

    results = {}
    timing_rows = []
    for mname, keys, lineno in method_sections:
        params = {k: v for k, (v, _) in keys.items()}
        for key in ("alpha", "omega", "stop_tol"):
            if key in params:
                params[key] = float(params[key])
        runner = MethodRunner(mname, params, A, y, problem.empty_scans)
        times = []
        result = None
        for _ in range(max(repeats, 1)):
            t0 = time.perf_counter()
            result = runner.solve()
            times.append(time.perf_counter() - t0)
        if include_prep:
            times = [t + runner.prep_time for t in times]
        results[mname] = result
        timing_rows.append(
            (mname, runner.k if runner.k is not None else "",
             float(np.mean(times)), float(np.std(times)))
        )
        save_result(os.path.join(out_dir, f"x_{mname}"), result)
        if problem.grid is not None:
            nz = problem.grid.dims[2]
            export_slice_image(
                result.x, problem.grid, "z", nz // 2,
                os.path.join(out_dir, f"slice_{mname}_zmid.pgm"),
            )

    with open(os.path.join(out_dir, "timing.csv"), "w") as fh:
        fh.write("method,k,mean_s,std_s\n")
        for mname, k, mean_s, std_s in timing_rows:
            fh.write(f"{mname},{k},{mean_s:.6f},{std_s:.6f}\n")

    rule_outcomes = {}
    if select_keys is not None:
        rule_outcomes = _run_selection(
            select_keys, method_sections, A, y, problem, out_dir
        )

    manifest = {
        "tikreco_version": __version__,
        "numpy_version": np.__version__,
        "backend": default_backend(),
        "numba_available": HAVE_NUMBA,
        "config_file": os.path.abspath(config_path),
        "whitened": whitened,
        "operator_scale": repr(scale),
        "problem_seed": problem.seed,
        "methods": ",".join(m for m, _, _ in method_sections),
    }
    with open(config_path) as fh:
        config_text = fh.read()
    with open(os.path.join(out_dir, "config.echo"), "w") as fh:
        fh.write(config_text)
    write_manifest(os.path.join(out_dir, "manifest.txt"), manifest)

    if problem.x_true is not None:
        write_vector(os.path.join(out_dir, "x_true.vec"), problem.x_true)

    return {
        "problem": problem,
        "results": results,
        "timing": timing_rows,
        "rules": rule_outcomes,
        "scale": scale,
    }


def _run_selection(select_keys, method_sections, A, y, problem, out_dir):
    rule = _get(select_keys, "rule", "qo")
    grid = alpha_grid(
        _get(select_keys, "alpha0", 100.0, float),
        _get(select_keys, "q", 0.5, float),
        _get(select_keys, "count", 50, int),
    )
    sweeps = _get(select_keys, "sweeps", 20, int)
    outcomes = {}
    for mname, keys, _ in method_sections:
        params = {k: v for k, (v, _) in keys.items()}
        runner = MethodRunner(mname, params, A, y, problem.empty_scans)
        runner.sweeps = sweeps
        solutions, residuals = [], []
        for alpha in grid.values:
            res = runner.solve(alpha=float(alpha))
            solutions.append(res.x)
            residuals.append(res.residual_norm)
        if rule == "qo":
            outcome = quasi_opt_select(grid, solutions)
        elif rule == "dp":
            delta = _get(select_keys, "delta", None, float)
            if delta is None:
                outcome = discrepancy_select(
                    grid, residuals, bound=float(min(residuals)),
                    fallback_min_residual=True,
                )
            else:
                from .params import dp_bound

                bound = dp_bound(
                    _get(select_keys, "tau", 1.1, float), delta,
                    _get(select_keys, "sigma", 0.0, float),
                    _get(select_keys, "eps", 0.0, float),
                )
                outcome = discrepancy_select(
                    grid, residuals, bound,
                    fallback_min_residual=_get(
                        select_keys, "fallback_min_residual", False, bool
                    ),
                )
        else:
            raise ConfigError(f"unknown rule {rule!r} (use qo or dp)")
        outcomes[mname] = outcome

        dists = (
            outcome.diagnostics if rule == "qo"
            else [np.linalg.norm(b - a) for a, b in zip(solutions, solutions[1:])]
        )
        with open(os.path.join(out_dir, f"select_{mname}.csv"), "w") as fh:
            fh.write("i,alpha,residual,consecutive_distance,error\n")
            for i, alpha in enumerate(grid.values):
                dist = dists[i] if i < len(grid) - 1 else float("nan")
                err = (
                    relative_error(solutions[i], problem.x_true)
                    if problem.x_true is not None else float("nan")
                )
                fh.write(
                    f"{i},{'%.17g' % alpha},{'%.17g' % residuals[i]},"
                    f"{'%.17g' % dist},{'%.17g' % err}\n"
                )
    return outcomes


# ---------------------------------------------------------------------------
# comparison report
# ---------------------------------------------------------------------------

def compare_methods(results, truth=None):
    """Quantitative cross-method report.

    Returns a dict with per-method residuals/wall times (and relative
    errors when the truth is known) plus pairwise solution distances.
    """
    names = list(results)
    if not names:
        raise ValueError("nothing to compare")
    m = results[names[0]].x.shape[0]
    for name in names:
        if results[name].x.shape[0] != m:
            raise ValueError(f"result {name} has mismatched length")
    report = {"methods": {}, "pairwise": {}}
    for name in names:
        r = results[name]
        entry = {
            "residual_norm": r.residual_norm,
            "wall_time_s": r.wall_time_s,
            "alpha": r.alpha,
            "iterations": r.iterations,
        }
        if truth is not None:
            entry["relative_error"] = relative_error(r.x, truth)
        report["methods"][name] = entry
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            report["pairwise"][(a, b)] = float(
                np.linalg.norm(results[a].x - results[b].x)
            )
    return report
