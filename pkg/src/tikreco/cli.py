"""Command-line interface.

Subcommands: synth, ingest, whiten, rsvd, solve, select-alpha, bound-check,
compare, bench. Exit codes: 0 success, 1 user error (bad arguments, bad
config, missing files), 2 internal error (including a violated error bound).

Environment:
  TIKRECO_NO_NUMBA=1   run every kernel on the pure-numpy fallback path
  TIKRECO_THREADS=N    cap the compiled kernels' thread pool
"""
import argparse
import os
import sys

import numpy as np

from . import __version__
from ._accel import HAVE_NUMBA
from .bounds import bound_sweep, write_report_csv
from .calib import (
    assemble_system_matrix,
    background_correct,
    band_pass_indices,
    load_calibration,
    rows_for_target,
    select_rows,
    snr_measure,
    stack_signals,
)
from .io_formats import (
    FormatError,
    VoxelGrid,
    read_manifest,
    read_matrix,
    read_vector,
    write_manifest,
    write_matrix,
    write_vector,
)
from .noise import (
    DIAGONAL,
    FULL,
    apply_whitening,
    estimate_covariance,
    save_covariance,
    whitening_from,
)
from .pipeline import (
    ConfigError,
    build_synth_problem,
    compare_methods,
    parse_spectrum,
    run_pipeline,
)
from .results import load_result
from .rsvd import rsvd, save_factors


class UserError(Exception):
    """Invalid invocation or inputs; maps to exit code 1."""


def _cmd_synth(args):
    grid = None
    if args.grid_dims:
        dims = tuple(int(v) for v in args.grid_dims.split(","))
        spacing = tuple(float(v) for v in args.grid_spacing.split(","))
        grid = VoxelGrid(dims=dims, spacing=spacing)
        if grid.size != args.m:
            raise UserError(f"grid size {grid.size} does not match m={args.m}")
    problem = build_synth_problem(
        args.n, args.m, parse_spectrum(args.spectrum),
        seed=args.seed, noise_rel=args.noise_rel,
        hetero_ratio=args.hetero_ratio, repetitions=args.repetitions,
        truth=args.truth, grid=grid,
        cone=None if args.truth != "cone" else {
            "tip_radius_mm": args.cone_tip_radius,
            "apex_angle_deg": args.cone_apex_deg,
            "height_mm": args.cone_height,
            "concentration": args.cone_concentration,
            "axis": args.cone_axis,
        },
    )
    os.makedirs(args.out, exist_ok=True)
    write_matrix(os.path.join(args.out, "A.smx"), problem.A)
    write_vector(os.path.join(args.out, "y.vec"), problem.y_delta)
    write_vector(os.path.join(args.out, "y_true.vec"), problem.y_true)
    write_vector(os.path.join(args.out, "x_true.vec"), problem.x_true)
    write_matrix(os.path.join(args.out, "empty.smx"), problem.empty_scans)
    write_manifest(os.path.join(args.out, "manifest.txt"), {
        "kind": "synth",
        "n": args.n, "m": args.m,
        "spectrum": args.spectrum,
        "seed": args.seed,
        "noise_rel": repr(args.noise_rel),
        "hetero_ratio": repr(args.hetero_ratio),
        "repetitions": args.repetitions,
        "delta": repr(problem.delta),
        "truth": args.truth,
    })
    print(f"synthetic problem ({args.n} x {args.m}) written to {args.out}")
    return 0


def _cmd_ingest(args):
    cal = load_calibration(args.cal)
    j_max = cal.n_samples // 2 - 1
    band = band_pass_indices(args.b1, args.b2, cal.period, j_max)
    if band.size == 0:
        raise UserError("band-pass limits leave no usable frequency index")
    d = snr_measure(cal, band)
    if args.k_rows is not None:
        tau, mask = rows_for_target(d, band, args.k_rows)
        idx, _ = select_rows(d, band, 0.0)  # full-band layout for assembly
    else:
        tau = args.tau
        idx_full, mask = select_rows(d, band, 0.0)
        idx = idx_full
        if args.tau > 0:
            _, mask = select_rows(d, band, args.tau)
    S, v0 = assemble_system_matrix(cal, idx)
    S, v0 = S[mask], v0[mask]
    os.makedirs(args.out, exist_ok=True)
    if args.measurement:
        meas_man = read_manifest(os.path.join(args.measurement, "manifest.txt"))
        signals = np.stack([
            read_vector(os.path.join(args.measurement, f"coil{ell}.vec"))
            for ell in range(cal.n_coils)
        ])
        if float(meas_man.get("period_s", cal.period)) != cal.period:
            raise UserError("measurement period differs from calibration")
        v = stack_signals(signals, cal.period, idx)[mask]
        A, y = background_correct(S, v0, v)
        write_vector(os.path.join(args.out, "y.vec"), y)
    else:
        A = S - v0[:, None]
    write_matrix(os.path.join(args.out, "A.smx"), A)
    write_matrix(os.path.join(args.out, "S.smx"), S)
    write_vector(os.path.join(args.out, "v0.vec"), v0)
    write_manifest(os.path.join(args.out, "manifest.txt"), {
        "kind": "ingest",
        "calibration": os.path.abspath(args.cal),
        "b1_hz": repr(args.b1), "b2_hz": repr(args.b2),
        "tau": repr(float(tau)),
        "rows": int(mask.sum()),
        "columns": cal.n_positions,
    })
    print(f"system matrix {int(mask.sum())} x {cal.n_positions} written to {args.out}")
    return 0


def _cmd_whiten(args):
    A = read_matrix(os.path.join(args.problem, "A.smx"))
    y = read_vector(os.path.join(args.problem, "y.vec"))
    empty = read_matrix(os.path.join(args.problem, "empty.smx"))
    model = estimate_covariance(empty, kind=args.kind)
    W = whitening_from(model, eps_var=args.eps_var)
    A_w, y_w = apply_whitening(W, A, y, mean=model.mean)
    os.makedirs(args.out, exist_ok=True)
    write_matrix(os.path.join(args.out, "A.smx"), A_w)
    write_vector(os.path.join(args.out, "y.vec"), y_w)
    if W.kind == DIAGONAL:
        write_vector(os.path.join(args.out, "weights.vec"), W.weights)
    else:
        write_matrix(os.path.join(args.out, "W.smx"), W.dense)
    save_covariance(os.path.join(args.out, "noise"), model)
    write_manifest(os.path.join(args.out, "manifest.txt"), {
        "kind": "whiten",
        "source": os.path.abspath(args.problem),
        "covariance_kind": args.kind,
        "eps_var": repr(W.eps_var),
        "samples": model.n_samples,
    })
    print(f"whitened system written to {args.out}")
    return 0


def _cmd_rsvd(args):
    A = read_matrix(args.matrix)
    factors = rsvd(A, args.k, oversample=args.oversample,
                   power_iters=args.power_iters, seed=args.seed)
    save_factors(args.out, factors)
    print(
        f"rank-{args.k} factors of {A.shape[0]} x {A.shape[1]} matrix "
        f"written to {args.out} (top singular value {factors.S[0]:.6g})"
    )
    return 0


def _cmd_solve(args):
    summary = run_pipeline(args.config, args.out)
    for mname, result in summary["results"].items():
        print(
            f"{mname}: alpha={result.alpha:.3g} iterations={result.iterations} "
            f"residual={result.residual_norm:.6g} time={result.wall_time_s:.4f}s"
        )
    for mname, outcome in summary["rules"].items():
        if outcome.found:
            print(f"{mname}: {outcome.rule} picked alpha={outcome.alpha:.6g} "
                  f"(index {outcome.index})")
        else:
            print(f"{mname}: {outcome.rule} found no admissible alpha")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_select_alpha(args):
    import tempfile

    lines = [
        "[problem]", "kind = files",
        f"matrix = {os.path.abspath(args.matrix)}",
        f"rhs = {os.path.abspath(args.rhs)}",
    ]
    if args.truth:
        lines.append(f"truth_file = {os.path.abspath(args.truth)}")
    if args.empty:
        lines.append(f"empty = {os.path.abspath(args.empty)}")
    lines += ["", f"[method {args.method}]"]
    if args.k is not None:
        lines.append(f"k = {args.k}")
    lines += [
        "", "[select]",
        f"rule = {args.rule}",
        f"alpha0 = {args.alpha0}",
        f"q = {args.q}",
        f"count = {args.count}",
        f"sweeps = {args.sweeps}",
    ]
    if args.delta is not None:
        lines.append(f"delta = {args.delta}")
        lines.append(f"tau = {args.tau}")
    if args.fallback_min_residual:
        lines.append("fallback_min_residual = true")
    lines += ["", "[run]", "repeats = 1", f"normalize = {str(args.normalize).lower()}"]
    with tempfile.NamedTemporaryFile(
        "w", suffix=".cfg", delete=False, dir=args.out if os.path.isdir(args.out) else None
    ) as fh:
        fh.write("\n".join(lines) + "\n")
        cfg_path = fh.name
    try:
        summary = run_pipeline(cfg_path, args.out)
    finally:
        os.unlink(cfg_path)
    outcome = summary["rules"][args.method]
    if outcome.found:
        print(f"{outcome.rule}: alpha = {outcome.alpha:.8g} (index {outcome.index})")
    else:
        print(f"{outcome.rule}: no admissible alpha on the grid")
    print(f"diagnostics in {os.path.join(args.out, f'select_{args.method}.csv')}")
    return 0


def _cmd_bound_check(args):
    reports = bound_sweep(
        n=args.n, m=args.m, seeds=range(args.seeds), constrained=args.constrained
    )
    write_report_csv(args.out, reports)
    n_ok = sum(r.holds and r.mixed_holds for r in reports)
    print(f"{n_ok}/{len(reports)} instances satisfy both inequalities "
          f"(report: {args.out})")
    if n_ok != len(reports):
        print("BOUND VIOLATION: the error estimate failed on a valid instance",
              file=sys.stderr)
        return 2
    return 0


def _cmd_compare(args):
    results = {}
    for prefix in args.results:
        name = os.path.basename(prefix)
        results[name] = load_result(prefix)
    truth = read_vector(args.truth) if args.truth else None
    report = compare_methods(results, truth=truth)
    for name, entry in report["methods"].items():
        line = (f"{name}: residual={entry['residual_norm']:.6g} "
                f"time={entry['wall_time_s']:.4f}s alpha={entry['alpha']:.3g}")
        if "relative_error" in entry:
            line += f" rel_error={entry['relative_error']:.6g}"
        print(line)
    for (a, b), dist in report["pairwise"].items():
        print(f"|| {a} - {b} || = {dist:.6g}")
    return 0


def _cmd_bench(args):
    from .bench import bench_kernels, bench_methods

    if args.kernels:
        rows = bench_kernels(n=args.n, m=args.m, repeats=args.repeats,
                             sweeps=args.sweeps, seed=args.seed)
        print("backend,mean_s,std_s,median_s,max_abs_diff")
        for backend, mean_s, std_s, median_s, diff in rows:
            print(f"{backend},{mean_s:.6f},{std_s:.6f},{median_s:.6f},{diff:.3e}")
    else:
        methods = tuple(args.methods.split(","))
        rows = bench_methods(
            n=args.n, m=args.m, k=args.k, repeats=args.repeats,
            sweeps=args.sweeps, methods=methods, seed=args.seed,
            include_preprocessing=args.include_preprocessing,
        )
        print("method,k,mean_s,std_s,median_s")
        for name, k, mean_s, std_s, median_s in rows:
            print(f"{name},{k},{mean_s:.6f},{std_s:.6f},{median_s:.6f}")
    if args.out:
        with open(args.out, "w") as fh:
            if args.kernels:
                fh.write("backend,mean_s,std_s,median_s,max_abs_diff\n")
                for backend, mean_s, std_s, median_s, diff in rows:
                    fh.write(f"{backend},{mean_s:.6f},{std_s:.6f},"
                             f"{median_s:.6f},{diff:.3e}\n")
            else:
                fh.write("method,k,mean_s,std_s,median_s\n")
                for name, k, mean_s, std_s, median_s in rows:
                    fh.write(f"{name},{k},{mean_s:.6f},{std_s:.6f},{median_s:.6f}\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tikreco",
        description="Regularized nonnegative reconstruction for calibrated "
                    "linear systems.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic problem directory")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--spectrum", default="algebraic:2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-rel", type=float, default=0.01)
    p.add_argument("--hetero-ratio", type=float, default=1.0)
    p.add_argument("--repetitions", type=int, default=50)
    p.add_argument("--truth", choices=["uniform", "sparse", "cone"],
                   default="uniform")
    p.add_argument("--grid-dims", default="")
    p.add_argument("--grid-spacing", default="1,1,1")
    p.add_argument("--cone-tip-radius", type=float, default=1.0)
    p.add_argument("--cone-apex-deg", type=float, default=10.0)
    p.add_argument("--cone-height", type=float, default=22.0)
    p.add_argument("--cone-concentration", type=float, default=50.0)
    p.add_argument("--cone-axis", default="z")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="build a system matrix from calibration scans")
    p.add_argument("--cal", required=True, help="calibration directory")
    p.add_argument("--b1", type=float, default=0.0, help="band low edge, Hz")
    p.add_argument("--b2", type=float, default=float("inf"), help="band high edge, Hz")
    p.add_argument("--tau", type=float, default=0.0, help="quality threshold")
    p.add_argument("--k-rows", type=int, default=None,
                   help="keep exactly this many rows (even)")
    p.add_argument("--measurement", default=None,
                   help="directory with coil<l>.vec time signals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("whiten", help="estimate noise and whiten a problem")
    p.add_argument("--problem", required=True,
                   help="directory with A.smx, y.vec, empty.smx")
    p.add_argument("--kind", choices=[DIAGONAL, FULL], default=DIAGONAL)
    p.add_argument("--eps-var", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_whiten)

    p = sub.add_parser("rsvd", help="compute rank-k factors of a stored matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--oversample", type=int, default=5)
    p.add_argument("--power-iters", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rsvd)

    p = sub.add_parser("solve", help="run a pipeline config")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("select-alpha", help="run a parameter choice rule")
    p.add_argument("--matrix", required=True)
    p.add_argument("--rhs", required=True)
    p.add_argument("--truth", default=None)
    p.add_argument("--empty", default=None)
    p.add_argument("--method", default="STD")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--rule", choices=["qo", "dp"], default="qo")
    p.add_argument("--alpha0", type=float, default=100.0)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--tau", type=float, default=1.1)
    p.add_argument("--fallback-min-residual", action="store_true")
    p.add_argument("--no-normalize", action="store_false", dest="normalize")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select_alpha)

    p = sub.add_parser("bound-check", help="verify the perturbation error bound")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--seeds", type=int, default=7)
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--out", default="bound_report.csv")
    p.set_defaults(func=_cmd_bound_check)

    p = sub.add_parser("compare", help="compare stored reconstruction results")
    p.add_argument("results", nargs="+",
                   help="result prefixes (without .csv/.meta)")
    p.add_argument("--truth", default=None, help="truth vector file")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("bench", help="timing comparison (methods or kernels)")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--m", type=int, default=400)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default="STD,rSVD1,rSVD2")
    p.add_argument("--include-preprocessing", action="store_true")
    p.add_argument("--kernels", action="store_true",
                   help="compare numba vs numpy backends instead of methods")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None):
    threads = os.environ.get("TIKRECO_THREADS")
    if threads and HAVE_NUMBA:
        import numba

        numba.set_num_threads(max(1, int(threads)))

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UserError, ConfigError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report, preserve partial artifacts
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
