"""Command line front end.

Exit codes: 0 success, 2 invalid flags or input data, 3 most simulation
replicates failed to converge, 4 backfitting did not converge during ``fit``.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io, spd
from .errors import (
    BandwidthOutOfRange,
    DegenerateDensity,
    DimensionMismatch,
    NoConvergence,
    NotPositiveDefinite,
    NotSymmetric,
    OutOfDomain,
)
from .geometry import GEOMETRIES
from .sbf import (
    AdditiveFit,
    SampleTable,
    evaluate_rmse,
    component_to_group,
    fit,
    prediction_distances,
    predict,
    select_bandwidth,
)
from .sim import SETTINGS, SimConfig, run_benchmark
from .smoothing import KERNELS, GridSpec, KernelSpec

EXIT_USAGE = 2
EXIT_SIM_FAILED = 3
EXIT_NO_CONVERGENCE = 4


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="spdam", description="Additive regression for SPD matrix responses.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte-Carlo benchmark (settings I/II/III)")
    s.add_argument("--setting", choices=SETTINGS, default="I")
    s.add_argument("--q", type=int, default=3)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--snr", type=float, default=2.0)
    s.add_argument("--metric", choices=sorted(GEOMETRIES), default="log_cholesky")
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", type=Path, required=True, help="report JSON; per-rep CSV goes next to it")
    s.add_argument("--test-size", type=int, default=1000)
    s.add_argument("--bandwidth-constant", type=float, default=None,
                   help="fixed c in h = c n^(-1/5); default is 5-fold CV")
    s.add_argument("--grid-points", type=int, default=101)
    s.add_argument("--calibration-draws", type=int, default=100_000)
    s.add_argument("--test-noise", action="store_true", help="add noise to test responses")
    s.add_argument("--workers", type=int, default=None, help="defaults to MAM_THREADS or CPU count")

    f = sub.add_parser("fit", help="fit a model to a labeled CSV")
    f.add_argument("--data", type=Path, required=True)
    f.add_argument("--metric", choices=sorted(GEOMETRIES), default="log_cholesky")
    f.add_argument("--m", type=int, default=None)
    f.add_argument("--q", type=int, default=None)
    bw = f.add_mutually_exclusive_group()
    bw.add_argument("--bandwidths", type=_floats, default=None)
    bw.add_argument("--cv", action="store_true", help="5-fold CV bandwidth (the default)")
    f.add_argument("--kernel", choices=sorted(KERNELS), default="epanechnikov")
    f.add_argument("--grid-points", type=int, default=101)
    f.add_argument("--rescale", action="store_true", help="min-max rescale predictors to [0, 1]")
    f.add_argument("--tol", type=float, default=1e-6)
    f.add_argument("--max-sweeps", type=int, default=200)
    f.add_argument("--seed", type=int, default=0, help="CV fold assignment")
    f.add_argument("--out", type=Path, required=True)

    pr = sub.add_parser("predict", help="predict SPD responses for new predictors")
    pr.add_argument("--model", type=Path, required=True)
    pr.add_argument("--data", type=Path, required=True)
    pr.add_argument("--out", type=Path, required=True)

    ev = sub.add_parser("eval", help="prediction RMSE on labeled data")
    ev.add_argument("--model", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--out", type=Path, default=None, help="metrics JSON (stdout if omitted)")

    ex = sub.add_parser("export", help="tabulate the group-valued component functions")
    ex.add_argument("--model", type=Path, required=True)
    ex.add_argument("--out", type=Path, required=True)
    ex.add_argument("--points", type=int, default=None, help="evaluation points (default: model grid)")
    return p


def _reps_csv_path(out):
    return out.with_name(out.stem + ".reps.csv")


def cmd_simulate(args):
    try:
        cfg = SimConfig(
            setting=args.setting, q=args.q, n=args.n, snr=args.snr, metric=args.metric,
            reps=args.reps, seed=args.seed, test_size=args.test_size,
            bandwidth_constant=args.bandwidth_constant, grid_points=args.grid_points,
            calibration_draws=args.calibration_draws, test_noise=args.test_noise,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    report = run_benchmark(cfg, workers=args.workers)
    io.write_json(args.out, report.to_json())
    io.write_csv(
        _reps_csv_path(args.out),
        ["rep", "rmse", "bandwidth_constant", "status"],
        [
            [r["rep"], r["rmse"] if r["rmse"] is not None else "",
             r.get("bandwidth_constant", ""), "ok" if r["rmse"] is not None else "no_convergence"]
            for r in report.reps
        ],
    )
    flag = " (single rep, SE undefined)" if report.single_rep else ""
    print(f"rmse_mean={report.rmse_mean:.4f} rmse_se={report.rmse_se:.4f}{flag} failed={report.failed}")
    print(f"wall_clock={time.perf_counter() - t0:.1f}s", file=sys.stderr)
    if report.failed * 2 > cfg.reps:
        return EXIT_SIM_FAILED
    return 0


def _load_model(path):
    try:
        return AdditiveFit.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from None


def _apply_rescale(model, x):
    if model.rescale is None:
        return x
    lo, hi = model.rescale
    return (x - lo) / np.where(hi > lo, hi - lo, 1.0)


def cmd_fit(args):
    header, _ = io.read_numeric_csv(args.data)
    q_guess, m_guess = io.infer_shape(header)
    q = args.q if args.q is not None else q_guess
    m = args.m if args.m is not None else m_guess
    if q < 1 or m < 1:
        raise UsageError("could not determine --q/--m; pass them explicitly")
    _, x, y = io.read_labeled(args.data, q, m)
    rescale = None
    if args.rescale:
        lo, hi = x.min(axis=0), x.max(axis=0)
        rescale = (lo, hi)
        x = (x - lo) / np.where(hi > lo, hi - lo, 1.0)
    try:
        sample = SampleTable(x, y)
    except OutOfDomain:
        raise UsageError("predictors outside [0, 1]; use --rescale") from None
    grid = GridSpec(args.grid_points)
    if args.bandwidths is not None:
        bws = args.bandwidths * q if len(args.bandwidths) == 1 else args.bandwidths
        kernel = KernelSpec(bws, args.kernel)
    else:
        c, bws, _ = select_bandwidth(sample, args.metric, grid, args.kernel, seed=args.seed,
                                     tol=args.tol, max_sweeps=args.max_sweeps)
        print(f"cv bandwidth constant c={c} -> h={bws[0]:.4g}")
        kernel = KernelSpec(bws, args.kernel)
    try:
        model = fit(sample, args.metric, kernel, grid, tol=args.tol, max_sweeps=args.max_sweeps)
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    model.rescale = rescale
    io.write_json(args.out, model.to_dict())
    d = model.diagnostics
    print(
        f"sweeps={d['sweeps']} final_change={d['final_change']:.3g} "
        f"centering={d['centering']:.3g} fixed_point_residual={d['fixed_point_residual']:.3g} "
        f"mean_log_norm={d['mean_log_norm']:.3g}"
    )
    return 0


def cmd_predict(args):
    model = _load_model(args.model)
    _, x = io.read_design(args.data, model.q)
    try:
        pred = predict(model, _apply_rescale(model, x))
    except OutOfDomain as exc:
        raise UsageError(str(exc)) from None
    header = io.tri_names(model.m)
    cols = [io.pack_lower(pred)]
    if model.m == 3:
        header.append("fa")
        cols.append(spd.fractional_anisotropy(pred)[:, None])
    io.write_csv(args.out, header, np.hstack(cols).tolist())
    return 0


def cmd_eval(args):
    model = _load_model(args.model)
    _, x, y = io.read_labeled(args.data, model.q, model.m)
    try:
        test = SampleTable(_apply_rescale(model, x), y)
    except (OutOfDomain, DimensionMismatch) as exc:
        raise UsageError(str(exc)) from None
    dist = prediction_distances(model, test)
    metrics = {"n": int(test.n), "rmse": evaluate_rmse(model, test), "distances": dist.tolist()}
    text = json.dumps(metrics, indent=2)
    if args.out is None:
        print(text)
    else:
        io.write_json(args.out, text)
        print(f"rmse={metrics['rmse']:.6g}")
    return 0


def cmd_export(args):
    model = _load_model(args.model)
    x = model.grid.nodes if args.points is None else np.linspace(0.0, 1.0, args.points)
    header = ["component", "x"] + io.tri_names(model.m) + ["det"] + (["fa"] if model.m == 3 else [])
    rows = []
    for k in range(model.q):
        w = component_to_group(model, k, x)
        extra = [np.linalg.det(w)[:, None]]
        if model.m == 3:
            extra.append(spd.fractional_anisotropy(w)[:, None])
        block = np.hstack([x[:, None], io.pack_lower(w)] + extra)
        rows.extend([k + 1] + r for r in block.tolist())
    io.write_csv(args.out, header, rows)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "export": cmd_export,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, io.DataFormatError, OSError, BandwidthOutOfRange, DegenerateDensity,
            DimensionMismatch, NotPositiveDefinite, NotSymmetric, OutOfDomain) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
