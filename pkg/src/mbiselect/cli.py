"""Command-line interface: fit a CSV dataset, run benchmark settings,
dump imputed views, or produce covariance diagnostics.

Exit codes: 2 parse/usage error, 3 pattern violation, 4 fit failure.
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np

from . import diagnostics, simulation, tuning
from .errors import (EmptyDonor, FitPathError, InitFailed, MbiError,
                     NoCompleteGroup, NonBlockRow)
from .imputation import build_views, dump_views_csv
from .patterns import detect_patterns, read_csv_dataset

EXIT_PARSE = 2
EXIT_PATTERN = 3
EXIT_FIT = 4


def _read_config(path):
    """Flat key=value file mirroring the long flags."""
    out = {}
    for lineno, line in enumerate(pathlib.Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MbiError(f"{path}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mbiselect",
        description="Variable selection for block-wise missing multi-source data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value file supplying flag defaults")
        sp.add_argument("--seed", type=int, default=0, help="master seed (printed)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out-dir", default=".", help="output directory")
        sp.add_argument("--verbose", action="store_true")

    def data_flags(sp):
        sp.add_argument("--data", required=True, help="CSV path, NA = missing")
        sp.add_argument("--response", required=True, help="response column name")
        sp.add_argument("--sources", required=True,
                        help="1-based inclusive spans, e.g. 1-12,13-24,25-40")

    sp = sub.add_parser("fit", help="fit a dataset and write the selected model")
    common(sp)
    data_flags(sp)
    sp.add_argument("--lambda", dest="lam", default="auto",
                    help='comma list of penalty levels or "auto"')
    sp.add_argument("--dump-imputations", action="store_true")

    sp = sub.add_parser("simulate", help="run a benchmark setting")
    common(sp)
    sp.add_argument("--setting", type=int, required=True, choices=range(1, 7))
    sp.add_argument("--rho", type=float, default=None)
    sp.add_argument("--reps", type=int, default=50)
    sp.add_argument("--methods", default="proposed,cc,si")
    sp.add_argument("--out", default="results.csv")

    sp = sub.add_parser("impute", help="write every (group, donor) imputed view")
    common(sp)
    data_flags(sp)

    sp = sub.add_parser("diagnose", help="coefficient covariance and efficiency gap")
    common(sp)
    data_flags(sp)
    sp.add_argument("--lambda", dest="lam", default="auto")
    return parser


def _apply_config(args):
    if getattr(args, "config", None):
        overrides = _read_config(args.config)
        for key, val in overrides.items():
            if not hasattr(args, key):
                raise MbiError(f"unknown config key {key!r}")
            current = getattr(args, key)
            if isinstance(current, bool):
                val = val.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                val = int(val)
            elif isinstance(current, float):
                val = float(val)
            setattr(args, key, val)
    return args


def _load(args):
    data, names = read_csv_dataset(args.data, args.response, args.sources)
    idx = detect_patterns(data)
    return data, names, idx


def _grid(args, data, idx):
    if args.lam == "auto":
        return tuning.default_grid(data, idx)
    return np.array([float(tok) for tok in args.lam.split(",")], dtype=float)


def _summary_text(idx, path_result):
    lines = ["groups found:"]
    for r in range(idx.n_groups):
        donors = "{" + ",".join(str(k + 1) for k in idx.donors[r]) + "}"
        lines.append(
            f"  group {r + 1}: n={idx.group_sizes[r]}, observed columns="
            f"{idx.observed_sets[r].size}, donors G({r + 1})={donors}"
        )
    fit = path_result.selected_fit
    lines.append(f"selected lambda: {path_result.selected_lambda:.6g}")
    lines.append(f"active coefficients: {fit.df}")
    lines.append("reduction per group (group, complete-part dim, rest dim, kept t1, kept t2, reduced):")
    for row in fit.reduction_summary:
        lines.append(f"  group {row[0] + 1}: d1={row[1]} d2={row[2]} t1={row[3]} t2={row[4]} "
                     f"{'reduced' if row[5] else 'identity'}")
    return "\n".join(lines) + "\n"


def _write_fit_outputs(out_dir, names, path_result, idx):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fit = path_result.selected_fit
    coef_path = out / "coefficients.csv"
    with open(coef_path, "w") as fh:
        fh.write("name,coefficient,selected\n")
        selected = set(fit.active_set.tolist())
        for j, name in enumerate(names):
            fh.write(f"{name},{fit.beta_hat[j]:.17g},{int(j in selected)}\n")
    path_path = out / "path.csv"
    with open(path_path, "w") as fh:
        fh.write("lambda,rss,df,bic,converged,active_size\n")
        for lam, rss_v, df, bic, conv, nact in path_result.table_rows():
            fh.write(f"{lam:.17g},{rss_v:.17g},{df},{bic:.17g},{int(conv)},{nact}\n")
    summary_path = out / "summary.txt"
    summary_path.write_text(_summary_text(idx, path_result))
    return coef_path, path_path, summary_path


def cmd_fit(args):
    data, names, idx = _load(args)
    views = build_views(data, idx, seed=args.seed)
    grid = _grid(args, data, idx)
    path_result = tuning.run_path(data, idx, views, grid, seed=args.seed,
                                  threads=args.threads)
    paths = _write_fit_outputs(args.out_dir, names, path_result, idx)
    if args.dump_imputations:
        dump_views_csv(views, args.out_dir)
    print(f"seed: {args.seed}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_simulate(args):
    spec = simulation.make_setting(args.setting, rho=args.rho,
                                   replications=args.reps, seed=args.seed)
    methods = tuple(tok.strip() for tok in args.methods.split(",") if tok.strip())
    rows = simulation.run_setting(spec, methods=methods, threads=args.threads,
                                  verbose=args.verbose)
    out = pathlib.Path(args.out_dir) / args.out
    pathlib.Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    simulation.write_metrics_csv(rows, out)
    print(f"seed: {args.seed}")
    for r in rows:
        print(f"{r.method}: FNR={r.fnr:.3f} FPR={r.fpr:.3f} "
              f"FNR+FPR={r.fnr_plus_fpr:.3f} (reps used {r.reps_used})")
    print(f"wrote {out}")
    return 0


def cmd_impute(args):
    data, _names, idx = _load(args)
    views = build_views(data, idx, seed=args.seed)
    paths = dump_views_csv(views, args.out_dir)
    print(f"seed: {args.seed}")
    print(f"wrote {len(paths)} view files to {args.out_dir}")
    return 0


def cmd_diagnose(args):
    data, _names, idx = _load(args)
    views = build_views(data, idx, seed=args.seed)
    grid = _grid(args, data, idx)
    path_result = tuning.run_path(data, idx, views, grid, seed=args.seed,
                                  threads=args.threads)
    fit = path_result.selected_fit
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    vhat = diagnostics.empirical_covariance(data, idx, views, fit)
    vhat_path = out / "vhat.csv"
    np.savetxt(vhat_path, vhat, delimiter=",", fmt="%.17g")

    report_path = out / "gap_report.txt"
    lines = [f"seed: {args.seed}",
             f"active set size: {fit.df}"]
    try:
        gap = diagnostics.efficiency_gap(data, idx, views, fit)
        verdict = "PSD" if gap.is_psd() else "NOT PSD"
        lines += [
            f"single-imputation vs full covariance gap, min eigenvalue: {gap.min_eigenvalue:.6e}",
            f"scale (single-imputation spectral norm): {gap.scale:.6e}",
            f"verdict at 1e-8*scale: {verdict}",
        ]
    except NoCompleteGroup:
        lines.append("efficiency gap: not applicable (no complete-case group)")
    report_path.write_text("\n".join(lines) + "\n")
    print(f"seed: {args.seed}")
    print(f"wrote {vhat_path}")
    print(f"wrote {report_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "impute":
            return cmd_impute(args)
        if args.command == "diagnose":
            return cmd_diagnose(args)
        parser.error(f"unknown command {args.command}")
    except (NonBlockRow, EmptyDonor) as exc:
        print(f"pattern violation: {exc}", file=sys.stderr)
        return EXIT_PATTERN
    except (FitPathError, InitFailed) as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (MbiError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    return 0


if __name__ == "__main__":
    sys.exit(main())
