"""Command-line entry point: ``gpdtail <command> [options]``.

Every command writes CSV outputs, a text report and ``run.manifest`` into
``--output``; ``gpdtail rerun --manifest run.manifest`` repeats a run.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .design import (CovariateSchema, ModelSpec, contingency_summary, encode_profile, load_records,
                     load_schema, parse_profile, resolve_references, to_exceedances,
                     write_records)
from .diagnostics import profile_endpoint_table, qq_grid, threshold_sweep
from .errors import DataError, NoFiniteEndpointError, NumericalError, RankDeficientError
from .fit import FitResult, OptimizerOptions, fit_mle, wald_intervals
from .inference import (bootstrap, bootstrap_percentile_ci, contrast_table, endpoint,
                        endpoint_delta_ci, endpoint_functional)
from .kvfile import format_kv, read_kv, write_kv
from .likelihood import ParamVector
from .simulate import load_scenario, scenario_to_kv, simulate_population

logger = logging.getLogger("gpdtail")

EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
MANIFEST = "run.manifest"


class NotConverged(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if math.isfinite(x) else ("nan" if math.isnan(x) else str(float(x)))
    return str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _options(args) -> OptimizerOptions:
    return OptimizerOptions(max_iter=args.max_iter, grad_tol=args.grad_tol, step_tol=args.step_tol)


def _load_inputs(args):
    schema = load_schema(args.schema)
    records = load_records(args.input, schema)
    if not records:
        raise DataError("input contains no records")
    schema = resolve_references(schema, records, args.threshold)
    return schema, records


def _fit(args, schema, records, threshold=None) -> tuple[FitResult, object]:
    u = args.threshold if threshold is None else threshold
    data = to_exceedances(records, ModelSpec(u, schema))
    res = fit_mle(data, options=_options(args))
    if not res.converged and not args.allow_nonconverged:
        raise NotConverged(
            f"fit did not converge ({res.message}, {res.iterations} iterations, "
            f"max |gradient| {res.gradient_norm:.3g}); rerun with --allow-nonconverged to "
            "keep the best point")
    return res, data


def _params_from_file(path, schema: CovariateSchema) -> ParamVector:
    kv = read_kv(path)
    cols = schema.columns
    missing = [c for c in cols + ("xi",) if c not in kv]
    if missing:
        raise DataError(f"{path}: missing parameter(s): {', '.join(missing)}")
    extra = [k for k in kv if k not in cols and k != "xi"]
    if extra:
        raise DataError(f"{path}: unknown parameter(s): {', '.join(extra)}")
    return ParamVector([float(kv[c]) for c in cols], float(kv["xi"]))


def _fit_rows(res: FitResult, level):
    ci = wald_intervals(res, level) if res.converged else np.full((len(res.names), 2), np.nan)
    for name, est, se, (lo, hi) in zip(res.names, res.params, res.se, ci):
        yield name, est, se, lo, hi


def _fit_report(res: FitResult, data, level) -> list[str]:
    lines = [
        f"exceedances: {len(data)} (deaths {data.n_events}, censored {len(data) - data.n_events}, "
        f"truncated {int(np.sum(data.a > 0))}), records below threshold: {data.n_dropped}",
        f"log-likelihood: {res.loglik:.6f}",
        f"converged: {res.converged} after {res.iterations} iterations ({res.message}); "
        f"max |gradient| {res.gradient_norm:.3g}",
        "",
        f"{'parameter':<24}{'estimate':>12}{'se':>12}{'lo':>12}{'hi':>12}   ({level:.0%} Wald)",
    ]
    for name, est, se, lo, hi in _fit_rows(res, level):
        lines.append(f"{name:<24}{est:>12.5f}{se:>12.5f}{lo:>12.5f}{hi:>12.5f}")
    return lines


def cmd_fit(args, out: Path):
    schema, records = _load_inputs(args)
    res, data = _fit(args, schema, records)
    write_csv(out / "fit.csv", ["parameter", "estimate", "se", "ci_lo", "ci_hi"],
              _fit_rows(res, args.level))
    return _fit_report(res, data, args.level)


def _theta_and_cov(args):
    """Fitted (theta, covariance) from data, or injected parameters without covariance."""
    schema = load_schema(args.schema)
    if args.params:
        if not schema.has_references:
            raise DataError("--params needs a schema with every reference marked '*'")
        return schema, _params_from_file(args.params, schema), None, None, None
    if not args.input:
        raise DataError("either --input or --params is required")
    schema, records = _load_inputs(args)
    res, data = _fit(args, schema, records)
    return schema, res.theta_hat, res.covariance, res, data


def cmd_endpoint(args, out: Path):
    schema, theta, cov, res, data = _theta_and_cov(args)
    names = list(schema.names)
    header = names + ["frequency", "x_star", "se", "ci_lo", "ci_hi"]
    rows = []
    if args.profile:
        for text in args.profile:
            prof = parse_profile(text)
            z = encode_profile(prof, schema)
            if cov is not None:
                est = endpoint_delta_ci(theta, z, args.threshold, args.level, covariance=cov)
                x, se, (lo, hi) = est.x_star, est.se, est.ci
            else:
                x, se, lo, hi = endpoint(theta, z, args.threshold), math.nan, math.nan, math.nan
            freq = "" if data is None else int(np.sum(np.all(data.Z == z, axis=1)))
            rows.append([prof[n] for n in names] + [freq, x, se, lo, hi])
    else:
        if res is None:
            raise DataError("the profile table needs --input; pass --profile with --params")
        table = profile_endpoint_table(res, ModelSpec(args.threshold, schema), data,
                                       args.min_frequency, args.level)
        for r in table:
            rows.append([r.labels[n] for n in names] + [r.frequency, r.x_star, r.se, *r.ci])
    write_csv(out / "endpoints.csv", header, rows)
    lines = [f"maximum lifespan at threshold {args.threshold:g} ({len(rows)} profiles)"]
    for r in rows:
        lines.append("  " + " & ".join(r[:len(names)]) + f": {r[len(names) + 1]:.2f}")
    return lines


def cmd_contrast(args, out: Path):
    schema, theta, cov, res, _ = _theta_and_cov(args)
    base = parse_profile(args.base) if args.base else schema.reference_profile()
    rows = contrast_table(theta, schema, base, args.threshold, args.level, covariance=cov)
    write_csv(out / "contrasts.csv", ["covariate", "level", "delta", "se", "ci_lo", "ci_hi"],
              ([r.covariate, r.level, r.delta, r.se, *r.ci] for r in rows))
    x0 = endpoint(theta, encode_profile(base, schema), args.threshold)
    lines = [f"base profile: {', '.join(f'{k}={v}' for k, v in base.items())} -> {x0:.3f}"]
    lines += [f"  {r.covariate:<8}{r.level:<16}{r.delta:+.3f}" for r in rows]
    return lines


def _profiles_for_bootstrap(args, schema, data):
    if args.profile:
        return [parse_profile(p) for p in args.profile]
    return [schema.reference_profile()]


def cmd_bootstrap(args, out: Path):
    schema, records = _load_inputs(args)
    res, data = _fit(args, schema, records)
    run = bootstrap(data, args.B, args.seed, init=res.theta_hat, options=_options(args),
                    threads=args.threads)
    profiles = _profiles_for_bootstrap(args, schema, data)
    rows_z = [encode_profile(p, schema) for p in profiles]
    labels = ["x_star[" + ";".join(f"{k}={v}" for k, v in p.items()) + "]" for p in profiles]
    funcs = [endpoint_functional(z, args.threshold) for z in rows_z]
    header = ["replicate"] + list(res.names) + labels
    write_csv(out / "bootstrap.csv", header,
              ([i, *th.as_array(), *(f(th) for f in funcs)]
               for i, th in zip(run.indices, run.estimates)))
    wald = wald_intervals(res, args.level)
    ci_rows = []
    for j, name in enumerate(res.names):
        blo, bhi = bootstrap_percentile_ci(run, lambda th, j=j: th.as_array()[j], args.level)
        ci_rows.append([name, res.params[j], wald[j, 0], wald[j, 1], blo, bhi])
    if res.xi < 0:
        for lab, z, f in zip(labels, rows_z, funcs):
            est = endpoint_delta_ci(res, z, args.threshold, args.level)
            blo, bhi = bootstrap_percentile_ci(run, f, args.level)
            ci_rows.append([lab, est.x_star, est.ci[0], est.ci[1], blo, bhi])
    write_csv(out / "bootstrap_ci.csv",
              ["quantity", "estimate", "wald_lo", "wald_hi", "boot_lo", "boot_hi"], ci_rows)
    lines = [f"bootstrap: B={run.replicates}, seed={run.seed}, failures={run.failures}"
             + (" (FLAGGED: more than 10% failed)" if run.flagged else "")]
    for r in ci_rows:
        lines.append(f"  {r[0]:<40}{r[1]:>11.4f}  wald ({r[2]:.4f}, {r[3]:.4f})  "
                     f"boot ({r[4]:.4f}, {r[5]:.4f})")
    return lines


def cmd_qq(args, out: Path):
    schema, records = _load_inputs(args)
    res, data = _fit(args, schema, records)
    profile = encode_profile(parse_profile(args.profile[0]), schema) if args.profile else None
    grid = qq_grid(res, data, profile=profile)
    write_csv(out / "qq.csv", ["prob", "theoretical", "empirical"],
              zip(grid.probs, grid.theoretical, grid.empirical))
    lines = [f"Q-Q grid: {len(grid.probs)} levels, {grid.n_deaths} deaths, "
             f"scale {grid.sigma:.4f}, shape {grid.xi:.4f}",
             f"max |theoretical - empirical|: {grid.max_gap:.4f} years",
             "censored exceedances are excluded from the empirical quantiles"]
    if grid.few_deaths:
        lines.append("WARNING: fewer than 100 deaths")
    return lines


def cmd_sweep(args, out: Path):
    schema, records = _load_inputs(args)
    thresholds = [float(x) for x in args.thresholds.split(",")]
    sweep = threshold_sweep(records, schema, thresholds, _options(args), args.level, args.threads)
    header = ["u", "n_exceedances", "converged", "xi", "xi_lo", "xi_hi"]
    for c in sweep.columns:
        header += [c, f"{c}_lo", f"{c}_hi"]
    rows = []
    for r in sweep.rows:
        row = [r.u, r.n_exceedances, r.converged, r.xi, *r.xi_ci]
        for b, (lo, hi) in zip(r.beta, r.beta_ci):
            row += [b, lo, hi]
        rows.append(row)
    write_csv(out / "sweep.csv", header, rows)
    if not all(r.converged for r in sweep.rows) and not args.allow_nonconverged:
        bad = ", ".join(f"{r.u:g}" for r in sweep.rows if not r.converged)
        raise NotConverged(f"sweep fits failed at u = {bad}")
    return [f"u={r.u:g}: n={r.n_exceedances}, xi={r.xi:.4f} ({r.xi_ci[0]:.4f}, {r.xi_ci[1]:.4f})"
            for r in sweep.rows]


def cmd_simulate(args, out: Path):
    cfg = load_scenario(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    records = simulate_population(cfg)
    with open(out / "population.csv", "w", encoding="utf-8", newline="") as fh:
        write_records(records, fh, cfg.schema.names)
    (out / "schema.txt").write_text(cfg.schema.to_text(), encoding="utf-8")
    n_dead = sum(r.event for r in records)
    truth = scenario_to_kv(cfg) + [("n_deaths", str(n_dead)),
                                   ("n_censored", str(len(records) - n_dead))]
    write_kv(out / "truth.txt", truth)
    return [f"simulated {len(records)} individuals (seed {cfg.seed}): {n_dead} deaths, "
            f"{len(records) - n_dead} censored"]


def cmd_summarize(args, out: Path):
    schema = load_schema(args.schema) if args.schema else None
    records = load_records(args.input, schema)
    ages = [float(x) for x in args.age_breaks.split(",")]
    periods = [int(x) for x in args.period_breaks.split(",")] if args.period_breaks else None
    table = contingency_summary(records, ages, periods)
    rows = [[band, *table.counts[i], int(table.row_totals()[i])]
            for i, band in enumerate(table.age_bands)]
    rows.append(["total", *table.column_totals(), table.total])
    write_csv(out / "summary.csv", ["age_band", *table.period_bands, "total"], rows)
    names = sorted({k for r in records for k in r.covariates})
    freq_rows = []
    for name in names:
        counts = {}
        for r in records:
            if r.exit_age > args.threshold:
                counts[r.covariates[name]] = counts.get(r.covariates[name], 0) + 1
        freq_rows += [[name, lvl, c] for lvl, c in sorted(counts.items())]
    write_csv(out / "covariate_frequencies.csv", ["covariate", "level", "count_above_threshold"],
              freq_rows)
    n_dead = sum(r.event for r in records)
    return [f"records: {len(records)} ({n_dead} deaths, {len(records) - n_dead} censored)",
            f"outside the tabulated bands: {table.outside}"]


COMMANDS = {
    "fit": cmd_fit, "endpoint": cmd_endpoint, "contrast": cmd_contrast,
    "bootstrap": cmd_bootstrap, "qq": cmd_qq, "sweep": cmd_sweep,
    "simulate": cmd_simulate, "summarize": cmd_summarize,
}
INPUT_FLAGS = ("input", "schema", "params", "config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpdtail", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gpdtail {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", default="gpdtail-out", help="output directory")
    common.add_argument("--verbose", "-v", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", help="record CSV (entry_age,exit_age,event,<covariates>)")
    data.add_argument("--schema", help="covariate schema file (name = a*,b,c)")
    data.add_argument("--threshold", "-u", type=float, default=100.0)
    data.add_argument("--level", type=float, default=0.95)
    data.add_argument("--max-iter", type=int, default=500)
    data.add_argument("--grad-tol", type=float, default=1e-6)
    data.add_argument("--step-tol", type=float, default=1e-9)
    data.add_argument("--allow-nonconverged", action="store_true")
    data.add_argument("--threads", type=int, default=1)
    data.add_argument("--seed", type=int, default=0)
    data.add_argument("--min-frequency", type=int, default=10,
                      help="only report profiles observed more than this many times")

    p = sub.add_parser("fit", parents=[common, data], help="maximum-likelihood fit")
    for name, helptext in (("endpoint", "profile-specific maximum lifespan"),
                           ("contrast", "one-characteristic endpoint contrasts")):
        p = sub.add_parser(name, parents=[common, data], help=helptext)
        p.add_argument("--params", help="key-value file of (intercept, covariate:level..., xi) "
                                        "used instead of fitting")
        if name == "endpoint":
            p.add_argument("--profile", action="append",
                           help="profile as name=label,...; repeatable")
        else:
            p.add_argument("--base", help="base profile name=label,... (default: all references)")
    p = sub.add_parser("bootstrap", parents=[common, data], help="non-parametric bootstrap")
    p.add_argument("--B", type=int, default=1000, help="number of replicates")
    p.add_argument("--profile", action="append", help="profile(s) for endpoint intervals")
    p = sub.add_parser("qq", parents=[common, data], help="Q-Q quantile grid")
    p.add_argument("--profile", action="append", help="restrict to one profile")
    p = sub.add_parser("sweep", parents=[common, data], help="threshold sensitivity sweep")
    p.add_argument("--thresholds", default="98,99,100,101,102")
    p = sub.add_parser("simulate", parents=[common], help="simulate a population")
    p.add_argument("--config", required=True, help="scenario key-value file")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p = sub.add_parser("summarize", parents=[common], help="descriptive contingency tables")
    p.add_argument("--input", required=True)
    p.add_argument("--schema")
    p.add_argument("--threshold", "-u", type=float, default=100.0)
    p.add_argument("--age-breaks", default="90,95,100,105,110,115,120,130")
    p.add_argument("--period-breaks", default=None, help="calendar-year breaks, e.g. 1995,2000,2005")
    p = sub.add_parser("rerun", parents=[common], help="repeat a run from its manifest")
    p.add_argument("--manifest", required=True)
    return parser


def _validate(args):
    needs_data = args.command in ("fit", "bootstrap", "qq", "sweep")
    if needs_data and not (args.input and args.schema):
        raise DataError(f"{args.command} requires --input and --schema")
    if args.command in ("endpoint", "contrast") and not args.schema:
        raise DataError(f"{args.command} requires --schema")
    if args.command == "bootstrap" and args.B < 1:
        raise DataError("--B must be at least 1")
    if getattr(args, "level", 0.5) is not None and not 0 < getattr(args, "level", 0.5) < 1:
        raise DataError("--level must lie in (0, 1)")
    for flag in INPUT_FLAGS:
        path = getattr(args, flag, None)
        if path and not Path(path).is_file():
            raise DataError(f"--{flag}: no such file {path!r}")


def _manifest(args, argv) -> list[tuple[str, str]]:
    items = [("tool", f"gpdtail {__version__}"), ("python", platform.python_version()),
             ("numpy", np.__version__), ("scipy", scipy.__version__),
             ("command", args.command), ("argv", json.dumps(argv))]
    if getattr(args, "seed", None) is not None:
        items.append(("seed", str(args.seed)))
    for key, value in sorted(vars(args).items()):
        if key in ("command", "output", "verbose"):
            continue
        items.append((f"config.{key}", json.dumps(value)))
    for flag in INPUT_FLAGS:
        path = getattr(args, flag, None)
        if path:
            items.append((f"sha256.{flag}", _sha256(path)))
    return items


def _strip_output(argv):
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("--output", "-o"):
            skip = True
            continue
        if tok.startswith("--output="):
            continue
        out.append(tok)
    return out


def _rerun_argv(args) -> list[str]:
    kv = read_kv(args.manifest)
    argv = json.loads(kv["argv"])
    for key, digest in kv.items():
        if key.startswith("sha256."):
            flag = key[7:]
            ns = build_parser().parse_args(argv + ["--output", args.output])
            path = getattr(ns, flag, None)
            if path is None or not Path(path).is_file() or _sha256(path) != digest:
                raise DataError(f"input --{flag} ({path}) differs from the manifest checksum")
    return _strip_output(argv) + ["--output", args.output]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            argv = _rerun_argv(args)
            args = parser.parse_args(argv)
        _validate(args)
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        lines = COMMANDS[args.command](args, out)
    except (DataError, RankDeficientError, NoFiniteEndpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NotConverged, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    report = "\n".join([f"gpdtail {args.command}", *lines]) + "\n"
    (out / "report.txt").write_text(report, encoding="utf-8")
    (out / MANIFEST).write_text(format_kv(_manifest(args, _strip_output(argv))), encoding="utf-8")
    sys.stdout.write(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())
