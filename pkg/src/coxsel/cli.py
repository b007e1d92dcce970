"""Command-line front end: analyze a CSV, run an experiment grid, or run a
subsampling study.

Every run resolves its configuration from flags layered over an optional
flat key=value config file, validates it before any computation, and writes
a manifest whose hash is stamped into every output file.  Parallelism and
output location are excluded from the hash so reruns at different -j values
byte-match.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from .cox import fit_cox
from .data import CsvSchema, build_risk_index, ingest_csv
from .exceptions import (
    ConfigError,
    ConvergenceError,
    CoxselError,
    CsvParseError,
    DegenerateInformationError,
    FoldingError,
    SchemaError,
    SingularInformationError,
    ValidationError,
)
from .pipelines import PipelineConfig, run_methods
from .simlab import (
    DgpConfig,
    ExperimentGrid,
    full_data_benchmark,
    run_grid,
    run_subsample_study,
)

FIT_METHODS = ("post-lasso", "poor-mans", "triple", "fang")

_PRESETS = {
    "paper-1a": dict(mechanism="a", setting=1),
    "paper-1b": dict(mechanism="b", setting=1),
    "paper-2a": dict(mechanism="a", setting=2),
    "paper-2b": dict(mechanism="b", setting=2),
}

_DESK_GRID = (0.5, 1.0, 2.0)
_FULL_GRID = tuple(0.25 * k for k in range(9))


def _read_config_file(path):
    """Flat key=value lines; blank lines and # comments ignored."""
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, val = line.partition("=")
                values[key.strip().replace("-", "_")] = val.strip()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from None
    return values


def _resolve(args, file_values, key, default, conv=str):
    """Flag value if given, else config-file value, else the default; string
    values from either source go through the converter."""
    val = getattr(args, key, None)
    if val is None and key in file_values:
        val = file_values[key]
    if val is None:
        return default
    if isinstance(val, str) and conv is not str:
        try:
            return conv(val)
        except (TypeError, ValueError):
            raise ConfigError(f"cannot parse {key}={val!r}") from None
    return val


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v != "")


def _names(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _manifest(resolved):
    """Deterministic manifest text and its hash; jobs and outdir stay out of
    the hash so parallelism does not change output bytes."""
    hashed = {k: v for k, v in resolved.items() if k not in ("jobs", "outdir")}
    lines = [f"{k}={hashed[k]}" for k in sorted(hashed)]
    digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()
    body = [f"hash=sha256:{digest}"]
    body += [f"{k}={resolved[k]}" for k in sorted(resolved)]
    return "\n".join(body) + "\n", digest


def _outdir(args, file_values):
    out = _resolve(args, file_values, "outdir", None)
    if out is None:
        out = os.environ.get("COXSEL_OUT_DIR", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path, digest, text):
    with open(path, "w") as fh:
        fh.write(f"# manifest: sha256:{digest}\n")
        fh.write(text)


def _write_csv_rows(path, digest, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest: sha256:{digest}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, digest, record):
    with open(path, "w") as fh:
        json.dump({"manifest": f"sha256:{digest}", **record}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _num(x):
    x = float(x)
    return format(x, ".17g")


# fit


def _schema_from(args, file_values):
    time = _resolve(args, file_values, "time", None)
    status = _resolve(args, file_values, "status", None)
    exposure = _resolve(args, file_values, "exposure", None)
    if not (time and status and exposure):
        raise ConfigError("--time, --status and --exposure are required")
    covs = _resolve(args, file_values, "covariates", None, _names)
    all_other = _resolve(args, file_values, "all_other_columns", False, _bool)
    if covs is not None and all_other:
        raise ConfigError("--covariates and --all-other-columns are mutually exclusive")
    if covs is None and not all_other:
        raise ConfigError("give --covariates or --all-other-columns")
    return CsvSchema(
        time=time, status=status, exposure=exposure,
        covariates=list(covs) if covs is not None else None,
    )


def _pipeline_config(args, file_values, seed_default=0):
    return PipelineConfig(
        cv_folds=_resolve(args, file_values, "folds", 20, int),
        lambda_rule=_resolve(args, file_values, "rule", "1se"),
        exposure_family=_resolve(args, file_values, "family", "auto"),
        seed=_resolve(args, file_values, "seed", seed_default, int),
        ci_level=_resolve(args, file_values, "level", 0.05, float),
    )


def _parse_methods(text, known, default):
    if text is None:
        return default
    items = _names(text)
    if not items:
        raise ConfigError("empty method list")
    if "all" in items:
        return FIT_METHODS
    for m in items:
        if m not in known:
            raise ConfigError(f"unknown method {m!r}")
    return items


def _forced_indices(spec, names):
    out = []
    for item in spec:
        if item.lstrip("-").isdigit():
            out.append(int(item))
        elif item in names:
            out.append(names.index(item))
        else:
            raise ConfigError(f"forced-in column {item!r} not found")
    return tuple(out)


def _report_record(report, names):
    def colnames(idx):
        return None if idx is None else [names[j] for j in idx]

    return {
        "method": report.method,
        "estimate": report.estimate,
        "se": report.se,
        "z": report.z,
        "p_value": report.p_value,
        "ci_low": report.ci_low,
        "ci_high": report.ci_high,
        "level": report.level,
        "selected_outcome": colnames(report.selection.selected_outcome),
        "selected_censoring": colnames(report.selection.selected_censoring),
        "selected_exposure": colnames(report.selection.selected_exposure),
        "union": colnames(report.selection.union_B),
        "sizes": report.selection.sizes,
        "diagnostics": report.diagnostics,
    }


def cmd_fit(args):
    file_values = _read_config_file(args.config) if args.config else {}
    schema = _schema_from(args, file_values)
    methods = _parse_methods(
        _resolve(args, file_values, "method", None), FIT_METHODS + ("double",),
        FIT_METHODS,
    )
    tau = _resolve(args, file_values, "tau", math.inf, float)
    fmt = _resolve(args, file_values, "format", "human")
    if fmt not in ("human", "csv", "json"):
        raise ConfigError("format must be human, csv or json")
    out = _outdir(args, file_values)

    data = ingest_csv(args.input, schema, tau=tau)
    names = list(data.names)
    forced = _forced_indices(
        _resolve(args, file_values, "forced_in", (), _names), names
    )
    config = _pipeline_config(args, file_values)
    config = PipelineConfig(
        cv_folds=config.cv_folds, lambda_rule=config.lambda_rule,
        exposure_family=config.exposure_family, forced_in=forced,
        seed=config.seed, ci_level=config.ci_level,
    )

    resolved = {
        "command": "fit", "input": args.input, "time": schema.time,
        "status": schema.status, "exposure": schema.exposure,
        "covariates": ",".join(names), "tau": tau,
        "methods": ",".join(methods), "folds": config.cv_folds,
        "rule": config.lambda_rule, "family": config.exposure_family,
        "forced_in": ",".join(str(j) for j in forced), "seed": config.seed,
        "level": config.ci_level, "format": fmt,
        "outdir": out, "jobs": 1,
    }
    manifest_text, digest = _manifest(resolved)
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.write(manifest_text)

    reports = run_methods(data, config, methods)
    records = [_report_record(reports[m], names) for m in methods]

    for rec in records:
        _write_json(os.path.join(out, f"report_{rec['method']}.json"), digest, rec)
    header = ["method", "estimate", "se", "z", "p_value", "ci_low", "ci_high",
              "s_beta", "s_eta", "s_gamma", "union_size"]
    rows = [
        [r["method"], _num(r["estimate"]), _num(r["se"]), _num(r["z"]),
         _num(r["p_value"]), _num(r["ci_low"]), _num(r["ci_high"]),
         r["sizes"]["s_beta"],
         "" if r["sizes"]["s_eta"] is None else r["sizes"]["s_eta"],
         "" if r["sizes"]["s_gamma"] is None else r["sizes"]["s_gamma"],
         len(r["union"])]
        for r in records
    ]
    _write_csv_rows(os.path.join(out, "reports.csv"), digest, header, rows)

    trace = []
    for rec in records:
        trace.append(f"[{rec['method']}]")
        for step, key in (("outcome", "selected_outcome"),
                          ("censoring", "selected_censoring"),
                          ("exposure", "selected_exposure"),
                          ("union", "union")):
            val = rec[key]
            trace.append(
                f"  {step}: " + ("n/a" if val is None else ", ".join(val) or "(none)")
            )
    _write_text(os.path.join(out, "selection_trace.txt"), digest, "\n".join(trace) + "\n")

    if fmt == "human":
        print(f"{'method':>10} {'estimate':>9} {'se':>7} {'z':>7} {'p':>9} "
              f"{'95% CI':>19} {'|B|':>4}")
        for r in records:
            ci = f"[{r['ci_low']:+.3f}, {r['ci_high']:+.3f}]"
            print(f"{r['method']:>10} {r['estimate']:+9.4f} {r['se']:7.4f} "
                  f"{r['z']:+7.2f} {r['p_value']:9.2e} {ci:>19} {len(r['union']):>4}")
    elif fmt == "csv":
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
    else:
        json.dump(records, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


# simulate


def _dgp_from(args, file_values):
    preset = _resolve(args, file_values, "preset", None)
    base = dict(n=400, p=30, mechanism="a", rho=0.5, c_a=2.0, setting=1,
                alpha=0.0, eta1=1.0, beta0=0.0, eta0=0.0)
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        base.update(_PRESETS[preset])
    base["n"] = _resolve(args, file_values, "n", base["n"], int)
    base["p"] = _resolve(args, file_values, "p", base["p"], int)
    base["mechanism"] = _resolve(args, file_values, "mechanism", base["mechanism"])
    base["rho"] = _resolve(args, file_values, "rho", base["rho"], float)
    base["c_a"] = _resolve(args, file_values, "ca", base["c_a"], float)
    base["setting"] = _resolve(args, file_values, "setting", base["setting"], int)
    base["alpha"] = _resolve(args, file_values, "alpha", base["alpha"], float)
    base["eta1"] = _resolve(args, file_values, "eta1", base["eta1"], float)
    base["beta0"] = _resolve(args, file_values, "beta0", base["beta0"], float)
    base["eta0"] = _resolve(args, file_values, "eta0", base["eta0"], float)
    base["seed"] = _resolve(args, file_values, "seed", 0, int)
    return DgpConfig(**base)


def cmd_simulate(args):
    file_values = _read_config_file(args.config) if args.config else {}
    template = _dgp_from(args, file_values)
    grid_mode = _resolve(args, file_values, "grid", "desk")
    if grid_mode not in ("desk", "full"):
        raise ConfigError("grid must be desk or full")
    values = _DESK_GRID if grid_mode == "desk" else _FULL_GRID
    b_values = _resolve(args, file_values, "b_values", values, _floats)
    g_values = _resolve(args, file_values, "g_values", values, _floats)
    reps = _resolve(args, file_values, "reps", 500, int)
    level = _resolve(args, file_values, "level", 0.05, float)
    methods = _parse_methods(
        _resolve(args, file_values, "methods", None),
        FIT_METHODS + ("double", "oracle", "cox-all"), FIT_METHODS,
    )
    pipeline = _pipeline_config(args, file_values)
    jobs = _resolve(args, file_values, "jobs", 1, int)
    out = _outdir(args, file_values)

    grid = ExperimentGrid(
        template=template, b_values=b_values, g_values=g_values,
        replications=reps, methods=tuple(methods), level=level,
        pipeline=pipeline,
    )

    resolved = {
        "command": "simulate", "preset": _resolve(args, file_values, "preset", ""),
        "n": template.n, "p": template.p, "mechanism": template.mechanism,
        "rho": template.rho, "ca": template.c_a, "setting": template.setting,
        "alpha": template.alpha, "eta1": template.eta1,
        "beta0": template.beta0, "eta0": template.eta0,
        "seed": template.seed, "grid": grid_mode,
        "b_values": ",".join(_num(v) for v in b_values),
        "g_values": ",".join(_num(v) for v in g_values),
        "reps": reps, "level": level, "methods": ",".join(methods),
        "folds": pipeline.cv_folds, "rule": pipeline.lambda_rule,
        "family": pipeline.exposure_family,
        "outdir": out, "jobs": jobs,
    }
    manifest_text, digest = _manifest(resolved)
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.write(manifest_text)

    result = run_grid(grid, jobs=jobs)

    _write_csv_rows(
        os.path.join(out, "grid.csv"), digest,
        ["method", "b", "g", "reps", "rejections", "rate", "mc_se"],
        [[c.method, _num(c.b), _num(c.g), c.reps, c.rejections,
          _num(c.rate), _num(c.mc_se)] for c in result.cells],
    )
    _write_csv_rows(
        os.path.join(out, "plot_data.csv"), digest,
        ["method", "b", "g", "rate", "mc_se"],
        [[m, _num(b), _num(g), _num(r), _num(s)]
         for m, b, g, r, s in result.plot_rows()],
    )
    summary = {
        "cells": [
            {"method": c.method, "b": c.b, "g": c.g, "reps": c.reps,
             "rejections": c.rejections, "rate": c.rate, "mc_se": c.mc_se,
             "mean_estimate": c.mean_estimate, "mean_se": c.mean_se,
             "failures": c.failures, "reliable": c.reliable}
            for c in result.cells
        ],
    }
    _write_json(os.path.join(out, "summary.json"), digest, summary)
    print(f"wrote grid.csv, plot_data.csv, summary.json to {out}")
    return 0


# subsample


def cmd_subsample(args):
    file_values = _read_config_file(args.config) if args.config else {}
    schema = _schema_from(args, file_values)
    sizes = _resolve(args, file_values, "sizes", None, _floats)
    if not sizes:
        raise ConfigError("--sizes is required")
    sizes = [int(s) for s in sizes]
    draws = _resolve(args, file_values, "draws", 500, int)
    methods = _parse_methods(
        _resolve(args, file_values, "methods", None),
        FIT_METHODS + ("double", "cox-all"),
        ("post-lasso", "poor-mans", "triple", "cox-all"),
    )
    tau = _resolve(args, file_values, "tau", math.inf, float)
    config = _pipeline_config(args, file_values)
    jobs = _resolve(args, file_values, "jobs", 1, int)
    out = _outdir(args, file_values)

    resolved = {
        "command": "subsample", "input": args.input,
        "time": schema.time, "status": schema.status,
        "exposure": schema.exposure,
        "covariates": ",".join(schema.covariates) if schema.covariates else "(all other)",
        "tau": tau, "sizes": ",".join(str(s) for s in sizes), "draws": draws,
        "methods": ",".join(methods), "folds": config.cv_folds,
        "rule": config.lambda_rule, "family": config.exposure_family,
        "seed": config.seed, "level": config.ci_level,
        "outdir": out, "jobs": jobs,
    }
    manifest_text, digest = _manifest(resolved)
    with open(os.path.join(out, "manifest.txt"), "w") as fh:
        fh.write(manifest_text)

    data = ingest_csv(args.input, schema, tau=tau)
    benchmark = full_data_benchmark(data)
    table = run_subsample_study(
        data, benchmark, sizes, draws, config=config, methods=methods, jobs=jobs
    )
    _write_csv_rows(
        os.path.join(out, "subsample.csv"), digest,
        ["n", "method", "bias", "sd", "mean_se", "coverage"],
        [[r.size, r.method, _num(r.bias), _num(r.sd), _num(r.mean_se),
          _num(r.coverage)] for r in table.rows],
    )
    summary = {
        "benchmark": benchmark,
        "rows": [
            {"n": r.size, "method": r.method, "draws": r.draws, "bias": r.bias,
             "sd": r.sd, "mean_se": r.mean_se, "coverage": r.coverage,
             "failures": r.failures, "redraws": r.redraws}
            for r in table.rows
        ],
    }
    _write_json(os.path.join(out, "summary.json"), digest, summary)
    print(f"wrote subsample.csv, summary.json to {out} (benchmark {benchmark:+.4f})")
    return 0


# parser


def _add_common(sp):
    sp.add_argument("--config", help="flat key=value config file; flags override")
    sp.add_argument("--outdir", help="output directory (default $COXSEL_OUT_DIR or .)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--folds", type=int, help="CV folds (default 20)")
    sp.add_argument("--rule", choices=("1se", "min"), help="lambda rule (default 1se)")
    sp.add_argument("--family", choices=("auto", "linear", "logistic"))
    sp.add_argument("--level", type=float, help="test / CI level (default 0.05)")


def _add_schema(sp):
    sp.add_argument("input", help="input CSV")
    sp.add_argument("--time", help="follow-up time column")
    sp.add_argument("--status", help="event indicator column (1=event)")
    sp.add_argument("--exposure", help="exposure column")
    sp.add_argument("--covariates", help="comma-separated covariate columns")
    sp.add_argument("--all-other-columns", dest="all_other_columns",
                    action="store_const", const=True,
                    help="use every remaining column as a covariate")
    sp.add_argument("--tau", type=float, help="administrative end of study")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="coxsel",
        description="Confounder selection and exposure inference for Cox models",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="analyze a CSV")
    _add_schema(fit)
    _add_common(fit)
    fit.add_argument("--method", help="method name(s) or 'all'")
    fit.add_argument("--forced-in", dest="forced_in",
                     help="columns always included in refits (names or indices)")
    fit.add_argument("--format", choices=("human", "csv", "json"))
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run an experiment grid")
    _add_common(sim)
    sim.add_argument("--preset", choices=sorted(_PRESETS))
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--mechanism", choices=("a", "b"))
    sim.add_argument("--rho", type=float)
    sim.add_argument("--cA", dest="ca", type=float)
    sim.add_argument("--setting", type=int, choices=(1, 2))
    sim.add_argument("--alpha", type=float)
    sim.add_argument("--eta1", type=float)
    sim.add_argument("--beta0", type=float)
    sim.add_argument("--eta0", type=float)
    mode = sim.add_mutually_exclusive_group()
    mode.add_argument("--desk", dest="grid", action="store_const", const="desk",
                      help="3x3 grid over {0.5, 1, 2} (default)")
    mode.add_argument("--full", dest="grid", action="store_const", const="full",
                      help="9x9 grid over 0..2 in 0.25 steps")
    sim.add_argument("--b-values", dest="b_values", help="explicit b grid")
    sim.add_argument("--g-values", dest="g_values", help="explicit g grid")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--methods", help="comma list or 'all'")
    sim.add_argument("--jobs", type=int)
    sim.set_defaults(func=cmd_simulate)

    ss = sub.add_parser("subsample", help="subsampling coverage study")
    _add_schema(ss)
    _add_common(ss)
    ss.add_argument("--sizes", help="comma-separated subsample sizes")
    ss.add_argument("--draws", type=int, help="subsamples per size (default 500)")
    ss.add_argument("--methods", help="comma list")
    ss.add_argument("--jobs", type=int)
    ss.set_defaults(func=cmd_subsample)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, CsvParseError, ValidationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ConvergenceError, SingularInformationError,
            DegenerateInformationError, FoldingError,
            np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except CoxselError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())
