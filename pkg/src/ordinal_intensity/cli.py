"""Command-line entry point for reproducible runs.

Subcommands: ingest, fit, score, impute, select-c, forecast, correlate,
simulate.  Options can come from flags and/or a TOML/JSON config file
(--config or the ORDINAL_INTENSITY_CONFIG environment variable); flags win.
Every artifact embeds the resolved command config and seed for provenance.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 sampler failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import timeseries as ts
from .data import DataError, EventArrays, read_tuples_csv, split, write_tuples_csv
from .diagnostics import diagnostics
from .evaluate import (
    baseline_lr,
    baseline_naive,
    baseline_prior,
    evaluate_lr,
    impute,
    select_C,
    summarize_sweep,
)
from .infer import (
    PosteriorSamples,
    SamplerConfig,
    SamplerError,
    sample_posterior,
    score_events,
)
from .model import Hyperparams, ParamsConstrained, generate, sample_prior

CONFIG_ENV_VAR = "ORDINAL_INTENSITY_CONFIG"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_SAMPLER = 3


class ConfigError(Exception):
    """Bad flags, config files, or missing inputs."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to the config exit code
        raise ConfigError(message)


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib  # Python >= 3.11
    except ImportError:
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc


def _add_sampler_flags(parser):
    parser.add_argument("--classes", type=int, default=5, help="latent class count")
    parser.add_argument("--draws", type=int, default=1000)
    parser.add_argument("--warmup", type=int, default=200)
    parser.add_argument("--chains", type=int, default=4)
    parser.add_argument("--target-accept", type=float, default=0.8, dest="target_accept")
    parser.add_argument("--max-depth", type=int, default=10, dest="max_depth")
    parser.add_argument("--workers", type=int, default=1)


def build_parser() -> tuple[_Parser, dict]:
    parser = _Parser(prog="ordinal-intensity", description=__doc__)
    parser.add_argument("--config", default=None, help="TOML/JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", default=None, help="TOML/JSON config file")
        p.add_argument("--seed", type=int, default=0)
        subparsers[name] = p
        return p

    p = add("ingest", help="raw event CSV -> canonical tuple CSV + skip report")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--columns", default=None, help="JSON file mapping column roles to names")
    p.add_argument("--actor-table", default=None, dest="actor_table")
    p.add_argument("--goldstein-table", default=None, dest="goldstein_table")
    p.add_argument("--report", default=None, help="write the skip report JSON here")

    p = add("fit", help="tuple CSV -> posterior JSON-lines + diagnostics JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output directory")
    _add_sampler_flags(p)

    p = add("score", help="per-event intensity estimates from a fitted posterior")
    p.add_argument("--input", required=True)
    p.add_argument("--posterior", required=True)
    p.add_argument("--output", required=True)

    p = add("impute", help="held-out single-site imputation metrics vs baselines")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--site", default="all",
                   choices=list(data_mod.ALL_SITES) + ["all"])
    p.add_argument("--baselines", default="naive,prior,lr",
                   help="comma list from {naive,prior,lr}; empty for none")
    p.add_argument("--train-fraction", type=float, default=0.7, dest="train_fraction")
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    _add_sampler_flags(p)

    p = add("select-c", help="held-out SPPD sweep over latent class counts")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--c-values", default="3,4,5,6,7", dest="c_values")
    p.add_argument("--sweep-seeds", type=int, default=5, dest="sweep_seeds")
    p.add_argument("--cells", default=None, help="also write per-(C, seed) cells here")
    p.add_argument("--train-fraction", type=float, default=0.7, dest="train_fraction")
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    _add_sampler_flags(p)

    p = add("forecast", help="AR/VAR forecasting and Granger tests per location")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--location", required=True)
    p.add_argument("--folds", type=int, default=24)
    p.add_argument("--max-lag", type=int, default=12, dest="max_lag")
    p.add_argument("--external", action="append", default=[],
                   help="external series CSV (month,value); repeatable")
    _add_sampler_flags(p)

    p = add("correlate", help="Pearson correlation matrix of monthly series")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--location", required=True)
    p.add_argument("--external", action="append", default=[])
    _add_sampler_flags(p)

    p = add("simulate", help="draw synthetic tuples (plus true labels)")
    p.add_argument("--output", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--params", default=None, help="parameter pack JSON; default draws from the prior")
    p.add_argument("--params-out", default=None, dest="params_out")
    p.add_argument("--locations", type=int, default=1)
    p.add_argument("--start-month", default="2001-01", dest="start_month")
    p.add_argument("--n-months", type=int, default=24, dest="n_months")
    p.add_argument("--classes", type=int, default=5)

    return parser, subparsers


def _parse_args(argv) -> argparse.Namespace:
    parser, subparsers = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)

    config_path = os.environ.get(CONFIG_ENV_VAR)
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif arg.startswith("--config="):
            config_path = arg.split("=", 1)[1]
    if config_path:
        file_values = _load_config_file(config_path)
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a table of option values")
        for sp in subparsers.values():
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in file_values.items() if k in known})
    return parser.parse_args(argv)


def _provenance(args) -> str:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return "# provenance: " + json.dumps(payload, sort_keys=True)


def _write_csv(path, fieldnames, rows, provenance: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(provenance + "\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _sampler_config(args) -> SamplerConfig:
    try:
        return SamplerConfig(
            draws=args.draws,
            warmup=args.warmup,
            chains=args.chains,
            target_accept=args.target_accept,
            max_tree_depth=args.max_depth,
            seed=args.seed,
            n_jobs=args.workers,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _hyper(args) -> Hyperparams:
    try:
        return Hyperparams(n_classes=args.classes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_arrays(path) -> tuple[list, EventArrays]:
    if not Path(path).exists():
        raise DataError(f"input file not found: {path}")
    tuples = read_tuples_csv(path)
    if not tuples:
        raise DataError(f"no tuples in {path}")
    arrays = EventArrays.from_tuples(tuples)
    arrays.validate()
    return tuples, arrays


def cmd_ingest(args) -> int:
    if not Path(args.input).exists():
        raise DataError(f"input file not found: {args.input}")
    column_map = None
    if args.columns:
        with open(args.columns, encoding="utf-8") as fh:
            column_map = json.load(fh)
    actor_table = data_mod.load_actor_table(args.actor_table) if args.actor_table else None
    goldstein = data_mod.load_goldstein_table(args.goldstein_table) if args.goldstein_table else None
    with open(args.input, encoding="utf-8") as fh:
        records, report = data_mod.load_raw(fh, column_map)
    tuples = [data_mod.make_tuple(r, actor_table, goldstein) for r in records]
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        fh.write(_provenance(args) + "\n")
    with open(args.output, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data_mod.TUPLE_CSV_FIELDS)
        for t in tuples:
            writer.writerow(
                [data_mod.ACTOR_CLASSES[t.subject], f"{t.predicate:.10g}", t.quantifier,
                 data_mod.ACTOR_CLASSES[t.object], t.location, t.month]
            )
    report_doc = report.as_dict()
    if args.report:
        Path(args.report).write_text(json.dumps(report_doc, indent=2), encoding="utf-8")
    print(json.dumps({"ingest": report_doc}), file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    _, arrays = _load_arrays(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    samples = sample_posterior(arrays, _hyper(args), _sampler_config(args))
    samples.to_jsonl(out / "posterior.jsonl")
    report = diagnostics(samples)
    doc = report.as_dict()
    doc["provenance"] = {k: v for k, v in sorted(vars(args).items())}
    (out / "diagnostics.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    if report.notices:
        print("; ".join(report.notices), file=sys.stderr)
    return EXIT_OK


def cmd_score(args) -> int:
    _, arrays = _load_arrays(args.input)
    if not Path(args.posterior).exists():
        raise DataError(f"posterior file not found: {args.posterior}")
    samples = PosteriorSamples.from_jsonl(args.posterior)
    scores = score_events(samples, arrays)
    c = scores.mass.shape[1]
    fields = ["event", "z_mean", "z_mode"] + [f"mass_{k + 1}" for k in range(c)]
    rows = [
        {
            "event": i,
            "z_mean": f"{scores.mean[i]:.8g}",
            "z_mode": int(scores.mode[i]),
            **{f"mass_{k + 1}": f"{scores.mass[i, k]:.8g}" for k in range(c)},
        }
        for i in range(len(scores))
    ]
    _write_csv(args.output, fields, rows, _provenance(args))
    return EXIT_OK


def cmd_impute(args) -> int:
    tuples, _ = _load_arrays(args.input)
    train_t, held_t = split(tuples, args.train_fraction, args.split_seed)
    if not train_t or not held_t:
        raise DataError("train/held-out split left one side empty")
    train = EventArrays.from_tuples(train_t)
    held = EventArrays.from_tuples(held_t)
    hyper = _hyper(args)
    config = _sampler_config(args)
    baselines = [b for b in args.baselines.split(",") if b]
    for b in baselines:
        if b not in ("naive", "prior", "lr"):
            raise ConfigError(f"unknown baseline {b!r}")
    sites = list(data_mod.ALL_SITES) if args.site == "all" else [args.site]

    rows = []
    fitted = sample_posterior(train, hyper, config)
    for site in sites:
        rows += impute(fitted, held, site, method="model").as_rows(args.seed)
        if "naive" in baselines:
            naive = baseline_naive(train, site, hyper, config)
            rows += impute(naive, held, site, observe_sites=(), method="naive").as_rows(args.seed)
        if "prior" in baselines:
            prior = baseline_prior(hyper, config.draws, args.seed)
            rows += impute(prior, held, site, method="prior").as_rows(args.seed)
        if "lr" in baselines:
            rows += evaluate_lr(baseline_lr(train, site), held).as_rows(args.seed)
    _write_csv(args.output, ["site", "method", "metric", "value", "seed"], rows, _provenance(args))
    return EXIT_OK


def cmd_select_c(args) -> int:
    tuples, _ = _load_arrays(args.input)
    train_t, held_t = split(tuples, args.train_fraction, args.split_seed)
    train = EventArrays.from_tuples(train_t)
    held = EventArrays.from_tuples(held_t)
    try:
        c_values = [int(c) for c in args.c_values.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --c-values: {exc}") from exc
    seeds = [args.seed + i for i in range(args.sweep_seeds)]
    cells = select_C(train, held, _hyper(args), c_values, seeds, _sampler_config(args))
    if args.cells:
        cell_rows = [
            {"n_classes": c.n_classes, "seed": c.seed,
             "sppd": "" if c.sppd is None else f"{c.sppd:.8g}",
             "error": c.error or ""}
            for c in cells
        ]
        _write_csv(args.cells, ["n_classes", "seed", "sppd", "error"], cell_rows, _provenance(args))
    summary = summarize_sweep(cells)
    rows = [
        {"n_classes": s["n_classes"],
         "sppd_mean": "" if s["sppd_mean"] is None else f"{s['sppd_mean']:.8g}",
         "sppd_sd": "" if s["sppd_sd"] is None else f"{s['sppd_sd']:.8g}",
         "n_fits": s["n_fits"]}
        for s in summary
    ]
    _write_csv(args.output, ["n_classes", "sppd_mean", "sppd_sd", "n_fits"], rows, _provenance(args))
    return EXIT_OK


def _location_series(arrays: EventArrays, location: str) -> dict[str, ts.IntensitySeries]:
    return {
        "pbar": ts.aggregate_monthly(
            arrays.predicate, arrays.location, arrays.month, location, provenance="predicate"
        ),
        "qbar": ts.aggregate_monthly(
            arrays.quantifier.astype(float), arrays.location, arrays.month, location,
            provenance="quantifier",
        ),
    }


def cmd_forecast(args) -> int:
    _, arrays = _load_arrays(args.input)
    series = _location_series(arrays, args.location)
    series["zbar"] = ts.leakage_safe_z(arrays, args.location, _hyper(args), _sampler_config(args))
    for path in args.external:
        name = Path(path).stem
        series[name] = ts.read_series_csv(path, location=args.location)
    aligned = ts.align_series(list(series.values()))
    series = dict(zip(series.keys(), aligned))
    diffed = {name: ts.difference(s) for name, s in series.items()}

    rows = []
    for name, d in diffed.items():
        adf = ts.adf_test(d)
        rows.append({"location": args.location, "experiment": f"adf:{name}",
                     "metric": "statistic", "value": f"{adf.statistic:.6g}"})
        rows.append({"location": args.location, "experiment": f"adf:{name}",
                     "metric": "stationary", "value": int(adf.reject_5pct)})

    extras = [n for n in diffed if n not in ("pbar", "qbar")]
    for target in ("pbar", "qbar"):
        other = "qbar" if target == "pbar" else "pbar"
        ar_mse = ts.forecast_cv([diffed[target]], target=0, folds=args.folds, max_lag=args.max_lag)
        rows.append({"location": args.location, "experiment": f"ar:{target}->{target}",
                     "metric": "mse", "value": f"{ar_mse:.8g}"})
        for extra in [other] + extras:
            pair = [diffed[target], diffed[extra]]
            var_mse = ts.forecast_cv(pair, target=0, folds=args.folds, max_lag=args.max_lag)
            fit = ts.fit_var(pair, max_lag=args.max_lag)
            granger = ts.granger_test(diffed[extra].values, diffed[target].values, fit.lag)
            tag = f"var:{target}+{extra}->{target}"
            rows.append({"location": args.location, "experiment": tag,
                         "metric": "mse", "value": f"{var_mse:.8g}"})
            rows.append({"location": args.location, "experiment": tag,
                         "metric": "granger_p", "value": f"{granger.p_value:.6g}"})
    _write_csv(args.output, ["location", "experiment", "metric", "value"], rows, _provenance(args))
    return EXIT_OK


def cmd_correlate(args) -> int:
    _, arrays = _load_arrays(args.input)
    series = _location_series(arrays, args.location)
    samples = sample_posterior(arrays, _hyper(args), _sampler_config(args))
    scores = score_events(samples, arrays)
    series["zbar"] = ts.aggregate_monthly(
        scores.mean, arrays.location, arrays.month, args.location,
        provenance="latent", rescale=True,
    )
    for path in args.external:
        series[Path(path).stem] = ts.read_series_csv(path, location=args.location)
    names = list(series)
    aligned = ts.align_series([series[n] for n in names])
    rows = []
    for i, name in enumerate(names):
        row = {"series": name}
        for j, other in enumerate(names):
            row[other] = f"{ts.pearson(aligned[i], aligned[j]):.6g}"
        rows.append(row)
    _write_csv(args.output, ["series"] + names, rows, _provenance(args))
    return EXIT_OK


def cmd_simulate(args) -> int:
    # separate streams so the dataset depends only on (theta, seed), not on
    # whether theta was drawn here or loaded from a file
    theta_seq, data_seq = np.random.SeedSequence(args.seed).spawn(2)
    rng = np.random.default_rng(data_seq)
    if args.params:
        if not Path(args.params).exists():
            raise DataError(f"params file not found: {args.params}")
        theta, hyper = ParamsConstrained.from_json(Path(args.params).read_text(encoding="utf-8"))
        hyper = hyper or Hyperparams(n_classes=theta.n_classes)
    else:
        hyper = _hyper(args)
        theta = sample_prior(hyper, np.random.default_rng(theta_seq))
    try:
        theta.validate()
    except ValueError as exc:
        raise DataError(f"invalid parameter pack: {exc}") from exc
    start = data_mod.month_index(args.start_month)
    arrays, labels = generate(
        theta,
        args.n,
        rng,
        locations=[f"loc-{i}" for i in range(args.locations)],
        month_range=(start, start + args.n_months),
    )
    tuples = arrays.to_tuples()
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        fh.write(_provenance(args) + "\n")
    with open(args.output, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data_mod.TUPLE_CSV_FIELDS) + ["label"])
        for t, z in zip(tuples, labels):
            writer.writerow(
                [data_mod.ACTOR_CLASSES[t.subject], f"{t.predicate:.10g}", t.quantifier,
                 data_mod.ACTOR_CLASSES[t.object], t.location, t.month, int(z) + 1]
            )
    if args.params_out:
        Path(args.params_out).write_text(theta.to_json(hyper), encoding="utf-8")
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "score": cmd_score,
    "impute": cmd_impute,
    "select-c": cmd_select_c,
    "forecast": cmd_forecast,
    "correlate": cmd_correlate,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    try:
        args = _parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SamplerError as exc:
        print(f"sampler failure: {exc}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
