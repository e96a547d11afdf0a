"""Command-line entry point: ``cirl <command> [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 unparseable input,
4 computation failure, 5 file system error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench, epiestim
from .errors import CirlError, ConfigError, NonFiniteLossError, ParseError
from .io import dump_json, file_sha256, load_json, read_incidence_csv
from .metrics import incidence_errors
from .network import ModelParams
from .renewal import IncidenceSeries
from .report import fmt, format_table, write_plot_csv, write_summary_csv, write_svg
from .synth import read_ensemble, write_ensemble
from .training import forecast

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_COMPUTE = 4
EXIT_IO = 5


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# configuration from file + flags


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", type=Path, help="JSON file with any of the config sections")
    g.add_argument("--set", dest="assign", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable; VALUE is JSON or a bare string)")
    g.add_argument("--epochs", type=int, help="train.epochs")
    g.add_argument("--lr", type=float, help="train.learning_rate")
    g.add_argument("--smooth-weight", type=float, help="train.smooth_weight")
    g.add_argument("--seed", type=int, help="ensemble.base_seed")
    g.add_argument("--replicas", type=int, help="ensemble.n")


_FLAG_KEYS = {
    "epochs": ("train", "epochs"),
    "lr": ("train", "learning_rate"),
    "smooth_weight": ("train", "smooth_weight"),
    "seed": ("ensemble", "base_seed"),
    "replicas": ("ensemble", "n"),
}


def _config(args, base: dict | None = None) -> dict:
    cfg = bench.default_config() if base is None else base
    if args.config is not None:
        cfg = bench.merge_config(cfg, load_json(args.config), str(args.config))
    for text in args.assign:
        cfg = bench.merge_config(cfg, bench.parse_assignment(text), "--set")
    for attr, (section, key) in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg = bench.merge_config(cfg, {section: {key: value}}, f"--{attr.replace('_', '-')}")
    bench.resolve(cfg)
    return cfg


def _read_series(path: Path) -> IncidenceSeries:
    series, _ = read_incidence_csv(path)
    return series


def _epoch_logger(every: int = 100):
    def cb(epoch: int, loss: float) -> None:
        if (epoch + 1) % every == 0:
            _log(f"  epoch {epoch + 1}: loss {loss:.4f}")

    return cb


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ens = bench.build_ensemble(args.scenario, cfg)
    write_ensemble(ens, args.out, {"command": "simulate", "scenario": args.scenario, "tool_version": __version__})
    _log(f"wrote {len(ens)} replicas to {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if args.from_manifest is not None:
        prior = load_json(args.from_manifest)
        if prior.get("format") != "cirl-run" or prior.get("command") != "benchmark":
            raise ConfigError(f"{args.from_manifest}: not a benchmark manifest")
        base = bench.merge_config(bench.default_config(), prior["config"], str(args.from_manifest))
        scenarios = args.scenarios or prior["scenarios"]
    else:
        base = None
        scenarios = args.scenarios or list(bench.SCENARIOS)
    cfg = _config(args, base)
    for name in scenarios:
        bench.scenario_spec(name, cfg)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    summary, detail, inputs = [], [], {}
    for name in scenarios:
        ens = bench.build_ensemble(name, cfg)
        _log(f"[{name}] {len(ens)} replicas")
        inputs[name] = _ensemble_digest(ens)
        results = bench.run_replicas(
            ens, cfg, args.workers,
            lambda r, n=name: _log(f"[{n}] replica {r.index} (seed {r.seed}) done"),
        )
        sdir = out / name
        bench.write_scenario_tables(sdir, ens.spec, results)
        rt_rows = bench.rt_plot_rows(ens, results)
        write_plot_csv(rt_rows, sdir / "rt_bands.csv")
        write_svg(rt_rows, sdir / "rt_bands.svg", f"{name}: R estimates (median, IQR)", "R", hline=1.0)
        inc_rows = bench.incidence_plot_rows(ens, results)
        write_plot_csv(inc_rows, sdir / "incidence_bands.csv")
        write_svg(inc_rows, sdir / "incidence_bands.svg", f"{name}: incidence (median, IQR)", "cases")
        summary += bench.scenario_summary(name, ens.spec, results)
        detail += bench.change_point_summary(name, ens.spec, results)
    write_summary_csv(summary + detail, out / "summary.csv")
    table = format_table(summary)
    (out / "summary.txt").write_text(table)
    print(table, end="")
    outputs = {
        str(p.relative_to(out)): file_sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    dump_json(bench.manifest("benchmark", cfg, scenarios=list(scenarios), inputs=inputs, outputs=outputs),
              out / "manifest.json")
    return EXIT_OK


def _ensemble_digest(ens) -> str:
    import hashlib

    h = hashlib.sha256()
    for rep in ens.replicas:
        h.update(np.ascontiguousarray(rep.observed_incidence.counts, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(rep.raw_incidence.counts, dtype=np.int64).tobytes())
    return h.hexdigest()


def cmd_fit(args) -> int:
    cfg = _config(args)
    r = bench.resolve(cfg)
    series = _read_series(args.input)
    from .training import fit

    res = fit(series, r.gi, r.model, r.train, on_epoch=_epoch_logger() if args.verbose else None)
    res.save(args.out, series)
    dump_json(bench.manifest("fit", cfg, inputs={args.input.name: file_sha256(args.input)}),
              Path(args.out) / "manifest.json")
    _log(f"final loss {res.loss_history[-1]:.6f}; wrote {args.out}")
    return EXIT_OK


def cmd_estimate_baseline(args) -> int:
    cfg = _config(args)
    r = bench.resolve(cfg)
    series = _read_series(args.input)
    est = epiestim.estimate(series, r.gi, r.baseline)
    epiestim.write_csv(est, args.out)
    _log(f"wrote {len(est)} estimates to {args.out}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    cfg = _config(args)
    r = bench.resolve(cfg)
    series = _read_series(args.input)
    held = None
    if args.holdout:
        if args.holdout >= len(series):
            raise ConfigError("--holdout must be shorter than the series")
        held = IncidenceSeries(series.counts[-args.holdout:], series.end - args.holdout + 1)
        series = IncidenceSeries(series.counts[: -args.holdout], series.start)
    if args.params is not None:
        params = ModelParams.load(args.params)
    else:
        from .training import fit

        params = fit(series, r.gi, r.model, r.train, on_epoch=_epoch_logger() if args.verbose else None).params
    rt, lam = forecast(params, series, r.gi, args.horizon)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "rt_hat", "lambda_hat", "observed"])
        for day, rv, lv in zip(rt.days, rt.values, lam.values):
            obs = held.at(int(day)) if held is not None and held.start <= day <= held.end else ""
            w.writerow([int(day), fmt(rv), fmt(lv), obs])
    if held is not None:
        err = incidence_errors(lam, held)
        print(f"holdout days scored: {err.n_valid}  RMSE {err.rmse:.3f}  MAE {err.mae:.3f}")
    _log(f"wrote {args.horizon}-day forecast to {args.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    ens = read_ensemble(args.ensemble)
    cfg = _config(args)
    cfg["gi"] = {"mean_days": ens.gi.mean_days, "sd_days": ens.gi.sd_days, "max_lag": ens.gi.max_lag}
    indices = range(len(ens)) if args.replica is None else [args.replica]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(bench.RECONSTRUCTION_COLUMNS)
        for i in indices:
            if not 0 <= i < len(ens):
                raise ConfigError(f"replica {i} out of range (ensemble has {len(ens)})")
            res = bench.evaluate_replica(i, ens.replicas[i], ens.spec, cfg)
            for method, targets in res.reconstruction.items():
                for target, (rmse, mae) in targets.items():
                    w.writerow([i, res.seed, method, target, fmt(rmse), fmt(mae)])
                    print(f"replica {i} {method:<8} {target:<15} RMSE {rmse:9.3f}  MAE {mae:9.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cirl", description="Reproduction number estimation from daily incidence.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic replica ensemble")
    p.add_argument("--scenario", choices=list(bench.SCENARIOS), default="single")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="compare CIRL with the sliding-window baseline on synthetic scenarios")
    p.add_argument("--scenarios", nargs="+", choices=list(bench.SCENARIOS))
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--from-manifest", type=Path, help="rerun the configuration recorded in a manifest.json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("fit", help="fit CIRL to an incidence CSV")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate-baseline", help="sliding-window Bayesian estimate for an incidence CSV")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_estimate_baseline)

    p = sub.add_parser("forecast", help="fit (or load) CIRL and forecast expected incidence")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--holdout", type=int, default=0, help="hide the last N days and score the forecast on them")
    p.add_argument("--params", type=Path, help="params.npz from a previous fit (skips training)")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("reconstruct", help="incidence reconstruction errors on a simulated ensemble")
    p.add_argument("--ensemble", type=Path, required=True, help="directory written by 'simulate'")
    p.add_argument("--replica", type=int, help="replica index (default: all)")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG
    except ParseError as exc:
        _log(f"parse error: {exc}")
        return EXIT_PARSE
    except (CirlError, NonFiniteLossError, FloatingPointError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_COMPUTE
    except OSError as exc:
        _log(f"file error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
