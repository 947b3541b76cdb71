"""Command-line interface.

Exit codes: 0 success, 2 validation failure (schema, configuration,
insufficient data), 3 convergence failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .. import evaluation as ev
from .. import records
from .. import reserve as rs
from ..features import SchemaError, write_csv
from ..quantreg import ConvergenceError
from . import backtest as bt
from .config import ConfigError, load_config
from .data import validate_dataset
from .synthetic import SyntheticSpec, generate_synthetic

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE = 0, 2, 3
log = logging.getLogger("netload")


def _cmd_validate(a) -> int:
    rep = validate_dataset(a.dataset, a.preset, a.target)
    sys.stdout.write(records.dumps(rep.to_record()))
    return EXIT_OK


def _cmd_features(a) -> int:
    cfg = load_config(a.config)
    prep = bt.prepare(cfg)
    out = Path(a.out) if a.out else cfg.output_dir / "features.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(prep.table, out)
    records.write(out.with_name("standardizer.json"), prep.standardizer.to_record())
    return EXIT_OK


def _cmd_fit(a) -> int:
    cfg = load_config(a.config)
    prep = bt.prepare(cfg)
    th = bt.fixed_threshold(cfg) if cfg.threshold != "cv" else bt.cv_threshold(prep, cfg)
    cutoff = bt.refit_cutoff(bt.window_starts(cfg, prep.table.index)[0], cfg.issue_hour)
    train = prep.table.select(cfg.train_start, cutoff)
    fit = bt.fit_models(train, cfg, prep, th.alpha_lo, th.alpha_hi, cfg.tail)
    out = Path(a.out) if a.out else cfg.output_dir / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    records.write(out, {"config": cfg.to_text(), "thresholds": th.to_record(),
                        "standardizer": prep.standardizer.to_record(), "fit": fit.to_record()})
    return EXIT_OK


def _cmd_predict(a) -> int:
    cfg = load_config(a.config)
    prep = bt.prepare(cfg)
    rec = records.read(a.model)
    fit = bt.Fit.from_record(rec["fit"])
    t = prep.table.select(cfg.test_start, cfg.test_end)
    p = bt.predict_rows(fit, t, cfg)
    out = Path(a.out) if a.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    for m in cfg.tail:
        f = bt.forecast_series(p, fit.tails.get(m), cfg, m, fit.alpha_lo, fit.alpha_hi)
        bt.forecast_frame(f, p.y, p.yhat).to_csv(out / f"forecasts_{m}.csv", float_format="%.17g")
    return EXIT_OK


def _cmd_evaluate(a) -> int:
    f, y, _ = bt.read_forecasts(a.forecasts)
    levels = tuple(float(x) for x in a.levels.split(","))
    rep = ev.evaluate(f, y, levels=levels, pinball_levels=levels, seed=a.seed,
                      n_boot=a.n_boot, n_sim=a.n_sim)
    if a.against:
        g, y2, _ = bt.read_forecasts(a.against)
        if not np.array_equal(y, y2, equal_nan=True):
            raise SchemaError("forecast files are not aligned")
        rep.dm["model-vs-reference"] = ev.dm_test(ev.pinball_series(f, y, levels),
                                                  ev.pinball_series(g, y, levels))
    ev.write_report(rep, a.out)
    return EXIT_OK


def _cmd_reserve(a) -> int:
    f, y, _ = bt.read_forecasts(a.forecasts)
    alphas = tuple(float(x) for x in a.alphas.split(","))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    sched = bt.reserve_schedules(f, alphas)
    sd, mean = (1.0, 0.0)
    if a.standardizer:
        st = records.read(a.standardizer)
        sd, mean = float(st["sd"]), float(st["mean"])
    bt.schedule_frame(sched, sd, mean).to_csv(out / "reserve.csv", float_format="%.17g")
    audit = {}
    for al, s in sched.items():
        for side in ("up", "down"):
            au = rs.exceedance_audit(s, y, side)
            audit[f"{al:g}:{side}"] = {"rate": au.rate, "nominal": au.nominal,
                                       "band_hi": au.band_hi, "within": au.within}
    records.write(out / "reserve_audit.json", audit)
    if a.against:
        g, _, _ = bt.read_forecasts(a.against)
        if len(g) != len(f) or not g.index.equals(f.index):
            raise SchemaError("forecast files are not aligned")
        tab = rs.comparison_table(sched, bt.reserve_schedules(g, alphas), alphas)
        rs.write_table(tab, out / "reserve_comparison.csv")
    return EXIT_OK


def _cmd_backtest(a) -> int:
    cfg = load_config(a.config)
    if a.out:
        cfg = cfg.with_(output=str(Path(a.out).resolve()))
    bt.run_backtest(cfg)
    return EXIT_OK


def _cmd_synth(a) -> int:
    spec = SyntheticSpec(n_days=a.days, start=a.start)
    d = generate_synthetic(spec, a.seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(d.table, out / "dataset.csv")
    (out / "holidays.txt").write_text("".join(f"{x.isoformat()}\n" for x in sorted(d.holidays)))
    (out / "school_holidays.txt").write_text(
        "".join(f"{x.isoformat()}\n" for x in sorted(d.school_holidays)))
    oracle = pd.DataFrame({"mu": d.mu, "scale": d.scale},
                          index=d.table.index.strftime(bt.TS_FORMAT))
    oracle.index.name = "timestamp"
    oracle.to_csv(out / "oracle.csv", float_format="%.17g")
    records.write(out / "generator.json", {"seed": a.seed, "spec": spec.to_record(),
                                      "noise": "mu + scale * StudentT(1 / tail_shape) quantile"})
    start = pd.Timestamp(a.start)
    test_start = (start + pd.Timedelta(days=int(a.days * 2 / 3))).normalize().date().isoformat()
    (out / "config.txt").write_text(
        "# generated by `netload synth`\n"
        "dataset = dataset.csv\nholidays = holidays.txt\nschool_holidays = school_holidays.txt\n"
        f"test_start = {test_start}\npreset = gam-point\ntail = none, static, conditional\n"
        f"seed = {a.seed}\noutput = out\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netload", description="Probabilistic net-load forecasting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a dataset against the schema")
    s.add_argument("dataset")
    s.add_argument("--preset", default=None)
    s.add_argument("--target", default="netload")
    s.set_defaults(func=_cmd_validate)

    s = sub.add_parser("features", help="write the engineered feature table")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_features)

    s = sub.add_parser("fit", help="fit all models on data before the test range")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_fit)

    s = sub.add_parser("predict", help="forecast the test range with a fitted model")
    s.add_argument("config")
    s.add_argument("--model", required=True)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_predict)

    s = sub.add_parser("evaluate", help="verification report for a forecast file")
    s.add_argument("forecasts")
    s.add_argument("--out", required=True)
    s.add_argument("--against", help="reference forecasts for a Diebold-Mariano test")
    s.add_argument("--levels", default=",".join(f"{x:g}" for x in np.arange(1, 20) / 20))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-boot", type=int, default=ev.N_BOOT)
    s.add_argument("--n-sim", type=int, default=ev.N_SIM)
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("reserve", help="reserve schedules and comparison table")
    s.add_argument("forecasts")
    s.add_argument("--out", required=True)
    s.add_argument("--alphas", default="0.0001,0.0005,0.001,0.0025")
    s.add_argument("--against", help="reference forecasts to compare with")
    s.add_argument("--standardizer", help="standardizer.json for MW columns")
    s.set_defaults(func=_cmd_reserve)

    s = sub.add_parser("backtest", help="expanding-window backtest with all artifacts")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_backtest)

    s = sub.add_parser("synth", help="generate a synthetic dataset with oracle")
    s.add_argument("--out", required=True)
    s.add_argument("--days", type=int, default=3 * 365)
    s.add_argument("--start", default="2016-01-01")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (SchemaError, ConfigError, bt.TrainingError, ValueError, KeyError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
