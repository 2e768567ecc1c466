"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import compare_models
from .bess import dispatch_report_csv, schedule_csv, simulate_day, simulate_days
from .config import CONFIG_ENV, RunConfig
from .curves import (
    SLOTS,
    Dataset,
    SynthProfile,
    count_meters,
    ingest_readings,
    read_curves_csv,
    read_readings_csv,
    synth_generate,
    write_curves_csv,
)
from .errors import ConfigError, DataError, PeakShaveError
from .sae import (
    ExperimentSetup,
    SaeModel,
    compare_architectures,
    fit_sae,
    reconstruct_array,
    sweep_alpha_beta,
    sweep_mask_value,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _config(args) -> RunConfig:
    return RunConfig.load(args.config, seed=args.seed)


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> None:
    readings = read_readings_csv(args.input)
    meters = args.meters or count_meters(readings)
    data = ingest_readings(readings, meters)
    write_curves_csv(data, args.output)
    print(f"{len(data)} days from {meters} meters -> {args.output}")


def cmd_synth(args) -> None:
    cfg = _config(args)
    profile = SynthProfile(peak_range_kw=(args.peak_low, args.peak_high))
    data = synth_generate(args.days, cfg.seed, profile)
    write_curves_csv(data, args.output)
    print(f"{len(data)} synthetic days -> {args.output}")


def cmd_train(args) -> None:
    cfg = _config(args)
    data = read_curves_csv(args.data)
    fit = fit_sae(cfg.spec(), data, cfg.mask(), cfg.train_config(), cfg.pretrain_config(),
                  loss=cfg.training_loss(), protocol=cfg.protocol)
    fit.model.save(args.model)
    if args.history:
        _write(args.history, fit.history.to_csv())
    print(f"trained {cfg.spec().name} on {len(data)} curves -> {args.model}")


def cmd_forecast(args) -> None:
    model = SaeModel.load(args.model)
    data = read_curves_csv(args.data)
    pred = reconstruct_array(model, data.values)
    write_curves_csv(Dataset(pred, data.tags, data.provenance), args.output)
    stem = Path(args.output)
    mask_path = stem.with_name(stem.stem + ".mask.csv")
    _write(mask_path, "slot,masked\n" + "".join(
        f"{t + 1},{int(not k)}\n" for t, k in enumerate(model.mask.keep)))
    if args.series:
        lines = ["day,slot,observed_kw,forecast_kw,masked"]
        for tag, obs, fc in zip(data.tags, data.values, pred):
            for t in range(SLOTS):
                lines.append(f"{tag},{t + 1},{float(obs[t])!r},{float(fc[t])!r},"
                             f"{int(not model.mask.keep[t])}")
        _write(args.series, "\n".join(lines) + "\n")
    print(f"{len(data)} forecasts -> {args.output}")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    data = read_curves_csv(args.data)
    spec = cfg.spec()
    setup = ExperimentSetup.build(spec, data, cfg.pretrain_config(), cfg.train_fraction, cfg.seed)
    grid = _grid(args.grid)
    if args.param == "mask_value":
        res = sweep_mask_value(spec, setup, cfg.train_config(), grid, cfg.mask(), model=args.model,
                               protocol=cfg.sweep_protocol, n_jobs=cfg.n_jobs)
    else:
        res = sweep_alpha_beta(spec, setup, cfg.train_config(), grid, cfg.mask(),
                               protocol=cfg.protocol, n_jobs=cfg.n_jobs)
    _write(args.output, res.to_csv())
    print(f"{args.param} sweep over {len(res.points)} points, argmin {res.argmin!r} -> {args.output}")


def cmd_simulate(args) -> None:
    cfg = _config(args)
    loads = read_curves_csv(args.data)
    forecasts = read_curves_csv(args.forecast)
    by_tag = dict(zip(forecasts.tags, forecasts.values))
    missing = [t for t in loads.tags if t not in by_tag]
    if missing:
        raise DataError(f"no forecast for day {missing[0]}")
    fc = np.stack([by_tag[t] for t in loads.tags])
    rows = simulate_days(loads.values, fc, loads.tags, cfg.bess(), cfg.window(), cfg.threshold_kw)
    _write(args.output, dispatch_report_csv(rows))
    if args.schedules:
        out = Path(args.schedules)
        out.mkdir(parents=True, exist_ok=True)
        for tag, load, f in zip(loads.tags, loads.values, fc):
            res = simulate_day(load, f, cfg.bess(), cfg.window(), cfg.threshold_kw)["D"]
            _write(out / f"schedule_{tag}.csv", schedule_csv(load, f, res))
    print(f"{len(rows)} days simulated -> {args.output}")


def cmd_compare(args) -> None:
    cfg = _config(args)
    data = read_curves_csv(args.data)
    if args.architectures:
        from .sae import SaeSpec

        specs = [SaeSpec.parse(s, activation=cfg.activation, loss=cfg.loss)
                 for s in args.architectures.split(",")]
        results = compare_architectures(specs, data, cfg.train_config(), cfg.mask(),
                                        pretrain_cfg=cfg.pretrain_config(), k=cfg.folds,
                                        seed=cfg.seed, n_jobs=cfg.n_jobs)
        lines = ["spec,converged_loss,rmse_kw,mape_pct"]
        lines += [f"{r.spec.name},{r.converged_loss!r},{r.rmse_kw!r},{r.mape_pct!r}" for r in results]
        _write(args.output, "\n".join(lines) + "\n")
        if args.history:
            hl = ["spec,iteration,train_loss,val_loss"]
            for r in results:
                for i, (tr, va) in enumerate(zip(r.train_history, r.val_history), start=1):
                    hl.append(f"{r.spec.name},{i},{float(tr)!r},{float(va)!r}")
            _write(args.history, "\n".join(hl) + "\n")
    else:
        table = compare_models(data, cfg.mask(), cfg.spec(), cfg.train_config(), cfg.ann_config(),
                               pretrain_cfg=cfg.pretrain_config(), ann_hidden=cfg.ann_hidden,
                               elm_hidden=cfg.elm_hidden, k=cfg.folds, seed=cfg.seed)
        _write(args.output, table.to_csv())
    print(f"comparison -> {args.output}")


def cmd_report(args) -> None:
    """Render any of the CSV reports as an aligned text table."""
    try:
        with open(args.input, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(str(exc)) from None
    if not rows:
        raise DataError(f"{args.input} is empty")

    def cell(v: str) -> str:
        try:
            return f"{float(v):.{args.digits}f}"
        except ValueError:
            return v

    body = [rows[0]] + [[cell(v) for v in r] for r in rows[1:]]
    widths = [max(len(r[i]) for r in body if i < len(r)) for i in range(len(rows[0]))]
    out = []
    for k, r in enumerate(body):
        out.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    print("\n".join(out))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="peakshave", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help=f"JSON run configuration (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the configured seed")
    p.add_argument("--config", help=f"JSON run configuration (default: ${CONFIG_ENV})")
    p.add_argument("--seed", type=int, help="override the configured seed")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser  # type: ignore[method-assign]

    s = sub.add_parser("ingest", help="aggregate meter readings into daily community curves")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--meters", type=int, help="expected meters per slot (default: distinct ids)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate synthetic daily curves")
    s.add_argument("output")
    s.add_argument("--days", type=int, default=325)
    s.add_argument("--peak-low", type=float, default=250.0)
    s.add_argument("--peak-high", type=float, default=335.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="pretrain and fine-tune a stacked autoencoder")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--history", help="loss-history CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("forecast", help="reconstruct masked slots with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--series", help="long-format observed-vs-forecast CSV for plotting")
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("sweep", help="sensitivity sweep over the mask value or alpha/beta")
    s.add_argument("--data", required=True)
    s.add_argument("--param", choices=["mask_value", "alpha_beta"], default="mask_value")
    s.add_argument("--grid", default=",".join(f"{v:.1f}" for v in np.linspace(0, 1, 11)))
    s.add_argument("--model", choices=["sae", "dae"], default="sae")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("simulate", help="battery dispatch comparison per day")
    s.add_argument("--data", required=True)
    s.add_argument("--forecast", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--schedules", help="directory for per-day ideal-dispatch schedules")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="cross-validated ANN/ELM/SAE table or architecture comparison")
    s.add_argument("--data", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--architectures", help="comma-separated layer lists, e.g. 48-24-48,48-24-12-24-48")
    s.add_argument("--history", help="per-architecture fold-averaged loss histories")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", help="print a CSV report as a text table")
    s.add_argument("input")
    s.add_argument("--digits", type=int, default=2)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except PeakShaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
