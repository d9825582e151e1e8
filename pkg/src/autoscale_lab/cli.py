"""``autoscale-lab`` command line.

Subcommands: ``stats``, ``train``, ``forecast``, ``simulate``, ``compare``
and ``sweep``.  Every command reads one JSON config (``--config``; defaults
otherwise), takes its root seed from ``--seed`` and writes into ``--out``.
Outputs contain no timestamps or environment details, so re-running a
command with the same inputs rewrites identical bytes.

Errors print one JSON object on stderr and exit nonzero (2 for usage and
configuration problems, 1 for anything raised while running).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from .config import ExperimentConfig, load_config
from .experiment import build_scenario, build_traces, run_scaler, train_model
from .forecast.model import interval_peaks, load_checkpoint, predict, save_checkpoint
from .mpc import ConfigurationError
from .scalers import ScalerConfig
from .trace import TraceError, compute_stats, load_traces

log = logging.getLogger("autoscale_lab")

STATS_COLUMNS = ("lra_id", "minutes", "sigma_daily_peak", "daily_ar", "weekly_ar", "entropy_score", "degenerate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--config", default=default, help="JSON experiment config (defaults if omitted)")
    p.add_argument("--seed", type=int, default=default, help="root seed (unsigned 64-bit)")
    p.add_argument("--out", default=default, help="output directory (default: ./out)")
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="autoscale-lab", description=__doc__.split("\n\n")[0])
    _global_flags(parser, None)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, argparse.SUPPRESS)
        return p

    p = add("stats", "per-LRA trace statistics")
    p.add_argument("--traces", help="trace CSV (epoch_minute,lra_id,qps); overrides the config source")

    add("train", "train the forecaster on the training span")

    p = add("forecast", "rolling forecasts over the evaluation span")
    p.add_argument("--checkpoint", help="checkpoint from 'train' (default: OUT/checkpoint.json)")
    p.add_argument("--horizon", type=int, default=360)

    p = add("simulate", "run one scaler")
    p.add_argument("--scaler", help="scaler label from the config, or a JSON scaler object")
    p.add_argument("--repeat", type=int, default=0, help="repetition index (selects the CPU noise)")
    p.add_argument("--checkpoint", help="reuse a trained forecaster")

    p = add("compare", "run every configured scaler on identical traces and noise")
    p.add_argument("--checkpoint", help="reuse a trained forecaster")
    p.add_argument("--repeats", type=int, help="override the config's repetition count")
    p.add_argument("--write-runs", action="store_true", help="also write per-run CSV/JSON records")

    p = add("sweep", "sensitivity sweep along one axis")
    p.add_argument("--axis", required=True, choices=ev.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--reference", type=float, help="value the normalized columns are relative to")
    p.add_argument("--scaler", help="scaler label from the config, or a JSON scaler object")
    p.add_argument("--checkpoint", help="reuse a trained forecaster")
    p.add_argument("--repeats", type=int, help="override the config's repetition count")
    return parser


# ---------------------------------------------------------------------------
# Helpers


def _config(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _out(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def _pick_scaler(cfg: ExperimentConfig, spec: str | None, fallback: str = "optscaler") -> ScalerConfig:
    if spec is None:
        picks = [s for s in cfg.scalers if s.kind == fallback]
        return picks[-1] if picks else ScalerConfig(kind=fallback)
    if spec.lstrip().startswith("{"):
        try:
            return ScalerConfig.from_dict(json.loads(spec))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"--scaler is not valid JSON: {exc}") from None
    for s in cfg.scalers:
        if s.label == spec:
            return s
    raise ConfigurationError(f"no scaler labelled {spec!r}; configured: {[s.label for s in cfg.scalers]}")


def _model(args, cfg):
    if getattr(args, "checkpoint", None) is None or cfg.forecaster != "model":
        return None
    model, _ = load_checkpoint(args.checkpoint)
    return model


def _metrics_dict(m: ev.SloMetrics) -> dict:
    return m.to_dict()


# ---------------------------------------------------------------------------
# Commands


def cmd_stats(args) -> dict:
    if args.traces:
        ts = load_traces(args.traces)
    else:
        ts = build_traces(_config(args))
    out = _out(args)
    rows = []
    for i, lra in enumerate(ts.lra_ids):
        st = compute_stats(ts.traces[i])
        rows.append({"lra_id": lra, "minutes": ts.length, "sigma_daily_peak": st.sigma_daily_peak,
                     "daily_ar": st.daily_ar, "weekly_ar": st.weekly_ar, "entropy_score": st.entropy_score,
                     "degenerate": st.degenerate})
    with open(out / "stats.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for r in rows:
            w.writerow([r["lra_id"], r["minutes"]] + [repr(r[k]) if isinstance(r[k], float) else r[k]
                                                       for k in STATS_COLUMNS[2:]])
    for r in rows:
        wk = "n/a" if r["weekly_ar"] is None else f"{r['weekly_ar']:.4f}"
        print(f"{r['lra_id']}: sigma_peak={r['sigma_daily_peak']:.4f} daily_ar={r['daily_ar']:.4f} "
              f"weekly_ar={wk} entropy={r['entropy_score']:.4f}" + (" DEGENERATE" if r["degenerate"] else ""))
    return {"stats": str(out / "stats.csv"), "lras": len(rows)}


def cmd_train(args) -> dict:
    cfg = _config(args)
    ts = build_traces(cfg)
    out = _out(args)
    model = train_model(cfg, ts)
    train_span = [ts.start_minute, ts.start_minute + cfg.train_minutes]
    save_checkpoint(out / "checkpoint.json", model,
                    {"lra_ids": ts.lra_ids, "train_span": train_span, "config": cfg.to_dict()})
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss"))
        for i, loss in enumerate(model.loss_history):
            w.writerow((i + 1, repr(float(loss))))
    summary = {"checkpoint": str(out / "checkpoint.json"), "epochs": len(model.loss_history),
               "final_loss": model.final_loss, "train_span": train_span}
    print(_dump(summary))
    return summary


def cmd_forecast(args) -> dict:
    cfg = _config(args)
    out = _out(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"
    model, meta = load_checkpoint(ckpt)
    ts = build_traces(cfg)
    if model.n != ts.n:
        raise ConfigurationError(f"checkpoint has {model.n} LRAs, traces have {ts.n}")
    start = ts.start_minute + cfg.train_minutes
    end = min(start + cfg.eval_minutes, ts.end_minute)
    h = cfg.limits.h
    rf = ev.rolling_forecast(_StaticForecaster(model, ts), ts, start, end, h, args.horizon)
    with open(out / "forecast.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("origin", "lra_id", "step", "minute", "prediction", "actual"))
        for wi, o in enumerate(rf.origins):
            for n, lra in enumerate(ts.lra_ids):
                for k in range(args.horizon):
                    w.writerow((int(o), lra, k + 1, int(o) + 1 + k, repr(float(rf.predictions[n, wi, k])),
                                repr(float(rf.actuals[n, wi, k]))))
    D = args.horizon // h - 1
    if D >= 0:
        pp, pa = interval_peaks(rf.predictions, h, D), interval_peaks(rf.actuals, h, D)
        with open(out / "forecast_peaks.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("origin", "lra_id", "interval", "peak_prediction", "peak_actual"))
            for wi, o in enumerate(rf.origins):
                for n, lra in enumerate(ts.lra_ids):
                    for j in range(D + 1):
                        w.writerow((int(o), lra, j + 1, repr(float(pp[n, wi, j])), repr(float(pa[n, wi, j]))))
    metrics = rf.metrics(h)
    metrics["span"] = [int(start), int(end)]
    ev.write_json(metrics, out / "forecast_metrics.json")
    print(_dump(metrics))
    return metrics


class _StaticForecaster:
    """The checkpointed model as-is, without the simulator's daily retraining."""

    def __init__(self, model, ts):
        self.model, self.ts = model, ts

    def forecast(self, origin, horizon):
        return predict(self.model, self.ts, origin, horizon)


def _write_run(res, out: Path, stem: str, c_star: float) -> dict:
    res.write(out, stem)
    return _metrics_dict(ev.slo_metrics(res, c_star))


def cmd_simulate(args) -> dict:
    cfg = _config(args)
    sc = _pick_scaler(cfg, args.scaler)
    cfg = cfg.with_scalers([sc])
    out = _out(args)
    scn = build_scenario(cfg, model=_model(args, cfg))
    res = run_scaler(scn, sc, args.repeat)
    metrics = _write_run(res, out, "simulate", cfg.c_star)
    summary = {"scaler": sc.label, "repeat": args.repeat, "metrics": metrics,
               "decisions": res.n_decisions, "minutes": len(res)}
    ev.write_json(summary, out / "simulate_metrics.json")
    print(_dump(summary))
    return summary


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label).strip("_")


def cmd_compare(args) -> dict:
    cfg = _config(args)
    out = _out(args)
    n = cfg.repeats if args.repeats is None else args.repeats
    scn = build_scenario(cfg, model=_model(args, cfg))
    results = {}
    for sc in cfg.scalers:
        results[sc.label] = [run_scaler(scn, sc, r) for r in range(n)]
        if args.write_runs:
            for r, res in enumerate(results[sc.label]):
                res.write(out / "runs", f"{_slug(sc.label)}_r{r}")
    rows = ev.compare_rows(results, cfg.scalers, cfg.c_star)
    ev.write_compare_csv(rows, out / "compare.csv")
    red = ev.s_vr_reduction(rows)
    table = ev.format_compare(rows)
    print(table)
    if red is not None:
        print(f"OptScaler vs HAS S_vr reduction (D={red['D']}): {red['reduction_pct']:.1f}%")
    summary = {"rows": [{"label": r.label, "kind": r.kind, "param": r.param, "runs": r.runs,
                         **_metrics_dict(r.metrics)} for r in rows],
               "optscaler_vs_has": red, "eval_window": [scn.eval_start, scn.eval_end], "repeats": n}
    ev.write_json(summary, out / "compare.json")
    return summary


def cmd_sweep(args) -> dict:
    cfg = _config(args)
    out = _out(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--values: {exc}") from None
    if not values:
        raise ConfigurationError("--values is empty")
    if args.axis in ("D", "h", "spike"):
        if any(v != int(v) for v in values):
            raise ConfigurationError(f"{args.axis} values must be integers")
        values = [int(v) for v in values]
    fallback = "autopilot" if args.axis == "percentile" else "optscaler"
    sc = _pick_scaler(cfg, args.scaler, fallback)
    first = ev.sweep_config(cfg, args.axis, values[0], sc)
    scn = build_scenario(first, model=_model(args, cfg))
    rows = ev.sweep(args.axis, values, cfg, reference=args.reference, scaler=sc,
                    repeats=args.repeats, scenario=scn)
    path = out / f"sweep_{args.axis}.csv"
    ev.write_sweep_csv(rows, path)
    print(f"{args.axis:>10} {'S_vr(%)':>8} {'V_sum':>9} {'R_avg':>8} {'S_vr%ref':>9} {'R_avg%ref':>10}")
    for r in rows:
        m = r.metrics.rounded()
        print(f"{r.axis_value:>10g} {m['s_vr']:>8.1f} {m['v_sum']:>9.3f} {m['r_avg']:>8.1f} "
              f"{r.s_vr_norm:>9.1f} {r.r_avg_norm:>10.1f}")
    return {"sweep": str(path), "rows": len(rows)}


COMMANDS = {"stats": cmd_stats, "train": cmd_train, "forecast": cmd_forecast, "simulate": cmd_simulate,
            "compare": cmd_compare, "sweep": cmd_sweep}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (ConfigurationError, UsageError) as exc:
        return _fail("configuration", exc, 2)
    except TraceError as exc:
        return _fail("trace", exc, 1)
    except FileNotFoundError as exc:
        return _fail("missing_file", exc, 1)
    except Exception as exc:  # surfaced as JSON rather than a traceback
        log.debug("command failed", exc_info=True)
        return _fail(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
