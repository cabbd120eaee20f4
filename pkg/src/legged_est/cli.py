"""Command-line driver: ``legged-est {simulate,train,run,eval,compare}``.

Errors are reported as one JSON object on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import ekf, logio, metrics, nmn, pipeline, sim, trainer

EXIT_USAGE = 2
EXIT_ERROR = 1


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError("io", f"{path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise CliError("config", f"{path}: {exc}") from None


def _dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------------- simulate


def cmd_simulate(args) -> dict:
    terrain = _load_json(args.config) if args.config else {}
    flags = {"profile": args.profile, "duration": args.duration, "command": args.command_profile,
             "slip_probability": args.slip_probability, "imu_rate": args.imu_rate,
             "link_scale_range": args.link_scale_range}
    terrain.update({k: v for k, v in flags.items() if v is not None})
    cfg = sim.TerrainConfig(**terrain)
    noise = sim.SensorNoise.off() if args.noise_off else sim.SensorNoise(**(_load_json(args.sensor_noise) if args.sensor_noise else {}))
    log = sim.generate(cfg, args.seed, noise=noise)
    log.header["robot"] = "default"
    gt_path = args.gt or Path(args.out).with_suffix(".gt.jsonl")
    logio.save_sim(log, args.out, gt_path)
    return {"log": str(args.out), "ground_truth": str(gt_path), "records": len(log), "slip_ticks": int(log.slip.sum())}


# ----------------------------------------------------------------------------- train


def load_dataset(directory) -> list[trainer.Sequence]:
    """Labeled sequences from every ``*.jsonl`` sensor log with a ``.gt.jsonl`` sidecar."""
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError("io", f"{directory} is not a directory")
    seqs = []
    for path in sorted(directory.glob("*.jsonl")):
        if path.name.endswith(".gt.jsonl"):
            continue
        gt_path = path.with_suffix(".gt.jsonl")
        if not gt_path.exists():
            raise CliError("io", f"{path} has no ground-truth sidecar {gt_path.name}")
        log, gt = logio.read_sensor_log(path), logio.read_ground_truth(gt_path)
        if len(gt.t) != len(log):
            raise CliError("schema", f"{path}: ground truth length differs from the log")
        v_body = np.einsum("tji,tj->ti", gt.R, gt.v)
        seqs.append(trainer.Sequence(log.nmn_inputs(), gt.contact, v_body))
    if not seqs:
        raise CliError("io", f"no sensor logs found in {directory}")
    return seqs


TRAIN_FLAGS = ("lr", "lam", "smooth_target", "max_iters", "epochs_per_iter", "seed", "batch_size",
               "windows_per_iter", "seq_len", "hidden", "early_stopping", "patience", "lr_final")


def cmd_train(args) -> dict:
    base = _load_json(args.config) if args.config else {}
    for name in TRAIN_FLAGS:
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    if args.domain_randomization:
        base["domain_randomization"] = True
    cfg = trainer.TrainConfig(**base)
    t0 = time.perf_counter()
    if args.data:
        data = load_dataset(args.data)
    else:
        data = trainer.synthesize_dataset(
            args.synthetic, args.data_seed, args.duration, domain_randomization=cfg.domain_randomization
        )
    data_time = time.perf_counter() - t0
    model, report = trainer.train(data, cfg)
    nmn.save_model(model, args.out)
    report_path = args.report or Path(args.out).with_suffix(".report.json")
    out = {**json.loads(report.to_json()), "data_time": data_time, "sequences": len(data)}
    if args.synthetic:
        out["dataset"] = {"synthetic": args.synthetic, "data_seed": args.data_seed, "duration": args.duration}
    _dump(out, report_path)
    return {"model": str(args.out), "report": str(report_path), **report.final, "wall_time": report.wall_time + data_time}


# ----------------------------------------------------------------------------- run


def _read_gt(path):
    return logio.read_ground_truth(path) if path else None


def _default_gt(log_path, explicit):
    if explicit:
        return explicit
    candidate = Path(log_path).with_suffix(".gt.jsonl")
    return candidate if candidate.exists() else None


def run_config(args, variant=None, slip=None) -> pipeline.RunConfig:
    noise = ekf.NoiseConfig.from_json(args.noise_config) if args.noise_config else ekf.NoiseConfig()
    variant = variant or args.variant
    model_path = args.model
    if model_path is None and variant in pipeline.NEEDS_MODEL:
        model_path = str(nmn.default_model_path())
    return pipeline.RunConfig(
        variant=variant,
        slip_rejection=args.slip_rejection if slip is None else slip,
        noise=noise,
        model_path=model_path,
        contact_threshold=args.contact_threshold,
        velocity_gate=args.velocity_gate,
        slip_threshold=args.slip_threshold,
        grf_threshold=args.grf_threshold,
        contact_cutoff=args.contact_cutoff,
        velocity_cutoff=args.velocity_cutoff,
    )


def cmd_run(args) -> dict:
    cfg = run_config(args)
    log = logio.read_sensor_log(args.log)
    gt = _read_gt(_default_gt(args.log, args.gt))
    # ground truth only seeds the initial state (and the contacts of truth-contact)
    init = (np.eye(3), np.zeros(3), np.zeros(3)) if args.no_gt_init else None
    result = pipeline.run(log, cfg, gt=gt, init=init)
    logio.write_estimate(
        args.out,
        {"variant": cfg.variant, "slip_rejection": cfg.slip_rejection, "log": str(args.log)},
        result.trajectory,
        {"bias_gyro": result.bias_gyro, "bias_accel": result.bias_accel},
    )
    if args.events:
        Path(args.events).write_text(pipeline.events_to_json(result.events))
    return {"estimate": str(args.out), "events": result.event_counts()}


# ----------------------------------------------------------------------------- eval / compare


def cmd_eval(args) -> dict:
    est = logio.read_estimate(args.est)
    gt = logio.read_ground_truth(args.gt).trajectory()
    report = metrics.evaluate(est, gt, args.window, args.stride, args.aggregate)
    out = json.loads(report.to_json())
    if args.out:
        _dump(out, args.out)
    if args.errors_csv:
        aligned = metrics.align_initial(est, gt)
        t, e_p, e_v, e_r = metrics.error_series(aligned, gt)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "pos", "vel", "ori"])
        w.writerows(zip(*(np.asarray(x).tolist() for x in (t, e_p, e_v, e_r))))
        Path(args.errors_csv).write_text(buf.getvalue())
    return out


def compare_rows(logs, variants, slips, args) -> list[tuple[str, bool, metrics.ErrorReport]]:
    """Mean error report over ``logs`` for every (variant, slip setting) pair."""
    loaded = []
    for path in logs:
        gt_path = _default_gt(path, None)
        if gt_path is None:
            raise CliError("io", f"{path} has no ground-truth sidecar")
        loaded.append((logio.read_sensor_log(path), logio.read_ground_truth(gt_path)))
    rows = []
    model_cache: dict[str, nmn.NmnModel] = {}
    for variant in variants:
        for slip in slips:
            cfg = run_config(args, variant, slip)
            model = None
            if cfg.variant in pipeline.NEEDS_MODEL:
                model = model_cache.setdefault(cfg.model_path, nmn.load_model(cfg.model_path))
            reps = []
            for log, gt in loaded:
                res = pipeline.run(log, cfg, model=model, gt=gt)
                reps.append(metrics.evaluate(res.trajectory, gt.trajectory(), args.window, args.stride, args.aggregate))
            mean = metrics.ErrorReport(*np.mean([r.csv_row() for r in reps], axis=0))
            rows.append((variant, slip, mean))
    return rows


def compare_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "slip_rejection", *metrics.ErrorReport.csv_header()])
    for variant, slip, rep in rows:
        w.writerow([variant, "on" if slip else "off", *(repr(float(x)) for x in rep.csv_row())])
    return buf.getvalue()


def parse_compare_csv(text: str) -> list[tuple[str, bool, metrics.ErrorReport]]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        rep = metrics.ErrorReport(*(float(r[k]) for k in metrics.ErrorReport.csv_header()))
        out.append((r["variant"], r["slip_rejection"] == "on", rep))
    return out


def cmd_compare(args) -> dict:
    variants = args.variants.split(",")
    for v in variants:
        if v not in pipeline.VARIANTS:
            raise pipeline.ConfigError(f"unknown variant {v!r}")
    slips = [_on_off(s) for s in args.slip.split(",")]
    rows = compare_rows(args.logs, variants, slips, args)
    text = compare_csv(rows)
    Path(args.out).write_text(text)
    return {"table": str(args.out), "rows": len(rows)}


# ----------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    from . import contact as cm

    p.add_argument("--noise-config", help="JSON file with filter noise settings")
    p.add_argument("--model", help="network model JSON (default: bundled model)")
    p.add_argument("--contact-threshold", type=float, default=cm.CONTACT_THRESHOLD)
    p.add_argument("--velocity-gate", type=float, default=cm.VELOCITY_GATE)
    p.add_argument("--slip-threshold", type=float, default=cm.SLIP_THRESHOLD)
    p.add_argument("--grf-threshold", type=float, default=cm.GRF_THRESHOLD)
    p.add_argument("--contact-cutoff", type=float, default=cm.CONTACT_CUTOFF)
    p.add_argument("--velocity-cutoff", type=float, default=cm.VELOCITY_CUTOFF)


def _add_metric_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=float, default=10.0, help="RE sub-trajectory length [s]")
    p.add_argument("--stride", type=float, default=1.0, help="RE window stride [s]")
    p.add_argument("--aggregate", choices=("rmse", "mean"), default="rmse")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="legged-est", description="Contact-aided invariant EKF with a learned measurement network.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic sensor log and ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="ground-truth path (default: <out>.gt.jsonl)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="terrain config JSON; flags override its fields")
    p.add_argument("--profile", choices=("flat", "slippery", "soft"))
    p.add_argument("--duration", type=float)
    p.add_argument("--command", dest="command_profile", choices=("random", "constant", "zero"))
    p.add_argument("--slip-probability", type=float)
    p.add_argument("--imu-rate", type=float)
    p.add_argument("--link-scale-range", type=float)
    p.add_argument("--sensor-noise", help="sensor noise JSON (default: nominal noise)")
    p.add_argument("--noise-off", action="store_true", help="noise-free sensors")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the measurement network")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of simulated logs with .gt.jsonl sidecars")
    src.add_argument("--synthetic", type=int, help="synthesize this many trajectories instead")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=10.0, help="length of synthesized trajectories [s]")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="training report path (default: <out>.report.json)")
    p.add_argument("--config", help="training config JSON; flags override its fields")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-final", type=float, help="cosine-decay the learning rate to this value")
    p.add_argument("--lam", type=float)
    p.add_argument("--smooth-target", choices=trainer.SMOOTH_TARGETS)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--epochs-per-iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--windows-per-iter", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--early-stopping", action="store_const", const=True)
    p.add_argument("--patience", type=int)
    p.add_argument("--domain-randomization", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run an estimator variant over a sensor log")
    p.add_argument("--log", required=True)
    p.add_argument("--gt", help="ground truth for initialization / truth contacts (default: sidecar if present)")
    p.add_argument("--no-gt-init", action="store_true", help="start at identity instead of the first true pose")
    p.add_argument("--out", required=True)
    p.add_argument("--events", help="write the filter event log (JSON Lines)")
    p.add_argument("--variant", choices=pipeline.VARIANTS, default="proposed")
    p.add_argument("--slip-rejection", type=_on_off, default=True, metavar="{on,off}")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score an estimate against ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="write the report JSON here as well")
    p.add_argument("--errors-csv", help="per-timestep error CSV")
    _add_metric_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="table of mean errors over variants and slip settings")
    p.add_argument("logs", nargs="+", help="sensor logs with .gt.jsonl sidecars")
    p.add_argument("--variants", default="proposed,c-only,v-only,grf")
    p.add_argument("--slip", default="on,off", help="comma-separated on/off settings")
    p.add_argument("--out", required=True)
    _add_run_flags(p)
    _add_metric_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def _error_kind(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.kind
    if isinstance(exc, logio.SchemaError):
        return "schema"
    if isinstance(exc, pipeline.ConfigError):
        return "config"
    if isinstance(exc, OSError):
        return "io"
    if isinstance(exc, (ValueError, TypeError, KeyError)):
        return "invalid"
    return "internal"


def _report_error(kind: str, message: str, type_name: str) -> None:
    json.dump({"error": kind, "message": message, "type": type_name}, sys.stderr)
    sys.stderr.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        _report_error(exc.kind, str(exc), "UsageError")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        kind = _error_kind(exc)
        _report_error(kind, str(exc), type(exc).__name__)
        return EXIT_ERROR
    json.dump(summary, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
