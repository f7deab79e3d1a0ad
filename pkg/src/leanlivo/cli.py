"""Command line interface: ``leanlivo {run,simulate,metrics,compare}``.

Every subcommand accepts the common flags (``--seed``, ``--scenario``,
``--dataset``, ``--report-out``, ``--selector``, ``--longterm-map``,
``--local-edge``). On success the exit code is 0 and a JSON summary is
printed on stdout. On failure one line ``error: <category>: <message>``
goes to stderr and the exit code is nonzero (2 for usage errors, 1
otherwise).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig
from .dataset import read_dataset, write_dataset
from .metrics import MetricUndefinedError, PoseTrajectory, ate_rmse
from .report import RunReport, read_trajectory, resource_profile, write_trajectory

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(ValueError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _onoff(v):
    low = v.lower()
    if low in ("on", "off"):
        return low == "on"
    raise argparse.ArgumentTypeError(f"expected on or off, got {v!r}")


def _common():
    p = _Parser(add_help=False)
    g = p.add_argument_group("common")
    g.add_argument("--seed", type=int, default=None, help="simulation / pipeline seed (default 0)")
    g.add_argument("--scenario", help="built-in simulator scenario")
    g.add_argument("--dataset", help="sequence directory (input; output for simulate)")
    g.add_argument("--report-out", help="write the JSON-lines report here")
    g.add_argument("--selector", type=_onoff, default=None, metavar="{on,off}")
    g.add_argument("--longterm-map", type=_onoff, default=None, metavar="{on,off}")
    g.add_argument("--local-edge", type=float, default=None, metavar="M",
                   help="local map edge length in metres")
    g.add_argument("--config", help="key = value config file (flags override it)")
    g.add_argument("--noise", choices=("default", "none"), default="default",
                   help="sensor noise for simulated scenarios")
    g.add_argument("--duration", type=float, default=None, help="truncate a simulated scenario (s)")
    return p


def build_parser():
    common = _common()
    ap = _Parser(prog="leanlivo", description="LiDAR-inertial-visual odometry on simulated or "
                                              "recorded sequences")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", parents=[common], help="run the estimator")
    r.add_argument("--map-out", help="write a map snapshot after the run")
    r.add_argument("--trajectory-out", help="write the estimated trajectory as CSV")
    r.add_argument("--no-visual", action="store_true", help="LiDAR-inertial only")
    sub.add_parser("simulate", parents=[common], help="write a scenario to --dataset")
    m = sub.add_parser("metrics", parents=[common], help="ATE of a saved trajectory")
    m.add_argument("estimate", help="report (.jsonl) or trajectory CSV")
    m.add_argument("--groundtruth", help="report, CSV or sequence directory (default: --dataset)")
    c = sub.add_parser("compare", parents=[common], help="paired-run deltas")
    c.add_argument("reports", nargs="*", help="two saved reports (baseline, candidate)")
    c.add_argument("--ablation", choices=("selector", "longterm-map"),
                   help="run the paired ablation on --scenario/--dataset")
    return ap


# ---------------------------------------------------------------- helpers
def make_config(args, scn=None) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.from_file(args.config)
    elif scn is not None:
        from .pipeline import scenario_config
        cfg = scenario_config(scn)
    else:
        cfg = PipelineConfig()
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.selector is not None:
        kw["selector"] = args.selector
    if args.longterm_map is not None:
        kw["longterm_map"] = args.longterm_map
    if args.local_edge is not None:
        kw["local_edge"] = args.local_edge
    if getattr(args, "no_visual", False):
        kw["visual"] = False
    return cfg.replace(**kw) if kw else cfg


def _noise(args, seed):
    from .sim import SensorNoiseSpec
    return SensorNoiseSpec.noiseless(seed) if args.noise == "none" else SensorNoiseSpec(seed=seed)


def load_streams(args, seed):
    """(streams, scenario or None) from --scenario or --dataset."""
    if bool(args.scenario) == bool(args.dataset):
        raise UsageError("give exactly one of --scenario or --dataset")
    if args.dataset:
        return read_dataset(args.dataset), None
    from .sim import scenario, simulate
    scn = scenario(args.scenario)
    return simulate(scn, _noise(args, seed), duration=args.duration), scn


def _summary_json(rep: RunReport):
    out = dict(rep.summary)
    out["resources"] = resource_profile(rep)
    return out


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, allow_nan=False, default=_jsonable))


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(type(v).__name__)


# ---------------------------------------------------------------- commands
def cmd_run(args):
    from .pipeline import Pipeline
    seed = args.seed if args.seed is not None else 0
    streams, scn = load_streams(args, seed)
    cfg = make_config(args, scn)
    pipe = Pipeline(cfg, streams.camera)
    rep = pipe.run(streams)
    if args.report_out:
        rep.write(args.report_out)
    if args.trajectory_out:
        write_trajectory(args.trajectory_out, rep.trajectory)
    if args.map_out:
        from .snapshot import write_snapshot
        write_snapshot(args.map_out, pipe.vmap, pipe.ltm if cfg.longterm_map else None)
    _emit(_summary_json(rep))


def cmd_simulate(args):
    if not args.scenario or not args.dataset:
        raise UsageError("simulate needs --scenario and --dataset (output directory)")
    from .sim import scenario, simulate
    seed = args.seed if args.seed is not None else 0
    streams = simulate(scenario(args.scenario), _noise(args, seed), duration=args.duration)
    write_dataset(args.dataset, streams)
    _emit({"dataset": str(args.dataset), "scenario": args.scenario, "seed": seed,
           "imu_samples": len(streams.imu), "scans": len(streams.scans),
           "frames": len(streams.frames)})


def _groundtruth(path) -> PoseTrajectory:
    p = Path(path)
    if p.is_dir():
        gt = read_dataset(p).groundtruth
        if gt is None:
            raise MetricUndefinedError(f"{p}: sequence has no ground truth")
        return gt
    return read_trajectory(p)


def cmd_metrics(args):
    src = args.groundtruth or args.dataset
    if not src:
        raise UsageError("metrics needs --groundtruth or --dataset")
    est = read_trajectory(args.estimate)
    gt = _groundtruth(src)
    out = {"estimate": args.estimate, "groundtruth": str(src), "ate_rmse": ate_rmse(est, gt),
           "n_poses": len(est)}
    if str(args.estimate).endswith(".jsonl"):
        rep = RunReport.read(args.estimate)
        out["selection_ratio"] = rep.selection_ratio
        out["memory"] = rep.memory_table()
    if args.report_out:
        Path(args.report_out).write_text(json.dumps({"type": "metrics", **out}, sort_keys=True) + "\n")
    _emit(out)


_COMPARED = ("ate_rmse", "selection_ratio", "peak_local_bytes", "peak_longterm_bytes",
             "peak_total_bytes")


def compare_reports(base: RunReport, cand: RunReport):
    """Absolute and relative deltas (candidate - baseline) of headline numbers."""
    out = {}
    a, b = dict(base.summary), dict(cand.summary)
    a["selection_ratio"], b["selection_ratio"] = base.selection_ratio, cand.selection_ratio
    rows = list(_COMPARED)
    ta, tb = base.stage_table(), cand.stage_table()
    for s in ta:
        a[f"{s}_ms_mean"], b[f"{s}_ms_mean"] = ta[s]["mean"], tb[s]["mean"]
        rows.append(f"{s}_ms_mean")
    for k in rows:
        va, vb = a.get(k), b.get(k)
        d = {"baseline": va, "candidate": vb, "delta": None, "relative": None}
        if va is not None and vb is not None:
            d["delta"] = vb - va
            d["relative"] = (vb - va) / va if va else None
        out[k] = d
    return out


def cmd_compare(args):
    if args.reports:
        if len(args.reports) != 2 or args.ablation:
            raise UsageError("compare takes two reports or --ablation, not both")
        base, cand = (RunReport.read(p) for p in args.reports)
        labels = [str(p) for p in args.reports]
    else:
        if not args.ablation:
            raise UsageError("compare needs two reports or --ablation")
        from .pipeline import run_pipeline
        seed = args.seed if args.seed is not None else 0
        streams, scn = load_streams(args, seed)
        cfg = make_config(args, scn)
        key = "selector" if args.ablation == "selector" else "longterm_map"
        base = run_pipeline(cfg.replace(**{key: False}), streams)
        cand = run_pipeline(cfg.replace(**{key: True}), streams)
        labels = [f"{args.ablation}=off", f"{args.ablation}=on"]
        if args.report_out:
            stem = Path(args.report_out)
            base.write(stem.with_suffix(".off.jsonl"))
            cand.write(stem.with_suffix(".on.jsonl"))
    out = {"baseline": labels[0], "candidate": labels[1], "deltas": compare_reports(base, cand)}
    if args.reports and args.report_out:
        Path(args.report_out).write_text(json.dumps({"type": "compare", **out}, sort_keys=True,
                                                    default=_jsonable) + "\n")
    _emit(out)


COMMANDS = {"run": cmd_run, "simulate": cmd_simulate, "metrics": cmd_metrics,
            "compare": cmd_compare}


def _category(exc):
    cat = getattr(exc, "category", None)
    if cat:
        return cat
    if isinstance(exc, FileNotFoundError):
        return "file-not-found"
    if isinstance(exc, MetricUndefinedError):
        return "metric-undefined"
    if isinstance(exc, OSError):
        return "io-error"
    if isinstance(exc, ValueError):
        return "invalid-input"
    return "internal-error"


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError, ConfigError) as exc:
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"error: {_category(exc)}: {' '.join(msg.split())}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
