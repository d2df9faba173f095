"""Command-line front end.

Subcommands: ``generate`` (dataset from preset+seed), ``track`` (run the
pipeline), ``eval`` (metrics between two pose traces), ``ablate``
(robustness-mechanism sweep), ``bench`` (flow-engine throughput).

Any configuration key can be overridden on the command line with a flag of
the same name (``--flow.roi_cell_size 16`` or ``--flow.roi_cell_size=16``),
taking precedence over ``--config`` files.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .dataio import DataFormatError, read_pose_trace, write_pose_trace, write_velocity_trace


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1
        raise _UsageError(message)


def _parse_overrides(tokens: list[str]) -> dict[str, object]:
    out: dict[str, object] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise _UsageError(f"unrecognized argument '{tok}'")
        key = tok[2:]
        if "=" in key:
            key, _, raw = key.partition("=")
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise _UsageError(f"missing value for '{tok}'")
            raw = tokens[i + 1]
            i += 2
        out[key] = harness._parse_value(raw)
    return out


def _load_config(args, overrides: dict[str, object]) -> dict:
    merged: dict[str, object] = {}
    if getattr(args, "config", None):
        merged.update(harness.parse_config_file(args.config))
    merged.update(overrides)
    if getattr(args, "preset", None):
        merged["sim.preset"] = args.preset
    if getattr(args, "seed", None) is not None:
        merged["sim.seed"] = args.seed
    if getattr(args, "mode", None):
        merged["run.mode"] = args.mode
    try:
        return harness.resolve_config(merged)
    except KeyError as exc:
        raise _UsageError(str(exc)) from exc


def _dataset_for(args, cfg):
    if getattr(args, "dataset", None):
        ds, stored = harness.load_dataset(args.dataset)
        for key, val in stored.items():  # dataset remembers its generation config
            if key in harness.DEFAULTS and key.startswith(("sim.", "flow.")):
                cfg.setdefault(key, val)
        return ds
    return harness.generate_dataset(cfg)


def _cmd_generate(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    ds = harness.generate_dataset(cfg)
    harness.save_dataset(ds, args.out, cfg)
    print(f"dataset '{cfg['sim.preset']}' seed {cfg['sim.seed']}: "
          f"{len(ds.events)} events, {len(ds.depth_maps)} depth maps, "
          f"{len(ds.observations)} pose observations -> {args.out}")
    return 0


def _cmd_track(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    ds = _dataset_for(args, cfg)
    result = harness.run_pipeline(cfg, dataset=ds)
    report = harness.evaluate(result.pose_trace, ds.gt_pose,
                              metadata={"mode": result.mode,
                                        "seed": cfg["sim.seed"],
                                        "preset": cfg["sim.preset"]})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pose_trace(out / "pose_trace.csv", result.pose_trace)
    write_velocity_trace(out / "velocity_trace.csv", result.velocity_trace)
    with open(out / "metrics.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    harness.emit_plot_data(out, result, report)
    print(f"mode={result.mode} position RMSE {report.position_rmse * 100:.2f} cm "
          f"(std {report.position_std * 100:.2f}), rotation RMSE "
          f"{report.rotation_rmse_deg:.2f} deg (std {report.rotation_std_deg:.2f})")
    return 0


def _cmd_eval(args, overrides) -> int:
    trace = read_pose_trace(args.trace)
    gt = read_pose_trace(args.gt)
    report = harness.evaluate(trace, gt)
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"position RMSE {report.position_rmse * 100:.2f} cm "
          f"(std {report.position_std * 100:.2f}), rotation RMSE "
          f"{report.rotation_rmse_deg:.2f} deg (std {report.rotation_std_deg:.2f})")
    return 0


def _cmd_ablate(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    ds = _dataset_for(args, cfg)
    table = harness.run_ablation(cfg, dataset=ds)
    rows = {arm: rep.to_dict() for arm, rep in table.items()}
    if args.out:
        with open(args.out, "w") as f:
            json.dump(rows, f, indent=2, sort_keys=True)
            f.write("\n")
    width = max(len(a) for a in table)
    print(f"{'arm'.ljust(width)}  e_p (cm)  e_r (deg)")
    for arm, rep in table.items():
        print(f"{arm.ljust(width)}  {rep.position_rmse * 100:8.2f}  {rep.rotation_rmse_deg:9.2f}")
    return 0


def _cmd_bench(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    if not getattr(args, "preset", None) and "sim.preset" not in overrides:
        cfg = harness.resolve_config({"sim.preset": "faster"})
    ds = _dataset_for(args, cfg)
    stats = harness.run_bench(cfg, dataset=ds)
    print(f"{stats['n_events']} events -> {stats['n_measurements']} measurements "
          f"in {stats['elapsed_s']:.3f} s ({stats['events_per_s'] / 1e6:.2f} M events/s)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="evtrack", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--preset", help="scenario preset (regular/faster/aperture)")
        p.add_argument("--seed", type=int, help="generation seed")
        if dataset:
            p.add_argument("--dataset", help="load a generated dataset directory")

    p = sub.add_parser("generate", help="generate a dataset from a preset and seed")
    common(p, dataset=False)
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("track", help="run the tracking pipeline")
    common(p)
    p.add_argument("--mode", choices=harness.MODES, help="tracking mode")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate a pose trace against ground truth")
    p.add_argument("--trace", required=True, help="estimated pose trace CSV")
    p.add_argument("--gt", required=True, help="ground-truth pose trace CSV")
    p.add_argument("--out", help="metrics JSON output path")

    p = sub.add_parser("ablate", help="run the robustness-mechanism ablation")
    common(p)
    p.add_argument("--out", help="ablation table JSON output path")

    p = sub.add_parser("bench", help="measure flow-engine throughput")
    common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
        overrides = _parse_overrides(rest)
        handler = {
            "generate": _cmd_generate,
            "track": _cmd_track,
            "eval": _cmd_eval,
            "ablate": _cmd_ablate,
            "bench": _cmd_bench,
        }[args.command]
        return handler(args, overrides)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
