"""Command line interface.

Subcommands: gen (build a frozen benchmark), run (roll out a benchmark and
report), eval (re-score persisted records), serve (expose episodes over
TCP), and replay (inspect one episode and render a strip image).
Exit code 0 on success, 2 on validation errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .assets import build_benchmark, save_benchmark
from .errors import PartbenchError
from .harness import (
    DEFAULT_CORRUPTION,
    RunConfig,
    load_episode,
    run_benchmark,
    write_report,
)
from .metrics import aggregate
from .reward import RewardVariant

VARIANTS = {v.value: v for v in RewardVariant}


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip() != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _parse_noise(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("noise must be erode,drop,bleed")
    return (parts[0], parts[1], parts[2])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partbench")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a frozen benchmark set")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--links", default="2", help="comma list of chain lengths, e.g. 2,3")
    gen.add_argument("--instances", type=int, default=10, help="objects per chain length")
    gen.add_argument("--inits", type=int, default=2, help="initial poses per object")
    gen.add_argument("--out", required=True)
    gen.add_argument("--name", default="")

    run = sub.add_parser("run", help="run a benchmark and write a report")
    run.add_argument("--benchmark", required=True)
    run.add_argument("--policy", choices=("random", "nohold", "oracle", "oracle-mot", "remote"), default="random")
    run.add_argument("--variant", choices=tuple(VARIANTS), default="full")
    run.add_argument("--steps", type=int, default=5)
    run.add_argument("--seeds", type=_parse_seeds, default=(0,))
    run.add_argument("--record", default=None, help="episode record directory (enables resume)")
    run.add_argument("--report", default=None, help="report base path (writes .json/.csv and figures)")
    run.add_argument("--masks", choices=("oracle", "corrupted"), default=None,
                     help="motion mask source; defaults to corrupted except for oracle-mot")
    run.add_argument("--noise", type=_parse_noise, default=DEFAULT_CORRUPTION,
                     help="corruption probabilities erode,drop,bleed")
    run.add_argument("--memory-mode", choices=("train", "test"), default="test")
    run.add_argument("--parallelism", type=int, default=1)
    run.add_argument("--port", type=int, default=None, help="listen port for --policy remote")

    ev = sub.add_parser("eval", help="aggregate persisted episode records")
    ev.add_argument("--record", required=True)
    ev.add_argument("--out", required=True, help="report base path")

    srv = sub.add_parser("serve", help="serve episodes to remote policies")
    srv.add_argument("--port", type=int, default=0)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--benchmark", required=True)
    srv.add_argument("--steps", type=int, default=5)
    srv.add_argument("--seeds", type=_parse_seeds, default=(0,))
    srv.add_argument("--variant", choices=tuple(VARIANTS), default="full")
    srv.add_argument("--masks", choices=("oracle", "corrupted"), default="oracle")
    srv.add_argument("--noise", type=_parse_noise, default=DEFAULT_CORRUPTION)
    srv.add_argument("--memory-mode", choices=("train", "test"), default="test")
    srv.add_argument("--record", default=None)

    rp = sub.add_parser("replay", help="print one episode and render a strip image")
    rp.add_argument("--episode", required=True)
    rp.add_argument("--out", default=None, help="strip PNG path (default: <episode>/replay.png)")

    return parser


def _mask_source(args) -> str:
    if args.masks is not None:
        return args.masks
    return "oracle" if args.policy == "oracle-mot" else "corrupted"


def cmd_gen(args) -> int:
    links = [int(x) for x in str(args.links).split(",")]
    counts = {n: (args.instances, args.inits) for n in links}
    bench = build_benchmark(args.seed, counts, name=args.name)
    save_benchmark(bench, args.out)
    print(f"wrote {len(bench.entries)} entries to {args.out}")
    return 0


def cmd_run(args) -> int:
    config = RunConfig(
        steps=args.steps,
        policy=args.policy,
        variant=VARIANTS[args.variant],
        mask_source=_mask_source(args),
        corruption=args.noise,
        memory_mode=args.memory_mode,
        benchmark_path=args.benchmark,
        seeds=args.seeds,
        record_dir=args.record,
        parallelism=args.parallelism,
    )

    def progress(done: int, total: int) -> None:
        print(f"\repisodes {done}/{total}", end="", flush=True)

    if args.policy == "remote":
        if args.port is None:
            print("--policy remote requires --port", file=sys.stderr)
            return 2
        from .server import run_benchmark_remote

        report = run_benchmark_remote(
            config,
            args.port,
            progress=progress,
            ready=lambda host, port: print(f"listening on {host}:{port}", flush=True),
        )
    else:
        report = run_benchmark(config, progress=progress)
    print()
    _emit_report(report, args.report)
    return 0


def cmd_eval(args) -> int:
    record_dir = Path(args.record)
    dirs = sorted(p for p in record_dir.iterdir() if (p / "manifest.json").exists())
    if not dirs:
        print(f"no episode records under {record_dir}", file=sys.stderr)
        return 2
    records = [load_episode(p) for p in dirs]
    seeds = tuple(sorted({r.seed for r in records}))
    report = aggregate(records, seeds)
    _emit_report(report, args.out)
    return 0


def _emit_report(report, out_base) -> None:
    for row in report.rows:
        print(
            f"{row.category} step {row.timestep}: MAPE {row.mape:.3f}"
            f"  dH95 {row.dh95:.2f}px  mIoU {100 * row.miou:.1f}%"
            f"  eff {row.effective_rate:.2f}  opt {row.optimal_rate:.2f}"
        )
    if out_base is not None:
        from .plots import report_figures

        json_path, csv_path = write_report(report, out_base)
        figures = report_figures(report, Path(out_base))
        print(f"wrote {json_path}, {csv_path}, " + ", ".join(str(p) for p in figures))


def cmd_serve(args) -> int:
    from .server import EnvServer

    config = RunConfig(
        steps=args.steps,
        policy="remote",
        variant=VARIANTS[args.variant],
        mask_source=args.masks,
        corruption=args.noise,
        memory_mode=args.memory_mode,
        benchmark_path=args.benchmark,
        seeds=args.seeds,
        record_dir=args.record,
    )
    server = EnvServer(config, host=args.host, port=args.port)
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def cmd_replay(args) -> int:
    record = load_episode(args.episode)
    print(f"episode {record.entry_index} seed {record.seed} category {record.category}")
    for t, step_rec in enumerate(record.steps):
        reward = step_rec.reward
        hold = "-" if reward.hold_value is None else f"{reward.hold_value:g}"
        push = "-" if reward.push_value is None else f"{reward.push_value:g}"
        print(
            f"  step {t + 1}: case {step_rec.case.value:<20} touch {step_rec.touch.hold_contact}"
            f"{step_rec.touch.push_contact}{step_rec.touch.shear}"
            f"  reward h/p {hold}/{push}"
            f"  ape {step_rec.metrics.ape:.2f} iou {step_rec.metrics.iou:.2f}"
            f" dh95 {step_rec.metrics.dh95:.2f}"
            f"  {'effective' if step_rec.metrics.effective else 'ineffective'}"
            f"{'/optimal' if step_rec.metrics.optimal else ''}"
        )
    from .plots import replay_strip

    out = args.out or str(Path(args.episode) / "replay.png")
    path = replay_strip(record, out)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen": cmd_gen,
        "run": cmd_run,
        "eval": cmd_eval,
        "serve": cmd_serve,
        "replay": cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except (PartbenchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
