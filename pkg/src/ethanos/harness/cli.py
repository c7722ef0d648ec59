"""Command line: ``python -m ethanos.harness {gen,run,sync,verify}``.

``--config FILE`` reads ``key = value`` lines (``#`` starts a comment);
keys are flag names with or without dashes. Flags given on the command
line win over the file.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import sync as syncmod
from .report import emit_report, summary
from .runner import ENGINES, OracleDivergence, RunConfig, TraceRejected, replay_engine, run_dual, sync_policy
from .workload import InfeasibleSpec, Trace, WorkloadSpec, generate_workload

TRACE_NAME = "trace.jsonl"


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _bool(s: str | bool) -> bool:
    if isinstance(s, bool):
        return s
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epoch-len", type=int, default=None, help="default: the trace's (100 for gen)")
    p.add_argument("--bloom-bits", type=int, default=1 << 20)
    p.add_argument("--bloom-hashes", type=int, default=4)
    p.add_argument("--pivot-policy", choices=syncmod.POLICIES, default=None)
    p.add_argument("--out-dir", default="out")


def _workload_flags(p: argparse.ArgumentParser) -> None:
    d = WorkloadSpec()
    p.add_argument("--accounts", type=int, default=d.accounts)
    p.add_argument("--blocks", type=int, default=d.blocks)
    p.add_argument("--txs-per-block", type=int, default=d.txs_per_block)
    p.add_argument("--activity", choices=("fig4", "uniform"), default=d.activity)
    p.add_argument("--active-ratio", type=float, default=d.active_ratio)
    p.add_argument("--value-mode", choices=("funded", "zero"), default=d.value_mode)
    p.add_argument("--miners", type=int, default=d.miners)
    p.add_argument("--trace", help=f"trace path (default: OUT_DIR/{TRACE_NAME})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ethanos", description="sweeping-chain experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("gen", help="workload spec -> trace")
    run = sub.add_parser("run", help="trace -> metrics CSVs")
    sy = sub.add_parser("sync", help="replay one engine and bootstrap a client from it")
    ver = sub.add_parser("verify", help="trace -> oracle check on both engines")
    for p in (gen, run, sy, ver):
        _common(p)
        _workload_flags(p)
    run.add_argument("--sync", type=_bool, nargs="?", const=True, default=False, help="also measure sync sizes")
    sy.add_argument("--mode", choices=syncmod.MODES, default=syncmod.COMPACT)
    sy.add_argument("--engine", choices=ENGINES, default="ethanos")
    sy.add_argument("--head", type=int, default=None, help="sync against this height (default: tip)")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    dests = {a.dest for p in subs.values() for a in p._actions}
    unknown = sorted(set(values) - dests)
    if unknown:
        raise SystemExit(f"unknown config keys: {', '.join(unknown)}")
    for p in subs.values():
        own = {a.dest for a in p._actions}
        p.set_defaults(**{k: v for k, v in values.items() if k in own})


def _spec(args) -> WorkloadSpec:
    return WorkloadSpec(
        accounts=args.accounts,
        blocks=args.blocks,
        epoch_length=args.epoch_len or WorkloadSpec.epoch_length,
        txs_per_block=args.txs_per_block,
        activity=args.activity,
        active_ratio=args.active_ratio,
        value_mode=args.value_mode,
        miners=args.miners,
        seed=args.seed,
    )


def _run_config(args, **kw) -> RunConfig:
    return RunConfig(
        epoch_length=args.epoch_len,
        bloom_bits=args.bloom_bits,
        bloom_hashes=args.bloom_hashes,
        pivot_policy=args.pivot_policy,
        **kw,
    )


def _load_trace(args) -> Trace:
    path = Path(args.trace) if args.trace else Path(args.out_dir) / TRACE_NAME
    if path.exists():
        return Trace.read(path)
    trace = generate_workload(_spec(args))
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    trace.write(path)
    return trace


def cmd_gen(args) -> int:
    trace = generate_workload(_spec(args))
    path = Path(args.trace) if args.trace else Path(args.out_dir) / TRACE_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.write(path)
    print(f"wrote {len(trace.txs)} transactions over {trace.spec.blocks} blocks to {path}")
    return 0


def cmd_run(args) -> int:
    trace = _load_trace(args)
    result = run_dual(trace, _run_config(args, sync=args.sync))
    for path in emit_report(result, args.out_dir, trace):
        print(f"wrote {path}")
    print(json.dumps(summary(result), indent=2, sort_keys=True))
    return 0


def cmd_sync(args) -> int:
    trace = _load_trace(args)
    config = _run_config(args, check_oracle=False)
    chain = replay_engine(trace, args.engine, config).chain
    report = syncmod.sync(syncmod.Host(chain, head=args.head), args.mode, sync_policy(args.engine, args.mode, config))
    text = report.dumps()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sync_{args.engine}_{args.mode}.json").write_text(text + "\n")
    print(text)
    return 0 if report.verified else 1


def cmd_verify(args) -> int:
    trace = _load_trace(args)
    result = run_dual(trace, _run_config(args))
    for engine, run in result.runs.items():
        print(f"{engine}: {run.normal_txs} txs, {len(run.restores)} restores, "
              f"{run.oracle_checks} balance checks, root {run.chain.head.state_root.hex()}")
    print("oracle: ok")
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "sync": cmd_sync, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OracleDivergence, TraceRejected) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InfeasibleSpec, syncmod.SyncError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
