"""CSV and JSON output for a run.

Files and their columns (order is stable):

active_ratio.csv     checkpoint, block, active_accounts, total_accounts, active_ratio
trie_sizes.csv       checkpoint, block, engine, state_trie_nodes, state_trie_bytes, archive_trie_bytes
sync_sizes.csv       checkpoint, block, engine, mode, pivot_policy, pivot, headers, bodies, receipts,
                     trie_nodes, tx_index, other, total, downloaded_total, verified
restores.csv         checkpoint, block, normal_txs, restore_txs, restore_bytes
restore_bundles.csv  block, target, last_active, as_of, proof_count, void_proofs, pawn_proofs, bytes
metrics.json         config, workload, final roots, summary figures
timings.json         wall-clock seconds (varies between runs; everything else is deterministic)
"""
from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict
from pathlib import Path

from ..storage import DataCategory
from .runner import RunResult
from .workload import DAYS_PER_EPOCH, Trace

ACTIVE_RATIO_COLS = ["checkpoint", "block", "active_accounts", "total_accounts", "active_ratio"]
TRIE_COLS = ["checkpoint", "block", "engine", "state_trie_nodes", "state_trie_bytes", "archive_trie_bytes"]
SYNC_COLS = [
    "checkpoint", "block", "engine", "mode", "pivot_policy", "pivot",
    *[c.label for c in DataCategory], "total", "downloaded_total", "verified",
]
RESTORE_COLS = ["checkpoint", "block", "normal_txs", "restore_txs", "restore_bytes"]
BUNDLE_COLS = ["block", "target", "last_active", "as_of", "proof_count", "void_proofs", "pawn_proofs", "bytes"]


def linear_fit(xs: list[float], ys: list[float]) -> tuple[float, float, float]:
    """(slope, intercept, r_squared) of an ordinary least-squares line."""
    if len(xs) < 2 or len(set(xs)) < 2:
        raise ValueError("need at least two distinct x values")
    slope, intercept = statistics.linear_regression(xs, ys)
    if len(set(ys)) < 2:
        return slope, intercept, 1.0
    r = statistics.correlation(xs, ys)
    return slope, intercept, r * r


def _write(path: Path, cols: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        w.writerows(rows)


def summary(result: RunResult) -> dict:
    out: dict = {"roots": result.roots()}
    last = result.rows[-1]
    if "vanilla" in last.trie_bytes and "ethanos" in last.trie_bytes:
        out["final_trie_ratio"] = round(last.trie_bytes["ethanos"] / last.trie_bytes["vanilla"], 6)
    eth = result.runs.get("ethanos")
    if eth is not None:
        total = eth.normal_txs + len(eth.restores)
        out["restore_txs"] = len(eth.restores)
        out["normal_txs"] = eth.normal_txs
        out["restore_fraction"] = round(len(eth.restores) / total, 6) if total else 0.0
        xs = [r.proof_count for r in eth.restores]
        ys = [r.size for r in eth.restores]
        try:
            slope, intercept, r2 = linear_fit(xs, ys)
            out["bundle_fit"] = {"slope": round(slope, 3), "intercept": round(intercept, 3), "r_squared": round(r2, 6)}
        except ValueError:
            out["bundle_fit"] = None
    if last.sync:
        totals = {f"{e}/{m}": rep.stored.total for (e, m), rep in sorted(last.sync.items())}
        out["final_sync_bytes"] = totals
        if "ethanos/compact" in totals and "vanilla/compact" in totals:
            out["compact_ratio"] = round(totals["ethanos/compact"] / totals["vanilla/compact"], 6)
    return out


def emit_report(result: RunResult, out_dir: str | Path, trace: Trace | None = None) -> list[Path]:
    if not result.rows:
        raise ValueError("no metrics rows to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.rows
    written = []

    def emit(name, cols, data):
        path = out / name
        _write(path, cols, data)
        written.append(path)

    emit("active_ratio.csv", ACTIVE_RATIO_COLS, [
        [r.checkpoint, r.block, r.active_accounts, r.total_accounts,
         f"{r.active_accounts / r.total_accounts:.6f}" if r.total_accounts else "0.000000"]
        for r in rows
    ])
    emit("trie_sizes.csv", TRIE_COLS, [
        [r.checkpoint, r.block, e, r.trie_nodes[e], r.trie_bytes[e], r.archive_trie_bytes[e]]
        for r in rows for e in sorted(r.trie_bytes)
    ])
    emit("sync_sizes.csv", SYNC_COLS, [
        [r.checkpoint, r.block, e, m, rep.pivot_policy or "", rep.pivot,
         *[rep.stored[c] for c in DataCategory], rep.stored.total, rep.downloaded.total, int(rep.verified)]
        for r in rows for (e, m), rep in sorted(r.sync.items())
    ])
    emit("restores.csv", RESTORE_COLS, [
        [r.checkpoint, r.block, r.normal_txs, r.restore_txs, r.restore_bytes] for r in rows
    ])
    eth = result.runs.get("ethanos")
    emit("restore_bundles.csv", BUNDLE_COLS, [
        [x.block, x.target.hex(), x.last_active, x.as_of, x.proof_count, x.voids, x.pawns, x.size]
        for x in (eth.restores if eth else [])
    ])

    meta = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(result.config).items()},
        "summary": summary(result),
    }
    if trace is not None:
        meta["workload"] = asdict(trace.spec)
        meta["band_mapping"] = f"1 epoch = {DAYS_PER_EPOCH} days (modeling choice)"
    path = out / "metrics.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(path)

    timings = {e: round(r.seconds, 4) for e, r in result.runs.items()}
    for r in rows:
        for (e, m), rep in sorted(r.sync.items()):
            timings[f"sync/{r.block}/{e}/{m}"] = {
                "download": round(rep.download_seconds, 4), "replay": round(rep.replay_seconds, 4)
            }
    path = out / "timings.json"
    path.write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written
