#!/usr/bin/env python3
"""Restore bundle size against proof count, with a least-squares fit."""
import argparse
import csv
import sys
from dataclasses import replace

from ethanos.harness.report import linear_fit
from ethanos.harness.runner import RunConfig, replay_engine
from ethanos.harness.workload import WorkloadSpec, generate_workload

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seed", type=int, default=6)
p.add_argument("--epoch-len", type=int, default=25)
p.add_argument("--bloom-bits", type=int, default=1024)
p.add_argument("--bloom-hashes", type=int, default=2)
args = p.parse_args()

spec = replace(WorkloadSpec(), activity="uniform", seed=args.seed, epoch_length=args.epoch_len)
run = replay_engine(generate_workload(spec), "ethanos",
                    RunConfig(bloom_bits=args.bloom_bits, bloom_hashes=args.bloom_hashes, check_oracle=False))
w = csv.writer(sys.stdout, lineterminator="\n")
w.writerow(["block", "proof_count", "voids", "pawns", "bundle_bytes"])
for r in run.restores:
    w.writerow([r.block, r.proof_count, r.voids, r.pawns, r.size])
slope, intercept, r2 = linear_fit([r.proof_count for r in run.restores], [r.size for r in run.restores])
print(f"# size = {slope:.1f} * proofs + {intercept:.1f}  (R^2 = {r2:.4f}, n = {len(run.restores)})", file=sys.stderr)
