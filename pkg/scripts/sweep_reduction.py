#!/usr/bin/env python3
"""Checkpoint trie vs full trie size across per-epoch activity ratios."""
import argparse
import csv
import sys
from dataclasses import replace

from ethanos.harness.runner import RunConfig, run_dual
from ethanos.harness.workload import WorkloadSpec, generate_workload

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--ratios", default="0.02,0.05,0.1,0.2,0.4")
p.add_argument("--seed", type=int, default=0)
p.add_argument("--accounts", type=int, default=2000)
p.add_argument("--blocks", type=int, default=500)
args = p.parse_args()

w = csv.writer(sys.stdout, lineterminator="\n")
w.writerow(["active_ratio", "ethanos_trie_bytes", "vanilla_trie_bytes", "ratio"])
for r in (float(x) for x in args.ratios.split(",")):
    spec = replace(WorkloadSpec(), activity="uniform", active_ratio=r, seed=args.seed,
                   accounts=args.accounts, blocks=args.blocks)
    last = run_dual(generate_workload(spec), RunConfig(check_oracle=False)).rows[-1]
    e, v = last.trie_bytes["ethanos"], last.trie_bytes["vanilla"]
    w.writerow([r, e, v, f"{e / v:.4f}"])
