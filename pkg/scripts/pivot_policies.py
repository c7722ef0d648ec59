#!/usr/bin/env python3
"""Stored and downloaded bytes per sync mode and pivot policy at the tip."""
import argparse
import csv
import sys
from dataclasses import replace

from ethanos import sync as S
from ethanos.harness.runner import RunConfig, run_dual
from ethanos.harness.workload import WorkloadSpec, generate_workload

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--activity", choices=("fig4", "uniform"), default="fig4")
args = p.parse_args()

res = run_dual(generate_workload(replace(WorkloadSpec(), seed=args.seed, activity=args.activity)),
               RunConfig(check_oracle=False))
w = csv.writer(sys.stdout, lineterminator="\n")
w.writerow(["engine", "mode", "policy", "pivot", "stored_bytes", "downloaded_bytes"])
for engine, run in res.runs.items():
    host = S.Host(run.chain)
    for mode in S.MODES:
        for policy in (S.POLICIES if mode != S.FULL_ARCHIVE else (None,)):
            rep = S.sync(host, mode, policy)
            w.writerow([engine, mode, policy or "", rep.pivot, rep.stored.total, rep.downloaded.total])
