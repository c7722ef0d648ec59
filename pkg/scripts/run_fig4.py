#!/usr/bin/env python3
"""Banded-activity (fig4) workload, both engines, sync sizes at every checkpoint.

    python3 scripts/run_fig4.py --seed 0 --out-dir out/fig4
"""
import argparse
import sys

from ethanos.harness.cli import main

p = argparse.ArgumentParser()
p.add_argument("--seed", default="0")
p.add_argument("--out-dir", default="out/fig4")
args, rest = p.parse_known_args()
sys.exit(main(["run", "--activity", "fig4", "--sync", "--seed", args.seed, "--out-dir", args.out_dir, *rest]))
