import csv
import json
from dataclasses import replace

import pytest

from ethanos.harness.cli import main, read_config
from ethanos.harness.report import emit_report, linear_fit
from ethanos.harness.runner import (
    FlatLedger,
    OracleDivergence,
    RunConfig,
    check_oracle,
    replay_engine,
    run_dual,
)
from ethanos.harness.workload import (
    FIG4_BANDS,
    InfeasibleSpec,
    Trace,
    WorkloadSpec,
    active_ratios,
    band_blocks,
    generate_workload,
)

SMALL = WorkloadSpec(accounts=150, blocks=60, epoch_length=20, txs_per_block=5, seed=11)


def test_band_shares_sum_to_100():
    assert sum(s for *_, s in FIG4_BANDS) == pytest.approx(100.0)
    assert band_blocks(30)[0][:2] == (0, 1)  # 1 day per block at epoch 30


@pytest.mark.parametrize("activity", ["fig4", "uniform"])
def test_same_seed_same_trace(activity):
    spec = replace(SMALL, activity=activity)
    assert generate_workload(spec).dumps() == generate_workload(spec).dumps()
    assert generate_workload(spec).dumps() != generate_workload(replace(spec, seed=12)).dumps()


def test_trace_roundtrip(tmp_path):
    t = generate_workload(SMALL)
    t.write(tmp_path / "t.jsonl")
    u = Trace.read(tmp_path / "t.jsonl")
    assert u.dumps() == t.dumps() and u.txs == t.txs and u.alloc == t.alloc


def test_single_account_single_tx():
    t = generate_workload(WorkloadSpec(accounts=1, blocks=1, txs_per_block=1, activity="uniform", active_ratio=1.0))
    assert len(t.txs) == 1
    tx = t.txs[0]
    assert tx.sender == t.accounts[0] and tx.to == t.miners[0] and tx.block == 1
    run_dual(t)


@pytest.mark.parametrize("kw", [
    {"accounts": 0},
    {"activity": "bursty"},
    {"active_ratio": 0.0},
    {"activity": "uniform", "accounts": 2, "active_ratio": 0.5, "txs_per_block": 2000,
     "max_txs_per_acct_per_block": 1024},
])
def test_infeasible_specs(kw):
    with pytest.raises(InfeasibleSpec):
        generate_workload(replace(SMALL, **kw))


def test_uniform_activity_hits_target():
    t = generate_workload(WorkloadSpec(activity="uniform", accounts=1000, blocks=500, epoch_length=100,
                                       active_ratio=0.1, seed=5))
    ratios = [active / total for _, active, total in active_ratios(t)]
    assert len(ratios) == 5
    assert all(abs(r - 0.10) <= 0.05 for r in ratios)


def test_fig4_activity_declines():
    t = generate_workload(WorkloadSpec(accounts=800, blocks=500, seed=2))
    ratios = [active / total for _, active, total in active_ratios(t)]
    assert ratios[0] == 1.0 and ratios[-1] < 0.5


@pytest.mark.parametrize("activity", ["fig4", "uniform"])
@pytest.mark.parametrize("value_mode", ["funded", "zero"])
def test_both_engines_match_oracle(activity, value_mode):
    t = generate_workload(replace(SMALL, activity=activity, value_mode=value_mode, active_ratio=0.2))
    res = run_dual(t)
    assert {r.checkpoint for r in res.rows} == {1, 2, 3}
    for run in res.runs.values():
        assert run.oracle_checks > 0 and run.normal_txs == len(t.txs)
    assert all(r.restore_txs <= r.normal_txs for r in res.rows)


def test_divergence_is_reported():
    t = generate_workload(SMALL)
    run = replay_engine(t, "ethanos", RunConfig(check_oracle=False))
    ledger = FlatLedger(t.alloc)
    with pytest.raises(OracleDivergence) as exc:
        check_oracle(run.chain, ledger, sorted(t.alloc), "ethanos")
    assert exc.value.engine == "ethanos" and exc.value.address in t.alloc


def test_all_active_gives_no_sweep_benefit():
    t = generate_workload(WorkloadSpec(accounts=100, blocks=60, epoch_length=20, txs_per_block=10,
                                       activity="uniform", active_ratio=1.0, seed=4))
    last = run_dual(t).rows[-1]
    assert last.trie_bytes["ethanos"] == pytest.approx(last.trie_bytes["vanilla"], rel=0.02)


def test_sweep_membership_matches_activity_log():
    t = generate_workload(WorkloadSpec(accounts=1000, blocks=500, epoch_length=100, txs_per_block=5,
                                       activity="uniform", active_ratio=0.1, seed=8))
    res = run_dual(t)
    last = res.rows[-1]
    # the checkpoint trie holds exactly the epoch-active accounts plus miners
    eth = res.runs["ethanos"].chain
    from ethanos.trie import Trie
    leaves = sum(1 for _ in Trie(eth.store).iter_leaves(eth.head.state_root))
    assert leaves == last.active_accounts + len(t.miners)
    assert 0.10 <= leaves / (t.spec.accounts + len(t.miners)) <= 0.15


def test_report_files(tmp_path):
    t = generate_workload(SMALL)
    res = run_dual(t, RunConfig(sync=True))
    emit_report(res, tmp_path, t)
    with open(tmp_path / "active_ratio.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["checkpoint"]) for r in rows] == [1, 2, 3]
    with open(tmp_path / "sync_sizes.csv") as fh:
        sync_rows = list(csv.DictReader(fh))
    assert len(sync_rows) == 3 * 2 * 3 and all(r["verified"] == "1" for r in sync_rows)
    meta = json.loads((tmp_path / "metrics.json").read_text())
    assert meta["workload"]["seed"] == SMALL.seed
    assert "modeling choice" in meta["band_mapping"]


def test_single_row_report(tmp_path):
    t = generate_workload(replace(SMALL, blocks=10))
    res = run_dual(t)
    assert len(res.rows) == 1
    emit_report(res, tmp_path)
    lines = (tmp_path / "restores.csv").read_text().splitlines()
    assert len(lines) == 2
    res.rows = []
    with pytest.raises(ValueError):
        emit_report(res, tmp_path)


def test_linear_fit():
    slope, intercept, r2 = linear_fit([1, 2, 3, 4], [10, 20, 30, 40])
    assert (slope, intercept, r2) == pytest.approx((10, 0, 1))
    with pytest.raises(ValueError):
        linear_fit([1, 1], [2, 3])


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# desk run\naccounts = 40\nblocks=30\n--epoch-len = 10\nseed = 9\nactivity = uniform\n")
    assert read_config(cfg)["epoch_len"] == "10"
    out = tmp_path / "o"
    assert main(["gen", "--config", str(cfg), "--out-dir", str(out), "--seed", "3"]) == 0
    t = Trace.read(out / "trace.jsonl")
    assert (t.spec.accounts, t.spec.blocks, t.spec.epoch_length, t.spec.seed) == (40, 30, 10, 3)
    assert main(["verify", "--out-dir", str(out)]) == 0
    assert "oracle: ok" in capsys.readouterr().out
    assert main(["run", "--out-dir", str(out), "--sync"]) == 0
    assert (out / "sync_sizes.csv").exists()
    assert main(["sync", "--out-dir", str(out), "--mode", "fast", "--engine", "vanilla"]) == 0
    assert json.loads((out / "sync_vanilla_fast.json").read_text())["verified"] is True


def test_cli_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(SystemExit):
        main(["gen", "--config", str(bad)])
    assert main(["gen", "--out-dir", str(tmp_path), "--accounts", "0"]) == 1
    assert main(["run", "--trace", str(tmp_path / "missing" / "x.jsonl"), "--out-dir", "/proc/forbidden"]) == 2
