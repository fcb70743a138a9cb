import json
import os

import pytest

import oracles
from coopstake.analysis import NotFound, build_report, trace_transaction
from coopstake.ledger import FREE_QUOTA_EXHAUSTED
from coopstake.scenario import parse_scenario
from coopstake.simnet import run
from conftest import small_doc


def _records(out):
    with open(os.path.join(out, "trace.jsonl")) as fh:
        return [json.loads(line) for line in fh]


@pytest.fixture(scope="module")
def still_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("still"))
    run(parse_scenario(small_doc(latency={"jitter_max_ms": 0})), out)
    return out


@pytest.fixture(scope="module")
def jitter_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("jitter"))
    return out, run(parse_scenario(small_doc(seed=5, workload={"tx_per_node_per_hour": 30})), out, keep_trace=True)


@pytest.fixture(scope="module")
def zero_fee_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("free"))
    doc = small_doc(workload={"tx_per_node_per_hour": 12, "zero_fee_fraction": 1.0},
                    mint_policy={"free_tx_fraction": 0.01, "max_block_txs": 100})
    run(parse_scenario(doc), out)
    return out


def _payments(out):
    return [r for r in _records(out) if r["kind"] == "issue" and r["info"]["kind"] == "payment"]


def test_node_issued_payment_takes_six_hops_and_300ms(still_run):
    rec = _payments(still_run)[0]
    q = trace_transaction(still_run, rec["refs"][0])
    assert q.status == "confirmed" and q.height >= 1
    assert (q.round_trip_hops, q.ack_latency) in {(6, 300), (4, 200)}
    if q.round_trip_hops == 6:
        nodes = [h.node for h in q.hops]
        assert nodes[0] == rec["node"] and "@mint" in nodes
    assert [h.time for h in q.hops] == sorted(h.time for h in q.hops)


def test_every_hop_count_is_four_or_six_without_jitter(still_run):
    hops = build_report(still_run)["hop_histogram"]
    assert set(hops) == {"4", "6"}


def test_trace_lookup_is_case_insensitive_and_rejects_unknown(still_run):
    tx = _payments(still_run)[0]["refs"][0]
    assert trace_transaction(still_run, tx.upper()).tx_id == tx
    with pytest.raises(NotFound):
        trace_transaction(still_run, "00" * 32)
    with pytest.raises(FileNotFoundError):
        trace_transaction(os.path.join(still_run, "nowhere"), tx)


def test_zero_fee_over_quota_is_rejected(zero_fee_run):
    statuses = [trace_transaction(zero_fee_run, r["refs"][0]) for r in _payments(zero_fee_run)]
    rejected = [q for q in statuses if q.status == "rejected"]
    assert rejected and all(q.reason == FREE_QUOTA_EXHAUSTED for q in rejected)
    assert rejected[0].describe() == f"rejected({FREE_QUOTA_EXHAUSTED})"
    assert any(q.status == "confirmed" for q in statuses)


def test_report_counts_match_run(jitter_run):
    out, res = jitter_run
    rep = build_report(out)
    s = res.sim
    assert rep["blocks_sealed"] == len(s.seals)
    assert rep["committed_height"] == s.committed_chain().height
    assert rep["ack_latency_ms"]["count"] == len({a["tx"] for a in s.ack_records})
    assert rep["dividends"]["paid"] + rep["dividends"]["carry_out"] == rep["dividends"]["total"]


def test_report_percentiles_recomputed_from_trace(jitter_run):
    out, _ = jitter_run
    issued, acked = {}, {}
    for r in _records(out):
        if r["kind"] == "issue":
            issued[r["refs"][0]] = (r["node"], r["t"])
        elif r["kind"] == "ack" and r["dir"] == "recv" and r["node"].endswith(".w"):
            tx = r["refs"][0]
            if tx in issued and r["node"] == issued[tx][0] and tx not in acked:
                acked[tx] = r["t"] - issued[tx][1]
    lat = list(acked.values())
    rep = build_report(out)["ack_latency_ms"]
    assert len(set(lat)) > 3
    for p in (50, 90, 99):
        assert rep[f"p{p}"] == oracles.nearest_rank(lat, p)
    assert rep["max"] == max(lat)


def test_missing_run_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_report(str(tmp_path))
