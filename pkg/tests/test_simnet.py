import functools
import json
from coopstake.agents.audit import LOG_TAMPER
from coopstake.scenario import parse_scenario
from coopstake.simnet import run
from coopstake.simnet.engine import EventQueue, LatencyModel, clock_view, rng_stream
from coopstake.tamper_log import derive_order, verify_log
from conftest import small_doc

INTERVAL = 600_000


@functools.lru_cache(maxsize=None)
def _run(doc_json: str, keep=True):
    return run(parse_scenario(json.loads(doc_json)), keep_trace=keep)


def run_doc(doc, keep=True):
    return _run(json.dumps(doc, sort_keys=True), keep)


FAULT_BASE = small_doc(node_count=12, duration_ms=4 * 3_600_000, seed=3,
                       workload={"tx_per_node_per_hour": 12}, agents={"audit_polls_per_day": 24})


def with_faults(*faults, **over):
    return dict(FAULT_BASE, faults=list(faults), **over)


# -- engine --------------------------------------------------------------------------

def test_queue_orders_by_time_then_seq():
    q = EventQueue()
    q.push(5, "timer", "b")
    q.push(1, "timer", "a")
    q.push(5, "timer", "c")
    assert [q.pop().payload for _ in range(3)] == ["a", "b", "c"]


def test_rng_streams_independent_of_other_labels():
    a = rng_stream(7, "overlay").random()
    rng_stream(7, "something-new").random()
    assert rng_stream(7, "overlay").random() == a
    assert rng_stream(7, "x").random() != rng_stream(8, "x").random()


def test_latency_zero_jitter_is_exact():
    m = LatencyModel(hop_ms=50, jitter_max_ms=0)
    assert m.delay("a", "b", "tx|1") == 50


def test_latency_jitter_bounded_and_stable():
    m = LatencyModel(hop_ms=50, jitter_max_ms=10, seed=4)
    ds = [m.delay("a", "b", f"k{i}") for i in range(500)]
    assert min(ds) >= 50 and max(ds) <= 60 and len(set(ds)) > 5
    assert m.delay("a", "b", "k3") == ds[3]


def test_clock_view():
    assert clock_view({}, "n1", 1000) == 1000
    assert clock_view({"n1": 3_600_000}, "n1", 1000) == 3_601_000
    assert clock_view({"n1": -500}, "n1", 1000) == 500


# -- whole runs ----------------------------------------------------------------------

def test_same_seed_same_digest_different_seed_differs():
    a, b = run(parse_scenario(small_doc())), run(parse_scenario(small_doc()))
    c = run(parse_scenario(small_doc(seed=2)))
    assert a.trace_digest == b.trace_digest
    assert a.trace_digest != c.trace_digest


def test_fault_free_run_is_clean():
    r = run_doc(small_doc())
    s = r.sim
    assert r.ok, r.violations
    assert len(s.seals) == 6 and [x["t"] for x in s.seals] == [k * INTERVAL for k in range(1, 7)]
    heads = {s.nodes[n].chain.head_hash for n in s.cfg.nodes}
    assert len(heads) == 1
    assert not s.verdicts and not s.findings


def test_no_honest_conviction_across_fault_free_seeds():
    for seed in range(4):
        s = run_doc(small_doc(seed=seed, duration_ms=2 * 3_600_000), keep=False).sim
        assert not s.verdicts and not s.bans
        assert all(rb == ann for _, _, _, rb, ann in s.rebuild_checks)


def test_faults_injected_in_time_order():
    r = run_doc(with_faults({"at": 2_000_000, "target": "n009", "mode": "crash"},
                            {"at": 1_000_000, "target": "n008", "mode": "crash"}))
    assert [(f["at"], f["target"]) for f in r.sim.fault_log] == [(1_000_000, "n008"), (2_000_000, "n009")]


def test_missing_target_recorded_not_applied():
    r = run_doc(with_faults({"at": 1_000_000, "target": "n008", "mode": "crash"},
                            {"at": 2_000_000, "target": "n008", "mode": "tamper-log-entry", "index": 1}))
    last = r.sim.fault_log[-1]
    assert last["applied"] is False and "not live" in last["reason"]


def test_crashed_mint_replaced():
    r = run_doc(with_faults({"at": 3_500_000, "target": "mint", "mode": "crash"}))
    s = r.sim
    assert r.ok, r.violations
    crashed = s.fault_log[0]["node"]
    assert s.agent_hosts["mint"] != crashed
    assert any(a[0] == "promote-backup-mint" for x in s.recoveries for a in x.get("plan", []))
    assert s.committed_chain().height >= 22


def test_equivocation_sends_conflicting_signed_blocks_to_disjoint_sets():
    r = run_doc(with_faults({"at": 3_500_000, "target": "mint", "mode": "equivocate-block"}), True)
    s = r.sim
    seal = next(x for x in s.seals if x["alt"])
    sends = {}
    for rec in s.trace.records:
        if rec["node"] == "@mint" and rec["dir"] == "send" and rec["kind"] == "announce" and rec["t"] == seal["t"]:
            sends.setdefault(rec["refs"][0], set()).add(rec["peer"])
    assert set(sends) == {seal["hash"], seal["alt"]}
    a, b = sends.values()
    assert a and b and not a & b
    assert any(v["kind"] == "mint-equivocation" for v in s.verdicts)


def test_tampered_log_entry_found_at_index_5():
    r = run_doc(with_faults({"at": 3_500_000, "target": "n007", "mode": "tamper-log-entry", "index": 5}))
    s = r.sim
    hits = [f for f in s.findings if f.kind == LOG_TAMPER and f.node == "n007"]
    assert hits and hits[0].detail[0] == 5
    assert "n007" in s.banned
    rep = verify_log(s.nodes["n007"].log.entries, s.nodes["n007"].head_auth())
    assert rep.first_bad_index == 5


def test_banned_node_is_silenced():
    r = run_doc(with_faults({"at": 3_500_000, "target": "n007", "mode": "tamper-log-entry", "index": 5}))
    s = r.sim
    ban_t = min(v["t"] for v in s.verdicts if v["accused"] == "n007")
    recovery_t = min(x["t"] for x in s.recoveries if x["t"] >= ban_t)
    after = [rec for rec in s.trace.records if rec["t"] > recovery_t and
             ((rec["dir"] == "send" and rec["node"] == "n007") or
              (rec["dir"] == "recv" and rec["peer"] == "n007"))]
    assert after == []


def test_partition_drops_and_audit_stays_sound():
    r = run_doc(with_faults({"at": 3_500_000, "target": "n009", "mode": "partition",
                             "nodes": ["n009", "n010"], "duration": 1_200_000}))
    assert r.ok, r.violations
    drops = [rec for rec in r.sim.trace.records if rec["dir"] == "drop"]
    assert drops and all(3_500_000 <= rec["t"] <= 4_700_000 + 200 for rec in drops)


def test_negative_skew_keeps_logs_monotone():
    r = run_doc(small_doc(clock_skews={"n001": -500, "n002": 250}))
    for n in ("n001", "n002"):
        ts = [e.local_timestamp for e in r.sim.nodes[n].log.entries]
        assert ts == sorted(ts)
    assert r.ok


def test_derived_order_agrees_with_global_time():
    """With zero skew log timestamps are global times; entanglement order must never contradict them."""
    s = run_doc(small_doc(duration_ms=1_800_000)).sim
    logs = {n: s.nodes[n].log.entries for n in s.cfg.nodes}
    for log in s.mint_logs:
        logs[log.owner] = log.entries
    hb = derive_order(logs, s.receipts)
    cross = 0
    for lb in hb.logs:
        for ib, vec in enumerate(hb.clock[lb]):
            tb = logs[lb][ib].local_timestamp
            for j, la in enumerate(hb.logs):
                if la != lb and vec[j] >= 0:
                    cross += 1
                    assert logs[la][vec[j]].local_timestamp <= tb
    assert cross > 100


def test_fault_free_liveness():
    s = run_doc(small_doc(duration_ms=2 * 3_600_000)).sim
    issued, confirmed = {}, {}
    for rec in s.trace.records:
        if rec["dir"] != "internal":
            continue
        if rec["kind"] == "issue" and rec["info"]["fee"] > 0:
            issued[rec["refs"][0]] = rec["t"]
        elif rec["kind"] == "confirm":
            confirmed.setdefault(rec["refs"][0], rec["info"]["height"])
    accepted = {a["tx"] for a in s.ack_records if a["status"] == "accepted"}
    checked = 0
    for tx, t in issued.items():
        if tx not in accepted or t > s.end - 2 * INTERVAL:
            continue
        assert tx in confirmed, tx
        assert confirmed[tx] * INTERVAL - t <= 2 * INTERVAL
        checked += 1
    assert checked > 20


def test_all_super_peers_crashed_breaks_liveness():
    faults = [{"at": 1_000_000, "target": f"n00{i}", "mode": "crash"} for i in range(4)]
    doc = small_doc(super_peers=["n000", "n001", "n002", "n003"], faults=faults)
    r = run_doc(doc, keep=False)
    assert "liveness" in {v[0] for v in r.violations}


def test_handoffs_do_not_change_blocks():
    on = run_doc(small_doc(duration_ms=4 * 3_600_000), keep=False).sim
    off = run_doc(small_doc(duration_ms=4 * 3_600_000, agents={"handoffs": False}), keep=False).sim
    assert [b.block_hash for b in on.committed_chain().blocks] == \
           [b.block_hash for b in off.committed_chain().blocks]
    assert len({x["host"] for x in on.seals}) > 1


def test_singleton_hosts_always_live_super_peers():
    s = run_doc(with_faults({"at": 3_500_000, "target": "mint", "mode": "crash"})).sim
    for kind, host in s.agent_hosts.items():
        assert s.alive(host) and host in s.topology.super_peers, kind
