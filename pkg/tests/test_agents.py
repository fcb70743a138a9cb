import dataclasses
import random
from types import SimpleNamespace

import pytest
from hypothesis import given, settings, strategies as st

from coopstake.agents.audit import (
    HEAD_HASH_MISMATCH,
    LOG_TAMPER,
    MISSING_BYTES,
    UNRESPONSIVE,
    audit_poll,
    choose_offsets,
    secondary_schedule,
)
from coopstake.agents.configuration import choose_successor
from coopstake.agents.mint import MintAgent, mint_ack, mint_seal
from coopstake.agents.netops import netops_report, percentile
from coopstake.agents.recovery import (
    DISABLE_SUPER_PEER,
    HANDOFF_AGENT,
    MINT_EQUIVOCATION,
    PROMOTE_BACKUP_MINT,
    REPLACE_SUPER_PEER,
    REVERT_BLOCK,
    NoBackupAvailable,
    ProvenFault,
    RecoveryContext,
    RecoveryPlan,
    recover,
)
from coopstake.agents.reward import RewardPolicy, distribute_rewards
from coopstake.agents.state import BadHandoffSignature, handoff, receive_handoff, serialize_state
from coopstake.consensus import StakeTable
from coopstake.crypto import hash_bytes
from coopstake.ledger import (
    COIN,
    Chain,
    MintPolicy,
    Outpoint,
    TxOutput,
    block_subsidy,
    build_block,
    build_genesis,
    make_transaction,
)
from coopstake.overlay import Topology
from coopstake.tamper_log import TamperLog
import oracles

REWARD = "r" * 40


@pytest.fixture
def world(fast_keys):
    keys, directory = fast_keys
    genesis = build_genesis(REWARD, [(k.address, COIN) for k in keys])
    chain = Chain(directory)
    chain.append(genesis)
    return keys, directory, genesis, chain


def payment(keys, genesis, i, fee=500, to=1):
    k = keys[i]
    return make_transaction(k, [Outpoint(genesis.coinbase.id, i)],
                            [TxOutput(keys[(i + to) % len(keys)].address, COIN // 2),
                             TxOutput(k.address, COIN // 2 - fee)], fee)


# -- mint ----------------------------------------------------------------------------

def test_valid_tx_acked_with_authenticator(world):
    keys, directory, genesis, chain = world
    mint = MintAgent(MintPolicy(), REWARD, chain, directory=directory)
    ack = mint_ack(mint, payment(keys, genesis, 0), 1234, keys[7])
    assert ack.accepted and ack.ack_timestamp == 1234
    assert ack.mint_authenticator.verify(keys[7].public_key, "fast")
    assert ack.mint_authenticator.head_digest == mint.log.head_digest


def test_invalid_tx_logged_and_returned(world):
    keys, directory, genesis, chain = world
    mint = MintAgent(MintPolicy(), REWARD, chain, directory=directory)
    bogus = make_transaction(keys[0], [Outpoint(hash_bytes(b"none"), 0)], [TxOutput("x", 1)], 0)
    ack = mint_ack(mint, bogus, 10, keys[7])
    assert ack.status == "invalid:missing-input"
    assert not mint.pending
    assert [e.activity_kind for e in mint.log.entries] == ["receive-tx", "ack-tx"]


def test_overflow_waits_for_next_cycle(world):
    keys, directory, genesis, chain = world
    mint = MintAgent(MintPolicy(max_block_txs=2), REWARD, chain, directory=directory)
    for i in range(3):
        assert mint_ack(mint, payment(keys, genesis, i), 100 + i, keys[7]).accepted
    b1 = mint_seal(mint, 600_000, keys[7]).block
    b2 = mint_seal(mint, 1_200_000, keys[7]).block
    assert (len(b1.txs), len(b2.txs)) == (2, 1)


def test_zero_fee_quota_status(world):
    keys, directory, genesis, chain = world
    mint = MintAgent(MintPolicy(max_block_txs=20, free_tx_fraction=0.05), REWARD, chain, directory=directory)
    assert mint_ack(mint, payment(keys, genesis, 0, fee=0), 1, keys[7]).accepted
    assert mint_ack(mint, payment(keys, genesis, 1, fee=0), 2, keys[7]).status == "free-quota-exhausted"
    assert mint_ack(mint, payment(keys, genesis, 2, fee=10), 3, keys[7]).accepted


def test_seal_schedule(world):
    keys, directory, genesis, chain = world
    mint = MintAgent(MintPolicy(), REWARD, chain, directory=directory)
    assert mint_seal(mint, 599_999, keys[7]) is None
    seal = mint_seal(mint, 600_000, keys[7])
    assert seal.block.height == 1 and seal.block.timestamp == 600_000
    sealed = 1
    for t in range(1_200_000, 24 * 3_600_000 + 1, 600_000):
        assert mint_seal(mint, t - 1, keys[7]) is None
        sealed += mint_seal(mint, t, keys[7]) is not None
    assert sealed == 144 and mint.chain.height == 144


def test_resumed_mint_seals_same_block(world):
    keys, directory, genesis, chain = world
    a = MintAgent(MintPolicy(), REWARD, chain.copy(), directory=directory)
    for i in range(3):
        mint_ack(a, payment(keys, genesis, i), 100 + i, keys[7])
    state = serialize_state("mint", "n001", 0, a.to_state())
    moved = handoff(state, "n002", keys[7])
    payload = receive_handoff(moved, directory, expected_signer=keys[7].address, last_sequence=0)
    assert moved.payload == state.payload
    b = MintAgent.from_state(payload, MintPolicy(), REWARD, chain.copy(), a.log, directory)
    assert mint_seal(b, 600_000, keys[6]).block.block_hash == mint_seal(a, 600_000, keys[7]).block.block_hash


def test_tampered_handoff_rejected(fast_keys):
    keys, directory = fast_keys
    moved = handoff(serialize_state("audit-primary", "n1", 3, {"x": 1}), "n2", keys[0])
    bad = dataclasses.replace(moved, payload=b'{"x":2}')
    with pytest.raises(BadHandoffSignature):
        receive_handoff(bad, directory)
    with pytest.raises(BadHandoffSignature):
        receive_handoff(moved, directory, expected_signer=keys[1].address)
    with pytest.raises(BadHandoffSignature):
        receive_handoff(moved, directory, last_sequence=4)
    assert receive_handoff(moved, directory) == {"x": 1} and moved.sequence == 4


def test_successor_drawn_from_seeded_stream():
    sps = ["n3", "n1", "n2", "n4"]
    a = [choose_successor(random.Random(5), sps, exclude=["n1"]) for _ in range(3)]
    assert len(set(a)) == 1 and a[0] in {"n2", "n3", "n4"}
    draws = {choose_successor(random.Random(s), sps) for s in range(50)}
    assert draws == set(sps)


# -- rewards -------------------------------------------------------------------------

class _OneBlock:
    def __init__(self, total, height=1):
        self.height, self.reward_total = height, total


def test_worked_split_example():
    topo = SimpleNamespace(super_peers=["S1", "S2"], full_nodes=["F1", "F2", "F3", "F4"])
    pol = RewardPolicy(0.1, 0.2, 0.2, 0.5)
    ds = distribute_rewards([_OneBlock(100_000_000)], (1, 2), {"A": 75, "B": 25}, pol, topo,
                            sealers={1: "M"})
    assert ds.mint_shares == {"M": 10_000_000}
    assert ds.dividends == {"S1": 10_000_000, "S2": 10_000_000, "F1": 5_000_000, "F2": 5_000_000,
                            "F3": 5_000_000, "F4": 5_000_000, "A": 37_500_000, "B": 12_500_000}
    mint, sp_each, op_each, per = oracles.split_by_hand(100_000_000, (0.1, 0.2, 0.2, 0.5), 2, 4,
                                                         {"A": 75, "B": 25})
    assert (mint, sp_each, op_each, per) == (10_000_000, 10_000_000, 5_000_000,
                                            {"A": 37_500_000, "B": 12_500_000})


def test_zero_stake_carries_pool():
    topo = SimpleNamespace(super_peers=["S"], full_nodes=["F"])
    pol = RewardPolicy()
    d1 = distribute_rewards([_OneBlock(1000)], (1, 2), {}, pol, topo)
    assert d1.carry_out == 500 and d1.paid() == 500
    d2 = distribute_rewards([_OneBlock(1000, 2)], (2, 3), {"A": 1}, pol, topo, carry=d1.carry_out)
    assert d2.carry_out == 0 and d2.dividends["A"] == 1000
    assert d1.paid() + d2.paid() == 2000


def test_policy_fractions_must_sum_to_one():
    with pytest.raises(ValueError):
        RewardPolicy(0.1, 0.1, 0.1, 0.1)
    RewardPolicy(0.1, 0.2, 0.2, 0.5)


@given(st.lists(st.integers(0, 10**10), min_size=1, max_size=10),
       st.dictionaries(st.sampled_from("ABCDE"), st.integers(0, 1000), max_size=5),
       st.integers(1, 5), st.integers(1, 9),
       st.sampled_from([(0.05, 0.25, 0.2, 0.5), (0.1, 0.2, 0.2, 0.5), (0.0, 0.0, 0.0, 1.0), (0.3, 0.3, 0.3, 0.1)]))
def test_dividends_conserve_every_satoshi(totals, stakes, n_sp, n_full, fr):
    topo = SimpleNamespace(super_peers=[f"S{i}" for i in range(n_sp)], full_nodes=[f"F{i}" for i in range(n_full)])
    blocks = [_OneBlock(t, h + 1) for h, t in enumerate(totals)]
    ds = distribute_rewards(blocks, (1, len(blocks) + 1), stakes, RewardPolicy(*fr), topo)
    assert ds.paid() + ds.carry_out == sum(totals)
    assert all(v >= 0 for v in ds.dividends.values())


def test_distribution_over_real_chain_sums_block_totals(world):
    keys, directory, genesis, chain = world
    for h in range(1, 5):
        chain.append(build_block([], chain.head, MintPolicy(), REWARD))
    topo = SimpleNamespace(super_peers=["S1", "S2", "S3"], full_nodes=["F1"])
    ds = distribute_rewards(chain, (1, 5), {"A": 3, "B": 4}, RewardPolicy(), topo)
    assert ds.total == sum(block_subsidy(h) for h in range(1, 5)) == ds.paid()


# -- audit ---------------------------------------------------------------------------

class Replica:
    def __init__(self, head, data, log=None):
        self.head, self.data, self.log = head, bytes(data), log

    def head_hash(self):
        return self.head

    def read_bytes(self, offsets):
        return [self.data[o] if o < len(self.data) else None for o in offsets]

    def log_evidence(self):
        return self.log


REF = bytes(range(256)) * 8
HEAD = hash_bytes(b"head")


def test_clean_replicas_no_findings():
    targets = {f"n{i}": Replica(HEAD, REF) for i in range(5)}
    assert audit_poll(targets, random.Random(0), HEAD, REF, 16) == []


def test_stale_head_and_silence():
    targets = {"a": Replica(hash_bytes(b"old"), REF), "b": None}
    kinds = [(f.node, f.kind) for f in audit_poll(targets, random.Random(0), HEAD, REF, 4)]
    assert kinds == [("a", HEAD_HASH_MISMATCH), ("b", UNRESPONSIVE)]


def test_tampered_log_found(fast_keys):
    (k, *_), directory = fast_keys
    log = TamperLog("a")
    for i in range(6):
        log.append("vote", hash_bytes(bytes([i])), "x", i)
    head = log.authenticator(k)
    entries = list(log.entries)
    entries[4] = dataclasses.replace(entries[4], local_timestamp=99)
    f = audit_poll({"a": Replica(HEAD, REF, (entries, head))}, random.Random(0), HEAD, REF, 4, directory)
    assert [(x.kind, x.detail[0]) for x in f] == [(LOG_TAMPER, 4)]


def test_corrupt_byte_detection_rate():
    k = 16
    bad = bytearray(REF)
    pos = 777
    bad[pos] ^= 0xFF
    rng = random.Random(12)
    trials, hits = 10_000, 0
    for _ in range(trials):
        f = audit_poll({"x": Replica(HEAD, bad)}, rng, HEAD, REF, k)
        if f:
            assert f[0].kind == MISSING_BYTES and f[0].detail == (pos,)
            hits += 1
    expected = k / len(REF)
    assert abs(hits / trials - expected) / expected <= 0.20


def test_offsets_distinct_and_in_range():
    offs = choose_offsets(random.Random(1), 100, 30)
    assert len(set(offs)) == 30 and all(0 <= o < 100 for o in offs)
    assert choose_offsets(random.Random(1), 5, 30) == [0, 1, 2, 3, 4]


def test_secondary_schedule_is_ten_percent_subsample():
    prim = list(range(200))
    sec = secondary_schedule(prim, random.Random(2))
    assert len(sec) == 20 and set(sec) <= set(prim)


# -- recovery ------------------------------------------------------------------------

def ctx(**kw):
    base = dict(mint_host="s1", super_peers=["s1", "s2", "s3", "s4"],
                agent_hosts={"mint": "s1", "audit-primary": "s1", "recovery": "s3"},
                head_height=7, candidates=["f1", "f2"])
    base.update(kw)
    return RecoveryContext(**base)


def test_equivocating_mint_plan():
    plan = recover([ProvenFault("s1", MINT_EQUIVOCATION, 7)], ctx())
    assert plan.actions[:2] == [(REVERT_BLOCK, 7), (PROMOTE_BACKUP_MINT, "s2")]
    assert (DISABLE_SUPER_PEER, "s1") in plan.actions
    assert (REPLACE_SUPER_PEER, "s1", "f1") in plan.actions


def test_no_faults_empty_plan():
    assert not recover([], ctx())


def test_faulty_audit_host_hands_agent_to_replacement():
    plan = recover([ProvenFault("s1", "super-peer")], ctx(agent_hosts={"audit-primary": "s1", "mint": "s2"},
                                                          mint_host="s2"))
    assert plan.actions == [(DISABLE_SUPER_PEER, "s1"), (REPLACE_SUPER_PEER, "s1", "f1"),
                            (HANDOFF_AGENT, "audit-primary", "f1")]


def test_no_backup_available():
    with pytest.raises(NoBackupAvailable):
        recover([ProvenFault("s1", MINT_EQUIVOCATION, 7)], ctx(excluded=frozenset({"s2", "s3", "s4"})))


def test_plan_holds_at_most_one_revert():
    with pytest.raises(ValueError):
        RecoveryPlan([(REVERT_BLOCK, 1), (REVERT_BLOCK, 2)])


# -- netops --------------------------------------------------------------------------

@given(st.lists(st.integers(0, 5000), min_size=1, max_size=300), st.sampled_from([50, 90, 99, 100]))
def test_percentile_matches_nearest_rank(values, p):
    assert percentile(values, p) == oracles.nearest_rank(values, p)


def test_netops_snapshot_lists_bans():
    state = SimpleNamespace(now=3_600_000, live_nodes=lambda: ["a", "b"], super_peers=["a"], churn_events=2,
                            bytes_sent=10, storage_bytes=lambda: 20, ack_latencies=[100, 200, 300],
                            outages=0, attacks=1, bans={"c": "verdict-1"})
    snap = netops_report(state)
    assert snap.connected_nodes == 2 and snap.churn_rate == 2.0
    assert snap.ack_latency_p99 == 300
    assert snap.misbehaving == [{"node": "c", "verdict": "verdict-1"}]
