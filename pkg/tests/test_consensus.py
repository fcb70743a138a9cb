import itertools
import random

import pytest
from hypothesis import given, strategies as st

from coopstake.agents.mint import MintAgent
from coopstake.consensus import (
    MISBEHAVIOR_PROVEN,
    NO,
    NO_QUORUM,
    REJECTED,
    UPHELD,
    YES,
    AckClaim,
    Announcement,
    AttestedLog,
    LogEvidence,
    MintReplay,
    NotAuthorized,
    StakeTable,
    Unresolvable,
    Verdict,
    Vote,
    ack_payload,
    ban_node,
    ban_proposal_id,
    cast_vote,
    commit_tally,
    BlockVote,
    equivocation_proof,
    replay_attest,
    resolve_dispute,
    tally_votes,
)
from coopstake.crypto import KeyDirectory, hash_bytes, keygen
from coopstake.ledger import COIN, Chain, MintPolicy, Outpoint, TxOutput, build_genesis, make_transaction
from coopstake.overlay import OverlayConfig, build_topology
from coopstake.tamper_log import TamperLog
import oracles

PID = hash_bytes(b"proposal")


def votes_for(pattern):
    return [Vote(a, PID, c) for a, c in pattern.items() if c is not None]


# -- tallying ------------------------------------------------------------------------

def test_sixty_percent_yes():
    st_ = StakeTable({"A": 60, "B": 30, "C": 10})
    assert tally_votes(votes_for({"A": YES}), st_) == YES


def test_half_responding_is_no_quorum():
    st_ = StakeTable({"A": 50, "B": 30, "C": 20})
    assert tally_votes(votes_for({"A": YES}), st_) == NO_QUORUM
    assert tally_votes(votes_for({"B": NO, "C": YES}), st_) == NO_QUORUM


def test_minority_yes_majority_no():
    assert tally_votes(votes_for({"A": YES, "B": NO}), StakeTable({"A": 49, "B": 51})) == NO


def test_first_vote_per_address_counts():
    st_ = StakeTable({"A": 60, "B": 40})
    assert tally_votes([Vote("A", PID, NO), Vote("A", PID, YES), Vote("B", PID, NO)], st_) == NO


def test_signed_votes_checked(fast_keys):
    (a, b, *_), directory = fast_keys
    st_ = StakeTable({a.address: 60, b.address: 40})
    good = cast_vote(a, PID, YES)
    assert tally_votes([good], st_, directory) == YES
    forged = Vote(a.address, PID, YES, cast_vote(a, PID, NO).signature)
    assert tally_votes([forged], st_, directory) == NO_QUORUM
    assert tally_votes([good], st_, directory, proposal_id=hash_bytes(b"other")) == NO_QUORUM


@pytest.mark.parametrize("n", [3, 4, 5])
def test_exhaustive_patterns_match_strict_majority(n):
    names = "ABCDE"[:n]
    stake_sets = [dict(zip(names, s)) for s in itertools.product([1, 2, 3, 5], repeat=n)]
    # add exact-half configurations explicitly
    stake_sets.append(dict(zip(names, [50, 50] + [0] * (n - 2))))
    stake_sets.append(dict(zip(names, [25] * 2 + [50] + [0] * (n - 3))))
    checked = 0
    for stakes in stake_sets:
        table = StakeTable(stakes)
        for pattern in itertools.product([YES, NO, None], repeat=n):
            p = dict(zip(names, pattern))
            assert tally_votes(votes_for(p), table) == oracles.majority_outcome(stakes, p), (stakes, p)
            checked += 1
    assert checked > 1000


@given(st.lists(st.tuples(st.sampled_from("ABCDEF"), st.sampled_from([YES, NO])), max_size=12), st.randoms())
def test_tally_order_independent_over_distinct_voters(votes, rnd):
    dedup = dict(votes)
    vs = [Vote(a, PID, c) for a, c in dedup.items()]
    shuffled = list(vs)
    rnd.shuffle(shuffled)
    table = StakeTable({a: i + 1 for i, a in enumerate("ABCDEF")})
    assert tally_votes(vs, table) == tally_votes(shuffled, table)


def test_negative_stake_rejected():
    with pytest.raises(ValueError):
        StakeTable({"A": -1})


# -- attested memory -----------------------------------------------------------------

def test_a2m_slot_binds_once(fast_keys):
    (k, *_), directory = fast_keys
    mem = AttestedLog(k.address, k)
    first = mem.attest(("block", 0, 3), hash_bytes(b"x"))
    second = mem.attest(("block", 0, 3), hash_bytes(b"y"))
    assert second == first and first.verify(directory)


def test_equivocation_proof(fast_keys):
    (k, other, *_), directory = fast_keys
    g = build_genesis("r" * 40)
    from coopstake.ledger import build_block

    b1 = build_block([], g, MintPolicy(), "r" * 40)
    b2 = build_block([], g, MintPolicy(), "s" * 40)
    a1, a2 = Announcement.for_block(b1, 0, k), Announcement.for_block(b2, 0, k)
    assert equivocation_proof(a1, a2, directory)
    assert not equivocation_proof(a1, a1, directory)
    assert not equivocation_proof(a1, Announcement.for_block(b2, 0, other), directory)


def test_commit_tally_one_vote_per_voter(fast_keys):
    (k, *_), _ = fast_keys
    mem = AttestedLog(k.address, k)
    h = hash_bytes(b"h")
    att = mem.attest(("block", 0, 1), h)
    v = BlockVote("A", 0, 1, h, None, att)
    assert commit_tally([v, v], StakeTable({"A": 7})) == {h: 7}


# -- replay --------------------------------------------------------------------------

@pytest.fixture
def mint_world(fast_keys):
    keys, directory = fast_keys
    reward = "r" * 40
    genesis = build_genesis(reward, [(k.address, COIN) for k in keys])
    chain = Chain(directory)
    chain.append(genesis)
    mint = MintAgent(MintPolicy(), reward, chain, directory=directory)
    txs = {}
    for i, k in enumerate(keys[:4]):
        tx = make_transaction(k, [Outpoint(genesis.coinbase.id, i)],
                              [TxOutput(keys[i + 1].address, COIN // 2), TxOutput(k.address, COIN // 2 - 500)], 500)
        txs[tx.id] = tx
    return keys, genesis, mint, txs


def _ack_all(mint, txs, key, t0=1000, **kw):
    for i, tx in enumerate(sorted(txs.values(), key=lambda t: t.id)):
        mint.ack(tx, t0 + 10 * i, key, t0 + 10 * i, **(kw if i == 2 else {}))


def _replay(mint, txs, genesis):
    return replay_attest(mint.log.entries, mint.log.payloads, MintReplay(txs, MintPolicy(), "r" * 40, genesis))


def test_honest_mint_log_replays(mint_world):
    keys, genesis, mint, txs = mint_world
    _ack_all(mint, txs, keys[7])
    mint.seal(600_000, keys[7], 600_000)
    assert _replay(mint, txs, genesis).matches


def test_omitted_tx_diverges_at_block_entry(mint_world):
    keys, genesis, mint, txs = mint_world
    _ack_all(mint, txs, keys[7])
    mint.seal(600_000, keys[7], 600_000, omit=True)
    res = _replay(mint, txs, genesis)
    assert not res.matches
    assert res.index == len(mint.log) - 1
    assert mint.log.entries[res.index].activity_kind == "new-block-hash"


def test_forged_ack_timestamp_diverges(mint_world):
    keys, genesis, mint, txs = mint_world
    _ack_all(mint, txs, keys[7], forge=True)
    res = _replay(mint, txs, genesis)
    assert not res.matches
    e = mint.log.entries[res.index]
    assert e.activity_kind == "ack-tx"
    # the forged acknowledgment is the third one
    assert res.index == [i for i, x in enumerate(mint.log.entries) if x.activity_kind == "ack-tx"][2]


# -- disputes ------------------------------------------------------------------------

def _evidence(log, key):
    return LogEvidence(log.owner, list(log.entries), log.authenticator(key), dict(log.payloads))


def test_receipt_contradicting_log_convicts_mint(mint_world):
    keys, genesis, mint, txs = mint_world
    tx = next(iter(txs.values()))
    ack = mint.ack(tx, 1000, keys[7], 1000)
    # the mint later presents a rewritten log without that acknowledgment
    rewritten = TamperLog(mint.log.owner)
    for i in range(3):
        rewritten.append("receive-tx", hash_bytes(bytes([i])), "x", 1000 + i)
    issuer = TamperLog("issuer")
    issuer.append("issue-tx", tx.id, "@mint", 990)
    issuer.append("entangle", ack.mint_authenticator.head_digest, "@mint", 1100)
    claim = AckClaim("issuer", mint.log.owner, tx.id, ack_payload(tx.id, 1000), ack.mint_authenticator)
    v = resolve_dispute(claim, _evidence(rewritten, keys[7]), _evidence(issuer, keys[0]),
                        StakeTable({keys[0].address: 1}))
    assert v.outcome == MISBEHAVIOR_PROVEN and v.accused == mint.log.owner


def test_consistent_logs_fall_back_to_votes(fast_keys):
    keys, directory = fast_keys
    a, b = TamperLog("issuer"), TamperLog("@mint")
    a.append("issue-tx", hash_bytes(b"t"), "@mint", 1)
    b.append("receive-tx", hash_bytes(b"other"), "x", 1)
    claim = AckClaim("issuer", "@mint", hash_bytes(b"t"), b"")
    stakes = StakeTable({keys[2].address: 60, keys[3].address: 40})
    ev_a, ev_b = _evidence(b, keys[1]), _evidence(a, keys[0])
    yes = [cast_vote(keys[2], claim.proposal_id, YES)]
    assert resolve_dispute(claim, ev_a, ev_b, stakes, yes).outcome == UPHELD
    no = [cast_vote(keys[2], claim.proposal_id, NO)]
    assert resolve_dispute(claim, ev_a, ev_b, stakes, no).outcome == REJECTED
    silent = [cast_vote(keys[3], claim.proposal_id, YES)]
    with pytest.raises(Unresolvable):
        resolve_dispute(claim, ev_a, ev_b, stakes, silent)


def test_tampered_log_convicts_its_owner(fast_keys):
    import dataclasses

    keys, _ = fast_keys
    a, b = TamperLog("issuer"), TamperLog("@mint")
    for i in range(4):
        b.append("receive-tx", hash_bytes(bytes([i])), "x", i)
    a.append("issue-tx", hash_bytes(b"t"), "@mint", 1)
    ev = _evidence(b, keys[1])
    entries = list(ev.entries)
    entries[2] = dataclasses.replace(entries[2], counterparty="y")
    ev = LogEvidence(ev.owner, entries, ev.head)
    v = resolve_dispute(AckClaim("issuer", "@mint", hash_bytes(b"t"), b""), ev, _evidence(a, keys[0]),
                        StakeTable({"z": 1}))
    assert v.outcome == MISBEHAVIOR_PROVEN and v.evidence == ("@mint", 2)


# -- bans ----------------------------------------------------------------------------

@pytest.fixture
def topo():
    rng = random.Random(0)
    scores = {f"n{i:03d}": rng.random() for i in range(12)}
    cfg = OverlayConfig(super_peer_count=4, max_connection_fraction=1.0)
    return build_topology(scores, scores, cfg, lambda a, b: 10, rng), cfg


def test_ban_proven_super_peer_replaced(topo):
    t, cfg = topo
    bad = t.super_peers[0]
    repl = t.full_nodes[0]
    v = Verdict(hash_bytes(b"p"), MISBEHAVIOR_PROVEN, ("log", 3), bad)
    new = ban_node(t, bad, v, cfg, lambda a, b: 10, random.Random(1), replacement=repl)
    assert bad not in new.super_peers and bad not in new.plans
    assert repl in new.super_peers
    assert not new.violations()


def test_ban_by_majority_vote(topo):
    t, cfg = topo
    node = t.full_nodes[3]
    stakes = StakeTable({"A": 51, "B": 49})
    outcome = tally_votes([Vote("A", ban_proposal_id(node), YES)], stakes)
    assert outcome == YES
    v = Verdict(ban_proposal_id(node), UPHELD)
    new = ban_node(t, node, v, cfg, lambda a, b: 10, random.Random(1))
    assert node not in new.plans


def test_ban_without_verdict(topo):
    t, cfg = topo
    with pytest.raises(NotAuthorized):
        ban_node(t, t.full_nodes[0], None, cfg, lambda a, b: 10, random.Random(1))
    wrong = Verdict(hash_bytes(b"p"), MISBEHAVIOR_PROVEN, None, "someone-else")
    with pytest.raises(NotAuthorized):
        ban_node(t, t.full_nodes[0], wrong, cfg, lambda a, b: 10, random.Random(1))
