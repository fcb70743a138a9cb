"""Stake-weighted voting, replay attestation, dispute resolution and banning.

Voting is only needed when logs cannot settle a question by themselves:
replaying an accused node's log against the reference behavior comes first,
and a stake-weighted tally is the fallback when the evidence is ambiguous.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .canonical import DecodeError, decode, encode
from .crypto import Address, Digest, KeyDirectory, KeyPair, Signature, hash_bytes, sign
from .ledger import AckedTransaction, Block, MintPolicy, build_block, sort_acked
from .overlay import NodeId, OverlayConfig, Topology, remove_node
from .tamper_log import ActivityKind, Authenticator, LogEntry, verify_log

YES = "yes"
NO = "no"
NO_QUORUM = "no-quorum"

UPHELD = "upheld"
REJECTED = "rejected"
MISBEHAVIOR_PROVEN = "misbehavior-proven"


class Unresolvable(Exception):
    pass


class NotAuthorized(Exception):
    pass


class StakeTable:
    def __init__(self, entries: Mapping[Address, int] | None = None):
        self.entries: dict[Address, int] = {}
        for a, s in (entries or {}).items():
            if s < 0:
                raise ValueError(f"negative stake for {a}")
            if s:
                self.entries[a] = s
        self.total = sum(self.entries.values())

    def stake(self, address: Address) -> int:
        return self.entries.get(address, 0)

    def majority(self, stake: int) -> bool:
        """Strictly more than half of all offered stake."""
        return 2 * stake > self.total

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> dict:
        return dict(sorted(self.entries.items()))


def vote_bytes(proposal_id: Digest, choice: str) -> bytes:
    return encode("vote", proposal_id, choice)


@dataclass(frozen=True)
class Vote:
    voter: Address
    proposal_id: Digest
    choice: str
    signature: Signature | None = None


def cast_vote(key: KeyPair, proposal_id: Digest, choice: str) -> Vote:
    if choice not in (YES, NO):
        raise ValueError("choice must be yes or no")
    return Vote(key.address, proposal_id, choice, sign(key, vote_bytes(proposal_id, choice)))


def tally_votes(
    votes: Iterable[Vote],
    stakes: StakeTable,
    directory: KeyDirectory | None = None,
    proposal_id: Digest | None = None,
) -> str:
    """Strict-majority tally weighted by offered stake.

    ``yes`` needs approving stake above half the total. ``no`` needs a quorum
    (responding stake above half) and rejecting stake of at least half, which
    makes approval impossible. Anything else is ``no-quorum``. Only the first
    vote per address counts; unsigned or badly signed votes are skipped when a
    directory is supplied.
    """
    seen: set[Address] = set()
    yes = no = 0
    for v in votes:
        if v.voter in seen:
            continue
        if proposal_id is not None and v.proposal_id != proposal_id:
            continue
        if directory is not None:
            if v.signature is None or v.signature.signer != v.voter:
                continue
            if not directory.verify(vote_bytes(v.proposal_id, v.choice), v.signature):
                continue
        seen.add(v.voter)
        if v.choice == YES:
            yes += stakes.stake(v.voter)
        elif v.choice == NO:
            no += stakes.stake(v.voter)
    if not stakes.majority(yes + no):
        return NO_QUORUM
    if stakes.majority(yes):
        return YES
    if 2 * no >= stakes.total:
        return NO
    return NO_QUORUM


# -- attested append-only memory ------------------------------------------

@dataclass(frozen=True)
class Attestation:
    owner: Address
    log_name: str
    slot: tuple
    value: Digest
    signature: Signature

    @staticmethod
    def signed_bytes(owner, log_name, slot, value) -> bytes:
        return encode("a2m", owner, log_name, list(slot), value)

    def verify(self, directory: KeyDirectory) -> bool:
        msg = self.__dict__.get("_msg")
        if msg is None:
            msg = self.signed_bytes(self.owner, self.log_name, self.slot, self.value)
            object.__setattr__(self, "_msg", msg)
        return directory.verify(msg, self.signature)


class AttestedLog:
    """Trusted per-node append-only memory.

    A slot can be bound to exactly one value; asking again for the same slot
    returns the original attestation, so its owner cannot sign two different
    values for it. Fault injection never reaches this component.
    """

    def __init__(self, owner: Address, key: KeyPair, log_name: str = "votes"):
        self.owner = owner
        self.key = key
        self.log_name = log_name
        self._slots: dict[tuple, Attestation] = {}

    def attest(self, slot: tuple, value: Digest) -> Attestation:
        slot = tuple(slot)
        got = self._slots.get(slot)
        if got is not None:
            return got
        att = Attestation(self.owner, self.log_name, slot, value,
                          sign(self.key, Attestation.signed_bytes(self.owner, self.log_name, slot, value)))
        self._slots[slot] = att
        return att

    def lookup(self, slot: tuple) -> Attestation | None:
        return self._slots.get(tuple(slot))


@dataclass(frozen=True)
class Announcement:
    """The mint's signed claim of the block it sealed at ``(epoch, height)``."""

    epoch: int
    height: int
    timestamp: int
    prev_hash: Digest
    block_hash: Digest
    tx_refs: tuple[tuple[Digest, int], ...]
    signature: Signature | None = None

    @staticmethod
    def signed_bytes(epoch, height, timestamp, prev_hash, block_hash, tx_refs) -> bytes:
        return encode("announce", epoch, height, timestamp, prev_hash, block_hash, [list(r) for r in tx_refs])

    def message(self) -> bytes:
        return self.signed_bytes(self.epoch, self.height, self.timestamp, self.prev_hash,
                                 self.block_hash, self.tx_refs)

    def verify(self, directory: KeyDirectory) -> bool:
        return self.signature is not None and directory.verify(self.message(), self.signature)

    @classmethod
    def for_block(cls, block: Block, epoch: int, key: KeyPair) -> "Announcement":
        refs = tuple((a.tx.id, a.ack_timestamp) for a in block.txs)
        msg = cls.signed_bytes(epoch, block.height, block.timestamp, block.prev_hash, block.block_hash, refs)
        return cls(epoch, block.height, block.timestamp, block.prev_hash, block.block_hash, refs, sign(key, msg))


def equivocation_proof(a: Announcement, b: Announcement, directory: KeyDirectory) -> bool:
    """Two validly signed, conflicting announcements from one signer."""
    return (
        a.epoch == b.epoch
        and a.height == b.height
        and a.block_hash != b.block_hash
        and a.signature is not None
        and b.signature is not None
        and a.signature.signer == b.signature.signer
        and a.verify(directory)
        and b.verify(directory)
    )


@dataclass(frozen=True)
class BlockVote:
    """A node's confirmation of the block it rebuilt at ``(epoch, height)``.

    The mint's announcement the voter saw rides along, so collected votes
    double as evidence of mint equivocation.
    """

    voter: Address
    epoch: int
    height: int
    block_hash: Digest
    announcement: Announcement | None
    attestation: Attestation

    def valid(self, directory: KeyDirectory, a2m_owner: Mapping[Address, Address]) -> bool:
        att = self.attestation
        return (
            att.owner == a2m_owner.get(self.voter)
            and tuple(att.slot) == ("block", self.epoch, self.height)
            and att.value == self.block_hash
            and att.verify(directory)
        )


def commit_tally(votes: Iterable[BlockVote], stakes: StakeTable) -> dict[Digest, int]:
    """Stake behind each hash, one vote per voter (already validated)."""
    seen: set[Address] = set()
    out: dict[Digest, int] = {}
    for v in votes:
        if v.voter in seen:
            continue
        seen.add(v.voter)
        out[v.block_hash] = out.get(v.block_hash, 0) + stakes.stake(v.voter)
    return out


# -- replay attestation ----------------------------------------------------

@dataclass(frozen=True)
class ReplayResult:
    matches: bool
    index: int | None = None
    reason: str = ""


class ReplayMachine:
    """Reference behavior re-executed over a log.

    ``feed`` consumes one entry with its raw payload and returns the digest
    the entry ought to carry when it is an output of the node's function, or
    ``None`` for pure inputs. Raising :class:`ReplayDivergence` flags an input
    the reference behavior could never have logged.
    """

    def feed(self, entry: LogEntry, payload: bytes | None) -> Digest | None:
        raise NotImplementedError


class ReplayDivergence(Exception):
    pass


def replay_attest(
    accused_log: Sequence[LogEntry],
    logged_inputs: Mapping[int, bytes],
    reference_behavior: ReplayMachine,
) -> ReplayResult:
    for e in accused_log:
        try:
            expected = reference_behavior.feed(e, logged_inputs.get(e.index))
        except ReplayDivergence as exc:
            return ReplayResult(False, e.index, str(exc))
        if expected is not None and expected != e.payload_digest:
            return ReplayResult(False, e.index, f"{e.activity_kind} output differs from replay")
    return ReplayResult(True)


def ack_payload(acked_tx_id: Digest, ack_timestamp: int, status: str = "accepted") -> bytes:
    return encode("ack", acked_tx_id, ack_timestamp, status)


def block_payload(height: int, timestamp: int, prev_hash: Digest, block_hash: Digest) -> bytes:
    return encode("new-block", height, timestamp, prev_hash, block_hash)


class MintReplay(ReplayMachine):
    """Replays a mint log: acknowledgments in, sealed block hashes out.

    Needs the acknowledged transactions themselves (``txs`` by id) because
    the log stores only the ack payload. Ack timestamps must never go
    backwards in log order; each sealed block must be exactly the one
    :func:`build_block` produces from the pending acknowledgments.
    """

    def __init__(self, txs: Mapping[Digest, object], policy: MintPolicy, reward_address: Address,
                 genesis: Block):
        """``genesis`` is the block the log starts from, not necessarily height 0."""
        self.txs = txs
        self.policy = policy
        self.reward_address = reward_address
        self.prev = genesis
        self.history: list[Block] = []
        self.pending: dict[Digest, AckedTransaction] = {}
        self.last_ack = None

    def feed(self, entry, payload):
        if entry.activity_kind == ActivityKind.ACK_TX.value:
            if payload is None or hash_bytes(payload) != entry.payload_digest:
                raise ReplayDivergence("ack payload missing or altered")
            txid, ts, status = _decode_ack(payload)
            if status != "accepted":
                return None
            if self.last_ack is not None and ts < self.last_ack:
                raise ReplayDivergence(f"ack timestamp {ts} precedes earlier ack {self.last_ack}")
            self.last_ack = ts
            tx = self.txs.get(txid)
            if tx is None:
                raise ReplayDivergence("acknowledged transaction unavailable")
            self.pending[txid] = AckedTransaction(tx, ts)
            return None
        if entry.activity_kind == ActivityKind.NEW_BLOCK_HASH.value:
            if payload is None:
                raise ReplayDivergence("block payload missing")
            height, ts, prev_hash, _claimed = _decode_block(payload)
            if self.history and height == self.prev.height and prev_hash == self.prev.prev_hash:
                # the previous round found no quorum and its block was abandoned
                for a in self.prev.txs:
                    self.pending[a.tx.id] = a
                self.prev = self.history.pop()
            if height != self.prev.height + 1 or prev_hash != self.prev.block_hash:
                raise ReplayDivergence("block does not extend replayed chain")
            due = sort_acked(a for a in self.pending.values() if a.ack_timestamp < ts)
            block = build_block(due[: self.policy.max_block_txs], self.prev, self.policy,
                                self.reward_address, ts)
            for a in block.txs:
                del self.pending[a.tx.id]
            self.history.append(self.prev)
            self.prev = block
            return hash_bytes(block_payload(height, ts, prev_hash, block.block_hash))
        return None


def _decode_ack(payload: bytes) -> tuple[Digest, int, str]:
    fields = _decode(payload, "ack", 4)
    return fields[1], fields[2], fields[3]


def _decode_block(payload: bytes) -> tuple[int, int, Digest, Digest]:
    fields = _decode(payload, "new-block", 5)
    return fields[1], fields[2], fields[3], fields[4]


def _decode(payload: bytes, tag: str, n: int) -> list:
    try:
        fields = decode(payload)
    except DecodeError as exc:
        raise ReplayDivergence(f"undecodable {tag} payload: {exc}") from None
    if len(fields) != n or fields[0] != tag:
        raise ReplayDivergence(f"payload is not a {tag} record")
    return fields


# -- disputes and bans -----------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    proposal_id: Digest
    outcome: str
    evidence: tuple[str, int] | None = None
    accused: str | None = None

    def to_json(self) -> dict:
        return {
            "proposal_id": self.proposal_id.hex(),
            "outcome": self.outcome,
            "evidence": list(self.evidence) if self.evidence else None,
            "accused": self.accused,
        }


@dataclass(frozen=True)
class LogEvidence:
    owner: str
    entries: Sequence[LogEntry]
    head: Authenticator
    payloads: Mapping[int, bytes] = field(default_factory=dict)


@dataclass(frozen=True)
class AckClaim:
    """``claimant`` says ``accused`` acknowledged ``tx_id``.

    ``receipt`` is the accused's signed log head returned with the ack, if
    the claimant received one.
    """

    claimant: str
    accused: str
    tx_id: Digest
    ack_payload: bytes
    receipt: Authenticator | None = None

    @property
    def proposal_id(self) -> Digest:
        return hash_bytes(encode("dispute", self.claimant, self.accused, self.tx_id, self.ack_payload))


def resolve_dispute(
    claim: AckClaim,
    accused: LogEvidence,
    claimant: LogEvidence,
    stakes: StakeTable,
    votes: Iterable[Vote] = (),
    directory: KeyDirectory | None = None,
    reference: ReplayMachine | None = None,
) -> Verdict:
    """Settle an acknowledgment dispute, evidence first and votes last.

    Order: tamper checks on both logs, the receipt against the accused's
    log, replay of the accused against ``reference``; only when none of these
    proves misbehavior do the peers' votes decide.
    """
    pid = claim.proposal_id
    for ev in (accused, claimant):
        rep = verify_log(ev.entries, ev.head, directory)
        if not rep.ok:
            return Verdict(pid, MISBEHAVIOR_PROVEN, (ev.owner, rep.first_bad_index), ev.owner)

    r = claim.receipt
    if r is not None and r.log_owner == accused.owner:
        signed_ok = directory is None or directory.verify(r.message(), r.signature)
        if signed_ok:
            k = r.head_index
            entries = accused.entries
            if k >= len(entries) or (k >= 0 and entries[k].authenticator != r.head_digest):
                return Verdict(pid, MISBEHAVIOR_PROVEN, (accused.owner, min(k, len(entries))), accused.owner)

    if reference is not None:
        res = replay_attest(accused.entries, accused.payloads, reference)
        if not res.matches:
            return Verdict(pid, MISBEHAVIOR_PROVEN, (accused.owner, res.index), accused.owner)

    outcome = tally_votes(votes, stakes, directory, pid)
    if outcome == YES:
        return Verdict(pid, UPHELD)
    if outcome == NO:
        return Verdict(pid, REJECTED)
    raise Unresolvable("no replay divergence and no stake quorum")


def ban_proposal_id(node: NodeId) -> Digest:
    return hash_bytes(encode("ban", node))


def ban_node(
    topology: Topology,
    node: NodeId,
    verdict: Verdict | None,
    cfg: OverlayConfig,
    latency: Callable[[NodeId, NodeId], float],
    rng: random.Random,
    replacement: NodeId | None = None,
) -> Topology:
    """Remove ``node`` and re-home its connections.

    Allowed only on proven misbehavior by ``node`` or an upheld ban proposal
    naming it. A banned super peer is replaced by ``replacement``.
    """
    if verdict is None:
        raise NotAuthorized(f"no verdict against {node}")
    proven = verdict.outcome == MISBEHAVIOR_PROVEN and verdict.accused == node
    voted = verdict.outcome == UPHELD and verdict.proposal_id == ban_proposal_id(node)
    if not (proven or voted):
        raise NotAuthorized(f"verdict {verdict.outcome} does not authorize banning {node}")
    return remove_node(topology, node, replacement, cfg, latency, rng)
