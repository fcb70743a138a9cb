"""Tamper-evident justification logs and timeline entanglement.

Every entry is hash-chained to its predecessor::

    authenticator_i = H(authenticator_{i-1} || H(body_i))

where ``body_i`` is the canonical encoding of the entry without its own
authenticator and ``authenticator_{-1}`` is :data:`GENESIS_AUTH`. A signed
:class:`Authenticator` over the head lets peers entangle logs: recording a
peer's signed head in one's own log is evidence that everything up to that
head happened before the recording entry, independent of either clock.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence

from .canonical import encode
from .crypto import Digest, KeyDirectory, KeyPair, Signature, hash_bytes, sign, verify

GENESIS_AUTH: Digest = hash_bytes(b"GENESIS")


class ActivityKind(str, Enum):
    ISSUE_TX = "issue-tx"
    RECEIVE_TX = "receive-tx"
    ACK_TX = "ack-tx"
    ACCEPT_TX = "accept-tx"
    REJECT_TX = "reject-tx"
    NEW_BLOCK_HASH = "new-block-hash"
    ENTANGLE = "entangle"
    AGENT_HANDOFF = "agent-handoff"
    AUDIT_PROBE = "audit-probe"
    VOTE = "vote"


class MonotonicityViolation(Exception):
    pass


class BadSignature(Exception):
    pass


class InconsistentReceipts(Exception):
    pass


@dataclass(frozen=True)
class LogEntry:
    index: int
    local_timestamp: int
    activity_kind: str
    payload_digest: Digest
    counterparty: str
    prev_authenticator: Digest
    authenticator: Digest

    def body_bytes(self) -> bytes:
        return entry_body_bytes(
            self.index,
            self.local_timestamp,
            self.activity_kind,
            self.payload_digest,
            self.counterparty,
            self.prev_authenticator,
        )

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "local_timestamp": self.local_timestamp,
            "activity_kind": self.activity_kind,
            "payload_digest": self.payload_digest.hex(),
            "counterparty": self.counterparty,
            "prev_authenticator": self.prev_authenticator.hex(),
            "authenticator": self.authenticator.hex(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "LogEntry":
        return cls(
            index=int(d["index"]),
            local_timestamp=int(d["local_timestamp"]),
            activity_kind=str(d["activity_kind"]),
            payload_digest=bytes.fromhex(d["payload_digest"]),
            counterparty=str(d["counterparty"]),
            prev_authenticator=bytes.fromhex(d["prev_authenticator"]),
            authenticator=bytes.fromhex(d["authenticator"]),
        )


def entry_body_bytes(index, local_timestamp, kind, payload_digest, counterparty, prev) -> bytes:
    return encode("log-entry", index, local_timestamp, str(kind), payload_digest, counterparty, prev)


def chain_step(prev_authenticator: Digest, body: bytes) -> Digest:
    return hash_bytes(prev_authenticator + hash_bytes(body))


@dataclass(frozen=True)
class Authenticator:
    log_owner: str
    head_index: int
    head_digest: Digest
    signature: Signature

    @staticmethod
    def signed_bytes(log_owner: str, head_index: int, head_digest: Digest) -> bytes:
        return encode("authenticator", log_owner, head_index, head_digest)

    def message(self) -> bytes:
        return self.signed_bytes(self.log_owner, self.head_index, self.head_digest)

    def verify(self, public_key: bytes, scheme: str) -> bool:
        return verify(public_key, self.message(), self.signature, scheme)

    def digest(self) -> Digest:
        return hash_bytes(self.message() + encode(self.signature.value, self.signature.signer))

    def to_json(self) -> dict:
        return {
            "log_owner": self.log_owner,
            "head_index": self.head_index,
            "head_digest": self.head_digest.hex(),
            "signature": self.signature.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Authenticator":
        return cls(
            d["log_owner"],
            int(d["head_index"]),
            bytes.fromhex(d["head_digest"]),
            Signature.from_json(d["signature"]),
        )


@dataclass(frozen=True)
class EntanglementReceipt:
    local_owner: str
    local_entry_index: int
    remote_authenticator: Authenticator


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    first_bad_index: int | None = None
    reason: str | None = None  # chain-break | head-mismatch | signature-invalid | index-gap

    def to_json(self) -> dict:
        return {"ok": self.ok, "first_bad_index": self.first_bad_index, "reason": self.reason}


class TamperLog:
    """Append-only log owned by one node (or one nomadic agent).

    ``owner`` names the log; authenticators are signed with whatever key is
    passed to :meth:`authenticator`, which for agent logs is the current host.
    Raw payload bytes may be kept alongside entries so replay can re-execute
    logged work; the chain itself only commits to their digests.
    """

    def __init__(self, owner: str):
        self.owner = owner
        self.entries: list[LogEntry] = []
        self.payloads: dict[int, bytes] = {}

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def head_index(self) -> int:
        return len(self.entries) - 1

    @property
    def head_digest(self) -> Digest:
        return self.entries[-1].authenticator if self.entries else GENESIS_AUTH

    def append(
        self,
        activity_kind: ActivityKind | str,
        payload_digest: Digest,
        counterparty: str,
        local_timestamp: int,
        payload: bytes | None = None,
    ) -> LogEntry:
        if self.entries and local_timestamp < self.entries[-1].local_timestamp:
            raise MonotonicityViolation(
                f"{self.owner}: timestamp {local_timestamp} < {self.entries[-1].local_timestamp}"
            )
        kind = activity_kind.value if isinstance(activity_kind, ActivityKind) else activity_kind
        index = len(self.entries)
        prev = self.head_digest
        body = entry_body_bytes(index, local_timestamp, kind, payload_digest, counterparty, prev)
        entry = LogEntry(index, local_timestamp, kind, payload_digest, counterparty, prev, chain_step(prev, body))
        self.entries.append(entry)
        if payload is not None:
            self.payloads[index] = payload
        return entry

    def authenticator(self, key: KeyPair) -> Authenticator:
        idx, dig = self.head_index, self.head_digest
        return Authenticator(self.owner, idx, dig, sign(key, Authenticator.signed_bytes(self.owner, idx, dig)))

    def snapshot(self) -> tuple[LogEntry, ...]:
        return tuple(self.entries)

    def export_json(self, head: Authenticator | None = None) -> str:
        doc = {"owner": self.owner, "entries": [e.to_json() for e in self.entries]}
        if head is not None:
            doc["head"] = head.to_json()
        return json.dumps(doc, indent=1)


def append(log: TamperLog, activity_kind, payload_digest, counterparty, local_timestamp, payload=None) -> LogEntry:
    return log.append(activity_kind, payload_digest, counterparty, local_timestamp, payload)


def entangle(
    local_log: TamperLog,
    remote: Authenticator,
    directory: KeyDirectory,
    local_timestamp: int,
) -> EntanglementReceipt:
    """Record ``remote``'s signed head in ``local_log``."""
    if not directory.verify(remote.message(), remote.signature):
        raise BadSignature(f"authenticator for {remote.log_owner} does not verify")
    entry = local_log.append(
        ActivityKind.ENTANGLE,
        remote.head_digest,
        remote.log_owner,
        local_timestamp,
        payload=encode(remote.log_owner, remote.head_index, remote.head_digest),
    )
    return EntanglementReceipt(local_log.owner, entry.index, remote)


def verify_log(
    entries: Sequence[LogEntry],
    claimed_head: Authenticator,
    directory: KeyDirectory | None = None,
) -> VerificationReport:
    """Recompute the chain and compare it with ``claimed_head``.

    Reports the first position where the recomputation fails. Signature
    checking of the head only happens when a key directory is supplied.
    """
    prev = GENESIS_AUTH
    for pos, e in enumerate(entries):
        if e.index != pos:
            return VerificationReport(False, pos, "index-gap")
        if e.prev_authenticator != prev:
            return VerificationReport(False, pos, "chain-break")
        if chain_step(prev, e.body_bytes()) != e.authenticator:
            return VerificationReport(False, pos, "chain-break")
        prev = e.authenticator
    n = len(entries)
    if claimed_head.head_index != n - 1 or claimed_head.head_digest != prev:
        bad = min(n, claimed_head.head_index) if claimed_head.head_index != n - 1 else n - 1
        return VerificationReport(False, max(bad, 0), "head-mismatch")
    if directory is not None and not directory.verify(claimed_head.message(), claimed_head.signature):
        return VerificationReport(False, max(n - 1, 0), "signature-invalid")
    return VerificationReport(True)


def fold_head(entries: Iterable[LogEntry]) -> Digest:
    """Head digest recomputed from entry bodies alone (ignores stored authenticators)."""
    prev = GENESIS_AUTH
    for e in entries:
        prev = chain_step(prev, entry_body_bytes(
            e.index, e.local_timestamp, e.activity_kind, e.payload_digest, e.counterparty, prev))
    return prev


@dataclass
class HappensBefore:
    """Partial order over ``(log id, entry index)`` pairs.

    Stored as one vector per entry: ``clock[log][i][j]`` is the highest index
    of log ``logs[j]`` known to precede entry ``i`` of ``log`` (-1 if none).
    """

    logs: tuple[str, ...]
    lengths: dict[str, int]
    clock: dict[str, list[tuple[int, ...]]] = field(repr=False)

    def precedes(self, a: tuple[str, int], b: tuple[str, int]) -> bool:
        (la, ia), (lb, ib) = a, b
        if la == lb:
            return ia < ib
        return self.clock[lb][ib][self.logs.index(la)] >= ia

    def pairs(self) -> Iterator[tuple[tuple[str, int], tuple[str, int]]]:
        for lb in self.logs:
            for ib in range(self.lengths[lb]):
                vec = self.clock[lb][ib]
                for j, la in enumerate(self.logs):
                    hi = ib - 1 if la == lb else vec[j]
                    for ia in range(hi + 1):
                        yield (la, ia), (lb, ib)

    def cross_pairs(self) -> set[tuple[tuple[str, int], tuple[str, int]]]:
        return {(a, b) for a, b in self.pairs() if a[0] != b[0]}


def derive_order(
    logs: Mapping[str, Sequence[LogEntry]],
    receipts: Iterable[EntanglementReceipt],
) -> HappensBefore:
    """Happens-before relation implied by per-log sequence order plus receipts.

    Receipts whose logs are not both present are ignored. The entangle entry
    itself is ordered after the remote head it records.
    """
    names = tuple(sorted(logs))
    pos = {n: j for j, n in enumerate(names)}
    k = len(names)
    incoming: dict[tuple[str, int], list[tuple[str, int]]] = {}
    for r in receipts:
        remote = r.remote_authenticator
        if r.local_owner not in pos or remote.log_owner not in pos:
            continue
        local_entries = logs[r.local_owner]
        if not 0 <= r.local_entry_index < len(local_entries):
            raise InconsistentReceipts(f"receipt points past end of {r.local_owner}")
        e = local_entries[r.local_entry_index]
        if e.activity_kind != ActivityKind.ENTANGLE.value or e.payload_digest != remote.head_digest:
            raise InconsistentReceipts(
                f"{r.local_owner}[{r.local_entry_index}] does not record {remote.log_owner}'s head")
        if remote.head_index < 0:
            continue
        if remote.head_index >= len(logs[remote.log_owner]):
            raise InconsistentReceipts(f"receipt cites missing entry of {remote.log_owner}")
        if remote.log_owner == r.local_owner:
            if remote.head_index >= r.local_entry_index:
                raise InconsistentReceipts("self-entanglement points forward")
            continue
        incoming.setdefault((r.local_owner, r.local_entry_index), []).append(
            (remote.log_owner, remote.head_index))

    clock: dict[str, list[tuple[int, ...]]] = {n: [] for n in names}
    done = {n: 0 for n in names}
    lengths = {n: len(logs[n]) for n in names}
    progress = True
    while progress:
        progress = False
        for n in names:
            i = done[n]
            while i < lengths[n]:
                deps = incoming.get((n, i), ())
                if any(done[src] <= sidx for src, sidx in deps):
                    break
                vec = list(clock[n][i - 1]) if i else [-1] * k
                if i:
                    vec[pos[n]] = i - 1
                for src, sidx in deps:
                    other = clock[src][sidx]
                    for j in range(k):
                        if other[j] > vec[j]:
                            vec[j] = other[j]
                    if sidx > vec[pos[src]]:
                        vec[pos[src]] = sidx
                clock[n].append(tuple(vec))
                i += 1
                progress = True
            done[n] = i
    if any(done[n] < lengths[n] for n in names):
        raise InconsistentReceipts("receipts imply a cycle")
    return HappensBefore(names, lengths, clock)
