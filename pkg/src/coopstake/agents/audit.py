"""Audit agents: random polls of full-node replicas and logs."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from ..crypto import Digest, KeyDirectory
from ..tamper_log import Authenticator, LogEntry, verify_log

HEAD_HASH_MISMATCH = "head-hash-mismatch"
MISSING_BYTES = "missing-bytes"
LOG_TAMPER = "log-tamper"
UNRESPONSIVE = "unresponsive"
FINDING_KINDS = (HEAD_HASH_MISMATCH, MISSING_BYTES, LOG_TAMPER, UNRESPONSIVE)


@dataclass(frozen=True)
class AuditFinding:
    node: str
    kind: str
    detail: tuple = ()

    def to_json(self) -> dict:
        return {"node": self.node, "kind": self.kind, "detail": list(self.detail)}


class ReplicaView(Protocol):
    """What a polled node answers with."""

    def head_hash(self) -> Digest: ...

    def read_bytes(self, offsets: Sequence[int]) -> list[int | None]: ...

    def log_evidence(self) -> tuple[Sequence[LogEntry], Authenticator] | None: ...


def choose_offsets(rng: random.Random, total_bytes: int, k: int) -> list[int]:
    """``k`` distinct offsets, uniform without replacement."""
    if total_bytes <= 0:
        return []
    return sorted(rng.sample(range(total_bytes), min(k, total_bytes)))


def evaluate_poll(
    node: str,
    view: ReplicaView,
    offsets: Sequence[int],
    head_hash: Digest,
    reference_bytes: bytes,
    directory: KeyDirectory | None = None,
) -> list[AuditFinding]:
    """Findings from one answered poll at the given probe offsets."""
    findings = []
    got = view.head_hash()
    if got != head_hash:
        findings.append(AuditFinding(node, HEAD_HASH_MISMATCH, (head_hash.hex(), got.hex())))
    answers = view.read_bytes(offsets)
    bad = tuple(o for o, b in zip(offsets, answers) if b != reference_bytes[o])
    if bad:
        findings.append(AuditFinding(node, MISSING_BYTES, bad))
    ev = view.log_evidence()
    if ev is not None:
        entries, head = ev
        rep = verify_log(entries, head, directory)
        if not rep.ok:
            findings.append(AuditFinding(node, LOG_TAMPER, (rep.first_bad_index, rep.reason)))
    return findings


def audit_poll(
    targets: Mapping[str, ReplicaView | None],
    rng: random.Random,
    head_hash: Digest,
    reference_bytes: bytes,
    probe_count: int,
    directory: KeyDirectory | None = None,
) -> list[AuditFinding]:
    """Poll each target once; ``None`` marks a target that did not answer.

    ``reference_bytes`` is the auditor's own serialization of the settled
    chain prefix, so a probe never lands on a block still being voted on.
    """
    findings = []
    for node in sorted(targets):
        view = targets[node]
        if view is None:
            findings.append(AuditFinding(node, UNRESPONSIVE))
            continue
        offsets = choose_offsets(rng, len(reference_bytes), probe_count)
        findings.extend(evaluate_poll(node, view, offsets, head_hash, reference_bytes, directory))
    return findings


def secondary_schedule(primary: Sequence, rng: random.Random, fraction: float = 0.10) -> list:
    """Random subsample of the primary audit's schedule, duplicated independently."""
    n = len(primary)
    if n == 0:
        return []
    k = max(1, round(fraction * n))
    idx = sorted(rng.sample(range(n), k))
    return [primary[i] for i in idx]
