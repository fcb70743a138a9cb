from __future__ import annotations

import json
from dataclasses import dataclass

from ..canonical import encode
from ..crypto import KeyDirectory, KeyPair, Signature, sign

MINT = "mint"
CONFIGURATION = "configuration"
SEED = "seed"
REWARD = "reward"
AUDIT_PRIMARY = "audit-primary"
AUDIT_SECONDARY = "audit-secondary"
RECOVERY = "recovery"
NETOPS = "netops"
PROVISIONING = "provisioning"

SINGLETON_KINDS = (MINT, CONFIGURATION, REWARD, AUDIT_PRIMARY, RECOVERY, NETOPS, PROVISIONING)
AGENT_KINDS = SINGLETON_KINDS + (SEED, AUDIT_SECONDARY)


class BadHandoffSignature(Exception):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class AgentState:
    """Serialized, signed process state of a nomadic agent in transit.

    ``payload`` is canonical JSON; the signature of the departing host covers
    ``(kind, sequence, payload)``.
    """

    kind: str
    host: str
    sequence: int
    payload: bytes
    signature: Signature | None = None

    @staticmethod
    def signed_bytes(kind: str, sequence: int, payload: bytes) -> bytes:
        return encode("agent-state", kind, sequence, payload)

    def message(self) -> bytes:
        return self.signed_bytes(self.kind, self.sequence, self.payload)

    def state(self) -> dict:
        return json.loads(self.payload)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "host": self.host,
            "sequence": self.sequence,
            "payload": json.loads(self.payload),
            "signature": self.signature.to_json() if self.signature else None,
        }


def serialize_state(kind: str, host: str, sequence: int, state: dict) -> AgentState:
    return AgentState(kind, host, sequence, canonical_json(state))


def handoff(state: AgentState, next_host: str, departing_key: KeyPair) -> AgentState:
    """Sign ``state`` for transfer to ``next_host``; sequence advances by one."""
    seq = state.sequence + 1
    sig = sign(departing_key, AgentState.signed_bytes(state.kind, seq, state.payload))
    return AgentState(state.kind, next_host, seq, state.payload, sig)


def receive_handoff(state: AgentState, directory: KeyDirectory, expected_signer: str | None = None,
                    last_sequence: int | None = None) -> dict:
    """Verify an incoming state and return its decoded payload.

    Raises :class:`BadHandoffSignature` if the signature does not verify, is
    not from ``expected_signer``, or the sequence does not advance.
    """
    sig = state.signature
    if sig is None or not directory.verify(state.message(), sig):
        raise BadHandoffSignature(f"{state.kind} state #{state.sequence} failed verification")
    if expected_signer is not None and sig.signer != expected_signer:
        raise BadHandoffSignature(f"{state.kind} state signed by {sig.signer}, expected {expected_signer}")
    if last_sequence is not None and state.sequence <= last_sequence:
        raise BadHandoffSignature(f"{state.kind} sequence {state.sequence} does not advance")
    return state.state()
