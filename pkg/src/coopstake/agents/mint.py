"""The mint: acknowledges transactions and seals a block every interval."""

from __future__ import annotations

from dataclasses import dataclass

from ..consensus import Announcement, ack_payload, block_payload
from ..crypto import Address, Digest, KeyDirectory, KeyPair, hash_bytes
from ..ledger import (
    ACCEPTED,
    FREE_QUOTA_EXHAUSTED,
    AckedTransaction,
    Block,
    BlockInProgress,
    Chain,
    MintPolicy,
    Transaction,
    apply_free_transaction_rule,
    build_block,
    sort_acked,
    validate_transaction,
)
from ..tamper_log import ActivityKind, Authenticator, BadSignature, TamperLog, entangle

ACCEPTED_STATUS = ACCEPTED


def invalid_status(reason: str) -> str:
    return f"invalid:{reason}"


@dataclass(frozen=True)
class Ack:
    tx_id: Digest
    status: str
    ack_timestamp: int
    mint_authenticator: Authenticator

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED_STATUS


@dataclass(frozen=True)
class Seal:
    block: Block
    announcement: Announcement
    # a second, conflicting block when the mint equivocates
    alt_block: Block | None = None
    alt_announcement: Announcement | None = None


class MintAgent:
    """Mint state machine.

    Everything the mint decides depends on the acknowledged inputs and the
    consensus clock only, never on which super peer hosts it; the host key
    merely signs. ``log`` is the mint's justification log for the current
    epoch and moves with the agent.
    """

    def __init__(self, policy: MintPolicy, reward_address: Address, chain: Chain, epoch: int = 0,
                 log: TamperLog | None = None, directory: KeyDirectory | None = None):
        self.policy = policy
        self.reward_address = reward_address
        self.chain = chain
        self.epoch = epoch
        self.log = log if log is not None else TamperLog(f"@mint/e{epoch}")
        self.directory = directory
        self.start_block = chain.head
        self.pending: dict[Digest, AckedTransaction] = {}
        self.buckets: dict[int, BlockInProgress] = {}
        self.last_ack_ts: int | None = None
        self.receipts: list = []

    # -- acknowledgment ---------------------------------------------------

    def _slot(self, ts: int) -> int:
        """Boundary index at which a transaction acked at ``ts`` falls due."""
        return ts // self.policy.block_interval + 1

    def _stamp(self, local_ts: int) -> int:
        # a new host's clock may lag its predecessor's; the log never goes back
        if self.log.entries:
            return max(local_ts, self.log.entries[-1].local_timestamp)
        return local_ts

    def _spent(self) -> set:
        out = set(self.chain.spent)
        for a in self.pending.values():
            out.update(a.tx.inputs)
        return out

    def ack(self, tx: Transaction, arrival_time: int, key: KeyPair, local_ts: int,
            issuer_auth: Authenticator | None = None, *, forge: bool = False,
            exempt: bool = False) -> Ack:
        """Log, validate and acknowledge ``tx`` at consensus time ``arrival_time``.

        ``exempt`` skips the zero-fee quota (solicited stake and re-acks
        after a recovery). ``forge`` backdates the acknowledgment below the
        previous one, which is how a faulty mint host misbehaves.
        """
        local_ts = self._stamp(local_ts)
        self.log.append(ActivityKind.RECEIVE_TX, tx.id, tx.issuer, local_ts, payload=tx.to_bytes())
        if issuer_auth is not None and self.directory is not None:
            try:
                self.receipts.append(entangle(self.log, issuer_auth, self.directory, local_ts))
            except BadSignature:
                pass
        ts = arrival_time
        if forge and self.last_ack_ts is not None:
            ts = self.last_ack_ts - 1
        status = self._admit(tx, ts, exempt)
        self.log.append(ActivityKind.ACK_TX, hash_bytes(ack_payload(tx.id, ts, status)), tx.issuer, local_ts,
                        payload=ack_payload(tx.id, ts, status))
        auth = self.log.authenticator(key)
        if status == ACCEPTED_STATUS:
            self.pending[tx.id] = AckedTransaction(tx, ts, auth)
            if self.last_ack_ts is None or ts > self.last_ack_ts:
                self.last_ack_ts = ts
        return Ack(tx.id, status, ts, auth)

    def _admit(self, tx: Transaction, ts: int, exempt: bool) -> str:
        if tx.id in self.pending:
            return invalid_status("double-spend")
        res = validate_transaction(tx, self.chain.utxo_set, self.chain.height + 1,
                                   spent=self._spent(), directory=self.directory)
        if not res:
            return invalid_status(res.reason)
        slot = self._slot(ts)
        while True:
            bucket = self.buckets.setdefault(slot, BlockInProgress())
            if bucket.tx_count < self.policy.max_block_txs:
                break
            slot += 1
        if not exempt and apply_free_transaction_rule(tx, bucket, self.policy) == FREE_QUOTA_EXHAUSTED:
            return FREE_QUOTA_EXHAUSTED
        bucket.add(tx)
        return ACCEPTED_STATUS

    # -- sealing ------------------------------------------------------------

    def due(self, boundary: int) -> list[AckedTransaction]:
        ready = sort_acked(a for a in self.pending.values() if a.ack_timestamp < boundary)
        return ready[: self.policy.max_block_txs]

    def seal(self, boundary: int, key: KeyPair, local_ts: int, *, omit: bool = False,
             equivocate: bool = False) -> Seal:
        if boundary % self.policy.block_interval:
            raise ValueError("seals happen only at block-interval multiples")
        due = self.due(boundary)
        prev = self.chain.head
        honest = build_block(due, prev, self.policy, self.reward_address, boundary)
        block = honest
        if omit and due:
            block = build_block(due[1:], prev, self.policy, self.reward_address, boundary)
        local_ts = self._stamp(local_ts)
        payload = block_payload(block.height, boundary, block.prev_hash, block.block_hash)
        self.log.append(ActivityKind.NEW_BLOCK_HASH, hash_bytes(payload), "@network", local_ts, payload=payload)
        self.chain.append(block, check=False)
        for a in block.txs:
            del self.pending[a.tx.id]
        self.buckets = {s: b for s, b in self.buckets.items() if s * self.policy.block_interval > boundary}
        ann = Announcement.for_block(block, self.epoch, key)
        if not equivocate:
            return Seal(block, ann)
        if due:
            alt = build_block(due[1:], prev, self.policy, self.reward_address, boundary)
        else:
            other = hash_bytes(b"alt-reward" + self.reward_address.encode()).hex()[:40]
            alt = build_block((), prev, self.policy, other, boundary)
        return Seal(block, ann, alt, Announcement.for_block(alt, self.epoch, key))

    def adopt(self, block: Block) -> None:
        """Follow the committed chain when it disagrees with what was sealed."""
        if block.height <= self.chain.height and self.chain.blocks[block.height].block_hash == block.block_hash:
            return
        released: list[AckedTransaction] = []
        while self.chain.height >= block.height:
            released.extend(self.chain.revert())
        self.chain.append(block, check=False)
        included = {a.tx.id for a in block.txs}
        for a in released:
            if a.tx.id not in included:
                self.pending[a.tx.id] = a
        for txid in included:
            self.pending.pop(txid, None)

    def abandon(self) -> None:
        """Drop the head block after a round without quorum; voting restarts in a new epoch."""
        if self.chain.height > self.start_block.height:
            for a in self.chain.revert():
                self.pending[a.tx.id] = a
        self.epoch += 1

    # -- handoff ------------------------------------------------------------

    def to_state(self) -> dict:
        return {
            "epoch": self.epoch,
            "head_height": self.chain.height,
            "head_hash": self.chain.head_hash.hex(),
            "start_height": self.start_block.height,
            "start_hash": self.start_block.block_hash.hex(),
            "last_ack_ts": self.last_ack_ts,
            "log_owner": self.log.owner,
            "log_head_index": self.log.head_index,
            "log_head_digest": self.log.head_digest.hex(),
            "pending": [a.to_json() for a in sort_acked(self.pending.values())],
            "buckets": {str(s): [b.tx_count, b.zero_fee_count] for s, b in sorted(self.buckets.items())},
        }

    @classmethod
    def from_state(cls, state: dict, policy: MintPolicy, reward_address: Address, chain: Chain,
                   log: TamperLog, directory: KeyDirectory | None = None) -> "MintAgent":
        """Resume on a new host whose committed ``chain`` must end at the state's head."""
        if chain.head_hash.hex() != state["head_hash"]:
            raise ValueError("host chain does not match the mint's head")
        if log.owner != state["log_owner"] or log.head_index != state["log_head_index"] \
                or log.head_digest.hex() != state["log_head_digest"]:
            raise ValueError("mint log does not match the transferred head")
        m = cls(policy, reward_address, chain, state["epoch"], log, directory)
        m.start_block = chain.blocks[state["start_height"]]
        m.last_ack_ts = state["last_ack_ts"]
        for d in state["pending"]:
            a = AckedTransaction.from_json(d)
            m.pending[a.tx.id] = a
        m.buckets = {int(s): BlockInProgress(c, z) for s, (c, z) in state["buckets"].items()}
        return m


def mint_ack(mint_state: MintAgent, tx: Transaction, arrival_time: int, key: KeyPair,
             local_ts: int | None = None) -> Ack:
    return mint_state.ack(tx, arrival_time, key, arrival_time if local_ts is None else local_ts)


def mint_seal(mint_state: MintAgent, clock: int, key: KeyPair, local_ts: int | None = None) -> Seal | None:
    """Seal when ``clock`` sits exactly on a block boundary, else nothing."""
    if clock <= 0 or clock % mint_state.policy.block_interval:
        return None
    return mint_state.seal(clock, key, clock if local_ts is None else local_ts)
