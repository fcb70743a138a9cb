"""Per-node state held by the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..consensus import Announcement, AttestedLog, BlockVote
from ..crypto import Digest, KeyPair
from ..ledger import AckedTransaction, Block, Chain, Outpoint
from ..tamper_log import Authenticator, LogEntry, TamperLog


@dataclass
class WalletTx:
    tx_id: Digest
    issued: int
    inputs: tuple
    attempt: int = 0
    acked_at: int | None = None
    status: str | None = None


class SimNode:
    """A full node or super peer: replica, justification log, vote memory, wallet."""

    def __init__(self, node_id: str, key: KeyPair, a2m_key: KeyPair, genesis: Block, directory):
        self.id = node_id
        self.key = key
        self.address = key.address
        self.a2m = AttestedLog(a2m_key.address, a2m_key)
        self.log = TamperLog(node_id)
        self.chain = Chain(directory)
        self.chain.append(genesis)
        self.replica = bytearray(genesis.to_bytes())
        self.block_offsets = [0]
        self.pool: dict[Digest, AckedTransaction] = {}
        self.online = True
        self.crashed = False
        # wallet
        self.wallet: dict[Digest, WalletTx] = {}
        self.locked: set[Outpoint] = set()
        self.stake_outpoint: Outpoint | None = None
        # voting
        self.announcements: dict[tuple[int, int], Announcement] = {}
        self.rebuilt: dict[tuple[int, int], Block] = {}
        self.last_ack_seen: dict[str, tuple[int, int, object]] = {}
        self.reported: set = set()
        self.cert_round = -1
        # super-peer duties
        self.votes: dict[tuple[int, int], dict[str, BlockVote]] = {}
        self.known_anns: dict[tuple[int, int], dict[Digest, Announcement]] = {}
        self.commits: list[tuple[int, int, Digest, int]] = []
        self.sealers: dict[int, str] = {}

    # -- log ----------------------------------------------------------------

    def log_event(self, kind, digest: Digest, counterparty: str, local_ts: int, payload=None) -> LogEntry:
        if self.log.entries and local_ts < self.log.entries[-1].local_timestamp:
            local_ts = self.log.entries[-1].local_timestamp
        return self.log.append(kind, digest, counterparty, local_ts, payload)

    def head_auth(self) -> Authenticator:
        return self.log.authenticator(self.key)

    # -- replica -------------------------------------------------------------

    def append_replica(self, block: Block) -> None:
        self.block_offsets.append(len(self.replica))
        self.replica.extend(block.to_bytes())

    def truncate_replica(self) -> None:
        cut = self.block_offsets.pop()
        del self.replica[cut:]

    def resync_replica(self) -> None:
        self.replica = bytearray()
        self.block_offsets = []
        for b in self.chain.blocks:
            self.block_offsets.append(len(self.replica))
            self.replica.extend(b.to_bytes())

    # -- wallet ------------------------------------------------------------------

    def spendable(self) -> list[tuple[Outpoint, int]]:
        out = []
        for op, entry in self.chain.utxo_set.items():
            if entry.address == self.address and op not in self.locked and op != self.stake_outpoint:
                out.append((op, entry.amount))
        out.sort()
        return out


@dataclass
class PollAnswer:
    """A node's reply to an audit poll, replayed through the audit checks."""

    head: Digest
    answers: list
    log_entries: tuple = ()
    log_head: Authenticator | None = None

    def head_hash(self) -> Digest:
        return self.head

    def read_bytes(self, offsets):
        return self.answers

    def log_evidence(self):
        if self.log_head is None:
            return None
        return self.log_entries, self.log_head


@dataclass
class RoundState:
    boundary: int
    sealed: bool = False
    keys: set = field(default_factory=set)
