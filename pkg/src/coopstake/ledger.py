"""Simplified UTXO ledger on a single non-forking chain.

Blocks are built deterministically from the mint's acknowledged-transaction
stream, so every full node can rebuild the mint's block and compare hashes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .canonical import encode
from .crypto import Address, Digest, KeyDirectory, KeyPair, Signature, hash_bytes, sign
from .tamper_log import Authenticator

COIN = 100_000_000
INITIAL_SUBSIDY = 50 * COIN
HALVING_INTERVAL = 210_000
COINBASE_MATURITY = 100
ZERO_HASH: Digest = bytes(32)

PAYMENT = "payment"
COINBASE = "coinbase"
STAKE_TO_SELF = "stake-to-self"
TX_KINDS = (PAYMENT, COINBASE, STAKE_TO_SELF)

# invalid reasons
MISSING_INPUT = "missing-input"
DOUBLE_SPEND = "double-spend"
VALUE_OVERFLOW = "value-overflow"
IMMATURE_COINBASE = "immature-coinbase"
BAD_SIGNATURE = "bad-signature"
FEE_MISMATCH = "fee-mismatch"
MALFORMED = "malformed"

# free-transaction rule outcomes
ACCEPTED = "accepted"
FREE_QUOTA_EXHAUSTED = "free-quota-exhausted"
BLOCK_FULL = "block-full"


class LedgerError(Exception):
    pass


class BadLinkage(LedgerError):
    pass


class InvalidBlockTx(LedgerError):
    pass


class EmptyChain(LedgerError):
    pass


class CapacityExceeded(LedgerError):
    pass


class Outpoint(NamedTuple):
    txid: Digest
    index: int


class TxOutput(NamedTuple):
    address: Address
    amount: int


class UtxoEntry(NamedTuple):
    address: Address
    amount: int
    height: int
    coinbase: bool


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[Outpoint, ...]
    outputs: tuple[TxOutput, ...]
    fee: int
    issuer: Address
    kind: str = PAYMENT
    nonce: int = 0
    signature: Signature | None = field(default=None, compare=False)
    id: Digest = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(Outpoint(*i) for i in self.inputs))
        object.__setattr__(self, "outputs", tuple(TxOutput(*o) for o in self.outputs))
        object.__setattr__(self, "_body", self._encode_body())
        object.__setattr__(self, "id", hash_bytes(self._body))

    def body_bytes(self) -> bytes:
        return self._body

    def _encode_body(self) -> bytes:
        return encode(
            "tx",
            self.kind,
            self.issuer,
            self.fee,
            self.nonce,
            [(i.txid, i.index) for i in self.inputs],
            [(o.address, o.amount) for o in self.outputs],
        )

    def to_bytes(self) -> bytes:
        cached = self.__dict__.get("_bytes")
        if cached is None:
            sig = (self.signature.value, self.signature.signer) if self.signature else None
            cached = encode(self._body, sig)
            object.__setattr__(self, "_bytes", cached)
        return cached

    @property
    def output_total(self) -> int:
        return sum(o.amount for o in self.outputs)

    def to_json(self) -> dict:
        return {
            "id": self.id.hex(),
            "kind": self.kind,
            "issuer": self.issuer,
            "fee": self.fee,
            "nonce": self.nonce,
            "inputs": [[i.txid.hex(), i.index] for i in self.inputs],
            "outputs": [[o.address, o.amount] for o in self.outputs],
            "signature": self.signature.to_json() if self.signature else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Transaction":
        tx = cls(
            inputs=tuple(Outpoint(bytes.fromhex(t), i) for t, i in d["inputs"]),
            outputs=tuple(TxOutput(a, v) for a, v in d["outputs"]),
            fee=d["fee"],
            issuer=d["issuer"],
            kind=d["kind"],
            nonce=d["nonce"],
            signature=Signature.from_json(d["signature"]) if d.get("signature") else None,
        )
        if tx.id.hex() != d["id"]:
            raise ValueError("transaction id does not match body")
        return tx


def tx_signing_bytes(txid: Digest) -> bytes:
    return encode("tx-sig", txid)


def make_transaction(
    key: KeyPair,
    inputs: Iterable[Outpoint],
    outputs: Iterable[TxOutput],
    fee: int,
    kind: str = PAYMENT,
    nonce: int = 0,
) -> Transaction:
    unsigned = Transaction(tuple(inputs), tuple(outputs), fee, key.address, kind, nonce)
    return Transaction(
        unsigned.inputs, unsigned.outputs, fee, key.address, kind, nonce,
        signature=sign(key, tx_signing_bytes(unsigned.id)),
    )


def make_coinbase(reward_address: Address, amount: int, height: int) -> Transaction:
    return Transaction((), (TxOutput(reward_address, amount),), 0, reward_address, COINBASE, height)


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.valid


VALID = ValidationResult(True)


def validate_transaction(
    tx: Transaction,
    utxo_set: Mapping[Outpoint, UtxoEntry],
    current_height: int,
    *,
    spent: Mapping[Outpoint, object] | set | frozenset = frozenset(),
    directory: KeyDirectory | None = None,
) -> ValidationResult:
    """Check ``tx`` for inclusion in the block at ``current_height``.

    ``spent`` holds outpoints already consumed (on chain or by pending
    transactions); spending one of them is a double spend rather than a
    missing input. Signatures are only checked when a directory is given.
    """
    if tx.kind not in (PAYMENT, STAKE_TO_SELF) or not tx.inputs or not tx.outputs:
        return ValidationResult(False, MALFORMED)
    if tx.fee < 0 or any(o.amount <= 0 for o in tx.outputs):
        return ValidationResult(False, MALFORMED)
    if len(set(tx.inputs)) != len(tx.inputs):
        return ValidationResult(False, DOUBLE_SPEND)
    total_in = 0
    for op in tx.inputs:
        if op in spent:
            return ValidationResult(False, DOUBLE_SPEND)
        entry = utxo_set.get(op)
        if entry is None:
            return ValidationResult(False, MISSING_INPUT)
        if entry.address != tx.issuer:
            return ValidationResult(False, BAD_SIGNATURE)
        if entry.coinbase and current_height - entry.height < COINBASE_MATURITY:
            return ValidationResult(False, IMMATURE_COINBASE)
        total_in += entry.amount
    total_out = tx.output_total
    if total_out > total_in:
        return ValidationResult(False, VALUE_OVERFLOW)
    if total_in - total_out != tx.fee:
        return ValidationResult(False, FEE_MISMATCH)
    if tx.kind == STAKE_TO_SELF and (tx.fee or any(o.address != tx.issuer for o in tx.outputs)):
        return ValidationResult(False, MALFORMED)
    if directory is not None:
        if tx.signature is None or tx.signature.signer != tx.issuer:
            return ValidationResult(False, BAD_SIGNATURE)
        if not directory.verify(tx_signing_bytes(tx.id), tx.signature):
            return ValidationResult(False, BAD_SIGNATURE)
    return VALID


@dataclass(frozen=True)
class MintPolicy:
    block_interval: int = 600_000
    max_block_txs: int = 1000
    free_tx_fraction: float = 0.05

    def __post_init__(self):
        if self.block_interval <= 0:
            raise ValueError("block_interval must be positive")
        if self.max_block_txs <= 0:
            raise ValueError("max_block_txs must be positive")
        if not 0.0 <= self.free_tx_fraction <= 1.0:
            raise ValueError("free_tx_fraction must lie in [0, 1]")

    @property
    def free_quota(self) -> int:
        return math.floor(self.free_tx_fraction * self.max_block_txs)


@dataclass
class BlockInProgress:
    tx_count: int = 0
    zero_fee_count: int = 0

    def add(self, tx: Transaction) -> None:
        self.tx_count += 1
        if tx.fee == 0 and tx.kind == PAYMENT:
            self.zero_fee_count += 1


def apply_free_transaction_rule(tx: Transaction, block_in_progress: BlockInProgress, policy: MintPolicy) -> str:
    """Admission of an already-validated transaction into the current block.

    Solicited stake-to-self transactions are never charged against the
    zero-fee quota.
    """
    if block_in_progress.tx_count >= policy.max_block_txs:
        return BLOCK_FULL
    if tx.fee == 0 and tx.kind == PAYMENT and block_in_progress.zero_fee_count >= policy.free_quota:
        return FREE_QUOTA_EXHAUSTED
    return ACCEPTED


@dataclass(frozen=True)
class AckedTransaction:
    tx: Transaction
    ack_timestamp: int
    mint_authenticator: Authenticator | None = field(default=None, compare=False)

    @property
    def sort_key(self) -> tuple[int, bytes]:
        return (self.ack_timestamp, self.tx.id)

    def to_json(self) -> dict:
        return {
            "tx": self.tx.to_json(),
            "ack_timestamp": self.ack_timestamp,
            "mint_authenticator": self.mint_authenticator.to_json() if self.mint_authenticator else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AckedTransaction":
        auth = d.get("mint_authenticator")
        return cls(Transaction.from_json(d["tx"]), d["ack_timestamp"],
                   Authenticator.from_json(auth) if auth else None)


def block_subsidy(height: int) -> int:
    if height < 0:
        raise ValueError("height must be non-negative")
    halvings = height // HALVING_INTERVAL
    if halvings >= 64:
        return 0
    return INITIAL_SUBSIDY >> halvings


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: Digest
    timestamp: int
    coinbase: Transaction
    txs: tuple[AckedTransaction, ...]
    block_hash: Digest = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "txs", tuple(self.txs))
        object.__setattr__(self, "block_hash", hash_bytes(self.header_bytes()))

    def header_bytes(self) -> bytes:
        return encode(
            "block",
            self.height,
            self.prev_hash,
            self.timestamp,
            self.coinbase.id,
            [(a.tx.id, a.ack_timestamp) for a in self.txs],
        )

    def to_bytes(self) -> bytes:
        """Full replica serialization: header plus transaction bodies."""
        cached = self.__dict__.get("_bytes")
        if cached is None:
            cached = encode(self.header_bytes(), self.coinbase.to_bytes(), [a.tx.to_bytes() for a in self.txs])
            object.__setattr__(self, "_bytes", cached)
        return cached

    @property
    def fees(self) -> int:
        return sum(a.tx.fee for a in self.txs)

    @property
    def reward_total(self) -> int:
        return self.coinbase.output_total

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "block_hash": self.block_hash.hex(),
            "prev_hash": self.prev_hash.hex(),
            "timestamp": self.timestamp,
            "subsidy": block_subsidy(self.height),
            "fees": self.fees,
            "coinbase": self.coinbase.to_json(),
            "txs": [a.to_json() for a in self.txs],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Block":
        b = cls(
            d["height"],
            bytes.fromhex(d["prev_hash"]),
            d["timestamp"],
            Transaction.from_json(d["coinbase"]),
            tuple(AckedTransaction.from_json(a) for a in d["txs"]),
        )
        if b.block_hash.hex() != d["block_hash"]:
            raise ValueError(f"block {d['height']}: hash does not match contents")
        return b


def build_genesis(
    reward_address: Address,
    allocations: Mapping[Address, int] | Iterable[tuple[Address, int]] | None = None,
) -> Block:
    """Height-0 block whose coinbase funds the initial allocations.

    ``allocations`` is a mapping (one output per address, address order) or a
    sequence of ``(address, amount)`` pairs kept in the given order, which
    allows several outputs to one address. Whatever the allocations leave of
    ``block_subsidy(0)`` goes to the reward address. Genesis outputs are
    spendable immediately.
    """
    if allocations is None:
        pairs = []
    elif isinstance(allocations, Mapping):
        pairs = sorted(allocations.items())
    else:
        pairs = [tuple(p) for p in allocations]
    total = block_subsidy(0)
    alloc_sum = sum(v for _, v in pairs)
    if alloc_sum > total or any(v <= 0 for _, v in pairs):
        raise ValueError("genesis allocations must be positive and fit in the first subsidy")
    outputs = [TxOutput(a, v) for a, v in pairs]
    if total - alloc_sum:
        outputs.append(TxOutput(reward_address, total - alloc_sum))
    coinbase = Transaction((), tuple(outputs), 0, reward_address, COINBASE, 0)
    return Block(0, ZERO_HASH, 0, coinbase, ())


def sort_acked(acked: Iterable[AckedTransaction]) -> list[AckedTransaction]:
    return sorted(acked, key=lambda a: a.sort_key)


def build_block(
    acked: Sequence[AckedTransaction],
    prev: Block,
    policy: MintPolicy,
    reward_address: Address,
    timestamp: int | None = None,
) -> Block:
    """Deterministic successor of ``prev`` from the acknowledged stream.

    ``timestamp`` defaults to ``height * block_interval``; after a recovery the
    replacement block is sealed at a later boundary, so callers pass it.
    """
    if len(acked) > policy.max_block_txs:
        raise CapacityExceeded(f"{len(acked)} > {policy.max_block_txs}")
    keys = [a.sort_key for a in acked]
    if keys != sorted(keys):
        raise ValueError("acked transactions must be sorted by (ack_timestamp, tx id)")
    height = prev.height + 1
    if timestamp is None:
        timestamp = height * policy.block_interval
    if timestamp % policy.block_interval:
        raise ValueError("block timestamp must be a multiple of the block interval")
    fees = sum(a.tx.fee for a in acked)
    coinbase = make_coinbase(reward_address, block_subsidy(height) + fees, height)
    return Block(height, prev.block_hash, timestamp, coinbase, tuple(acked))


class Chain:
    """Linear chain plus the UTXO set folded from it.

    Mutating methods work in place; :func:`append_block` and
    :func:`revert_last_block` return modified copies instead.
    """

    def __init__(self, directory: KeyDirectory | None = None):
        self.blocks: list[Block] = []
        self.utxo_set: dict[Outpoint, UtxoEntry] = {}
        self.spent: dict[Outpoint, Digest] = {}
        self.directory = directory
        self._undo: list[tuple[list[tuple[Outpoint, UtxoEntry]], list[Outpoint]]] = []

    @classmethod
    def from_blocks(cls, blocks: Iterable[Block], directory: KeyDirectory | None = None) -> "Chain":
        c = cls(directory)
        for b in blocks:
            c.append(b)
        return c

    def copy(self) -> "Chain":
        c = Chain(self.directory)
        c.blocks = list(self.blocks)
        c.utxo_set = dict(self.utxo_set)
        c.spent = dict(self.spent)
        c._undo = list(self._undo)
        return c

    @property
    def head(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def head_hash(self) -> Digest:
        return self.blocks[-1].block_hash if self.blocks else ZERO_HASH

    def __len__(self) -> int:
        return len(self.blocks)

    def append(self, block: Block, check: bool = True) -> None:
        if block.height != len(self.blocks) or block.prev_hash != self.head_hash:
            raise BadLinkage(
                f"block {block.height} does not extend head {self.height} ({self.head_hash.hex()[:12]})")
        removed: list[tuple[Outpoint, UtxoEntry]] = []
        added: list[Outpoint] = []
        genesis = block.height == 0

        def add_outputs(tx: Transaction, coinbase: bool) -> None:
            for i, out in enumerate(tx.outputs):
                op = Outpoint(tx.id, i)
                self.utxo_set[op] = UtxoEntry(out.address, out.amount, block.height, coinbase)
                added.append(op)

        try:
            if check and not genesis:
                expected = block_subsidy(block.height) + block.fees
                if block.coinbase.kind != COINBASE or block.coinbase.output_total != expected:
                    raise InvalidBlockTx(f"coinbase pays {block.coinbase.output_total}, expected {expected}")
            for a in block.txs:
                tx = a.tx
                if check:
                    res = validate_transaction(tx, self.utxo_set, block.height, spent=self.spent,
                                               directory=self.directory)
                    if not res:
                        raise InvalidBlockTx(f"{tx.id.hex()[:12]}: {res.reason}")
                for op in tx.inputs:
                    removed.append((op, self.utxo_set.pop(op)))
                    self.spent[op] = tx.id
                add_outputs(tx, False)
            add_outputs(block.coinbase, not genesis)
        except Exception:
            self._rollback(removed, added)
            raise
        self.blocks.append(block)
        self._undo.append((removed, added))

    def _rollback(self, removed, added) -> None:
        for op in added:
            self.utxo_set.pop(op, None)
        for op, entry in reversed(removed):
            self.utxo_set[op] = entry
            self.spent.pop(op, None)

    def revert(self) -> list[AckedTransaction]:
        """Undo the head block; returns its non-coinbase transactions."""
        if not self.blocks:
            raise EmptyChain("nothing to revert")
        block = self.blocks.pop()
        removed, added = self._undo.pop()
        self._rollback(removed, added)
        return list(block.txs)

    def utxo_total(self) -> int:
        return sum(e.amount for e in self.utxo_set.values())

    def chain_bytes(self) -> bytes:
        return b"".join(b.to_bytes() for b in self.blocks)

    def export_jsonl(self) -> str:
        import json

        return "".join(json.dumps(b.to_json(), sort_keys=True) + "\n" for b in self.blocks)


def append_block(chain: Chain, block: Block) -> Chain:
    new = chain.copy()
    new.append(block)
    return new


def revert_last_block(chain: Chain) -> tuple[Chain, list[AckedTransaction]]:
    new = chain.copy()
    released = new.revert()
    return new, released


def stake_snapshot(chain: Chain | Sequence[Block], solicitation_window: tuple[int, int]) -> dict[Address, int]:
    """Stake per issuer from stake-to-self transactions in blocks sealed within
    ``[start, end)``; anything older is stale."""
    start, end = solicitation_window
    blocks = chain.blocks if isinstance(chain, Chain) else chain
    stakes: dict[Address, int] = {}
    for b in blocks:
        if not start <= b.timestamp < end:
            continue
        for a in b.txs:
            if a.tx.kind == STAKE_TO_SELF:
                stakes[a.tx.issuer] = stakes.get(a.tx.issuer, 0) + a.tx.output_total
    return stakes
