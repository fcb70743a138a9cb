"""Dividend computation for the reward agent."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from ..consensus import StakeTable
from ..crypto import Address
from ..ledger import Block, Chain

BLOCKS_PER_DAY = 144


@dataclass(frozen=True)
class RewardPolicy:
    mint_fraction: float = 0.05
    superpeer_fraction: float = 0.25
    opcost_fraction: float = 0.20
    stake_fraction: float = 0.50

    def __post_init__(self):
        fr = self.fractions()
        if any(not 0 <= f <= 1 for f in fr):
            raise ValueError("reward fractions must lie in [0, 1]")
        if sum(fr) != 1:
            raise ValueError("reward fractions must sum to exactly 1")

    def fractions(self) -> tuple[Fraction, ...]:
        # decimal reading, so that 0.1 + 0.2 + 0.2 + 0.5 sums to exactly 1
        return tuple(Fraction(str(f)) for f in (
            self.mint_fraction, self.superpeer_fraction, self.opcost_fraction, self.stake_fraction))


@dataclass
class DividendSet:
    window: tuple[int, int]
    total: int = 0
    mint_shares: dict[Address, int] = field(default_factory=dict)
    dividends: dict[Address, int] = field(default_factory=dict)
    carry_in: int = 0
    carry_out: int = 0

    def paid(self) -> int:
        return sum(self.mint_shares.values()) + sum(self.dividends.values())

    def to_json(self) -> dict:
        return {
            "window": list(self.window),
            "total": self.total,
            "mint_shares": dict(sorted(self.mint_shares.items())),
            "dividends": dict(sorted(self.dividends.items())),
            "carry_in": self.carry_in,
            "carry_out": self.carry_out,
        }


def _credit(book: dict, who: Address, amount: int) -> None:
    if amount:
        book[who] = book.get(who, 0) + amount


def split_block(total: int, policy: RewardPolicy, sealer: Address, super_peers: Sequence[Address],
                full_nodes: Sequence[Address], stakes: StakeTable, out: DividendSet, carry: int = 0) -> int:
    """Split one block's ``total`` into ``out``; returns the stake-pool carry."""
    fm, fs, fo, _ = policy.fractions()
    mint = int(fm * total)
    sp_pool = int(fs * total)
    op_pool = int(fo * total)
    stake_pool = total - mint - sp_pool - op_pool + carry
    _credit(out.mint_shares, sealer, mint)

    leftover = 0
    for pool, group in ((sp_pool, super_peers), (op_pool, full_nodes)):
        if not group:
            leftover += pool
            continue
        each = pool // len(group)
        for a in group:
            _credit(out.dividends, a, each)
        leftover += pool - each * len(group)

    if stakes.total == 0:
        return stake_pool + leftover
    paid = 0
    for a, s in sorted(stakes.entries.items()):
        share = stake_pool * s // stakes.total
        _credit(out.dividends, a, share)
        paid += share
    leftover += stake_pool - paid
    top = min(stakes.entries.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    _credit(out.dividends, top, leftover)
    return 0


def distribute_rewards(
    chain: Chain | Sequence[Block],
    day_window: tuple[int, int],
    stakes: StakeTable | Mapping[Address, int],
    policy: RewardPolicy,
    topology,
    *,
    sealers: Mapping[int, Address] | None = None,
    addresses: Mapping[str, Address] | None = None,
    carry: int = 0,
) -> DividendSet:
    """Dividends for blocks with heights in ``[start, end)``.

    Each block's subsidy plus fees is split four ways: the mint share to the
    block's sealer, an equal split over super peers, an equal split over the
    other full nodes, and a stake-proportional split. Flooring remainders go
    to the largest stakeholder; with no stake at all the stake pool and
    remainders carry over to the next distribution.
    """
    if not isinstance(stakes, StakeTable):
        stakes = StakeTable(stakes)
    blocks = chain.blocks if isinstance(chain, Chain) else chain
    addr = (lambda n: addresses.get(n, n)) if addresses else (lambda n: n)
    sps = [addr(n) for n in topology.super_peers]
    fulls = [addr(n) for n in topology.full_nodes]
    start, end = day_window
    out = DividendSet((start, end), carry_in=carry)
    for b in blocks:
        if not start <= b.height < end or b.height == 0:
            continue
        total = b.reward_total
        out.total += total
        sealer = (sealers or {}).get(b.height, "mint")
        carry = split_block(total, policy, sealer, sps, fulls, stakes, out, carry)
    out.carry_out = carry
    return out
