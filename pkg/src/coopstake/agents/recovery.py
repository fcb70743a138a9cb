"""Recovery planning for proven faults."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

REVERT_BLOCK = "revert-block"
PROMOTE_BACKUP_MINT = "promote-backup-mint"
DISABLE_SUPER_PEER = "disable-super-peer"
REPLACE_SUPER_PEER = "replace-super-peer"
HANDOFF_AGENT = "handoff-agent"

MINT_EQUIVOCATION = "mint-equivocation"
MINT_OMISSION = "mint-omission"
MINT_FORGERY = "mint-forgery"
MINT_CRASH = "mint-crash"
SUPER_PEER_FAULT = "super-peer"
BLOCK_FAULTS = (MINT_EQUIVOCATION, MINT_OMISSION)
MINT_FAULTS = (MINT_EQUIVOCATION, MINT_OMISSION, MINT_FORGERY, MINT_CRASH)


class NoBackupAvailable(Exception):
    pass


@dataclass(frozen=True)
class ProvenFault:
    accused: str
    kind: str
    height: int | None = None
    evidence: str = ""


@dataclass
class RecoveryContext:
    """The parts of system state a recovery plan depends on.

    ``candidates`` lists full nodes in promotion-preference order (best
    fitness first); ``agent_hosts`` maps agent kind to current host.
    """

    mint_host: str | None
    super_peers: Sequence[str]
    agent_hosts: Mapping[str, str]
    head_height: int
    candidates: Sequence[str] = ()
    excluded: frozenset = frozenset()


@dataclass
class RecoveryPlan:
    actions: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        if sum(1 for a in self.actions if a[0] == REVERT_BLOCK) > 1:
            raise ValueError("at most one revert-block per plan")

    def __bool__(self) -> bool:
        return bool(self.actions)

    def to_json(self) -> list:
        return [list(a) for a in self.actions]


def recover(faults: Iterable[ProvenFault], ctx: RecoveryContext) -> RecoveryPlan:
    """Plan for a batch of proven faults.

    A faulty mint host loses the mint to the first live backup super peer; a
    fault in the block at the committed head also reverts that block. Every
    accused super peer is disabled and replaced by the best eligible full
    node, and any agents it hosted move to the replacement.
    """
    actions: list[tuple] = []
    bad = set(ctx.excluded)
    faults = list(faults)
    bad.update(f.accused for f in faults)
    handled: set[str] = set()
    mint_host = ctx.mint_host
    for f in faults:
        if f.accused in handled:
            continue
        handled.add(f.accused)
        if f.kind in MINT_FAULTS and f.accused == mint_host:
            if (f.kind in BLOCK_FAULTS and f.height is not None and f.height == ctx.head_height
                    and not any(a[0] == REVERT_BLOCK for a in actions)):
                actions.append((REVERT_BLOCK, f.height))
            backups = [sp for sp in ctx.super_peers if sp not in bad]
            if not backups:
                raise NoBackupAvailable("no live super peer can take over the mint")
            mint_host = backups[0]
            actions.append((PROMOTE_BACKUP_MINT, mint_host))
        if f.accused in ctx.super_peers:
            actions.append((DISABLE_SUPER_PEER, f.accused))
            spare = [c for c in ctx.candidates if c not in bad and c not in ctx.super_peers]
            new = spare[0] if spare else None
            if new is not None:
                actions.append((REPLACE_SUPER_PEER, f.accused, new))
                bad.add(new)  # not a candidate twice
            for kind, host in sorted(ctx.agent_hosts.items()):
                if host != f.accused or kind == "mint":
                    continue
                target = new or next((sp for sp in ctx.super_peers if sp not in bad), None)
                if target is None:
                    raise NoBackupAvailable(f"no host for the {kind} agent")
                actions.append((HANDOFF_AGENT, kind, target))
    return RecoveryPlan(actions)
