"""Super-peer overlay: fitness scoring, super-peer selection, joins, reconfiguration."""

from __future__ import annotations

import math
import random
import warnings
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

NodeId = str
FITNESS_COMPONENTS = (
    "uptime", "bandwidth_in", "bandwidth_out", "latency", "redundancy", "cpu", "chain_present",
)


class NoCapacity(Exception):
    pass


class EmptyRegistry(Exception):
    pass


@dataclass(frozen=True)
class FitnessMetrics:
    uptime_fraction: float
    bandwidth_in: float
    bandwidth_out: float
    latency_ms: float
    redundancy_degree: int
    cpu_score: float
    chain_present: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and non-negative")
        if self.latency_ms <= 0:
            raise ValueError("latency_ms must be positive")
        if self.uptime_fraction > 1 or self.cpu_score > 1:
            raise ValueError("uptime_fraction and cpu_score lie in [0, 1]")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class FitnessNorms:
    """Reference scales: a metric equal to these scores 1 on that component."""

    bandwidth_in: float = 1000.0
    bandwidth_out: float = 1000.0
    min_latency_ms: float = 1.0
    redundancy_degree: float = 4.0

    @classmethod
    def from_population(cls, metrics: Iterable[FitnessMetrics]) -> "FitnessNorms":
        ms = list(metrics)
        if not ms:
            return cls()
        return cls(
            bandwidth_in=max(m.bandwidth_in for m in ms) or 1.0,
            bandwidth_out=max(m.bandwidth_out for m in ms) or 1.0,
            min_latency_ms=min(m.latency_ms for m in ms),
            redundancy_degree=max(m.redundancy_degree for m in ms) or 1.0,
        )


UNIFORM_WEIGHTS = tuple([1.0 / 7] * 7)


def fitness_components(m: FitnessMetrics, norms: FitnessNorms) -> tuple[float, ...]:
    return (
        m.uptime_fraction,
        m.bandwidth_in / norms.bandwidth_in,
        m.bandwidth_out / norms.bandwidth_out,
        norms.min_latency_ms / m.latency_ms,
        m.redundancy_degree / norms.redundancy_degree,
        m.cpu_score,
        1.0 if m.chain_present else 0.0,
    )


def score_fitness(
    m: FitnessMetrics,
    weights: Sequence[float] = UNIFORM_WEIGHTS,
    norms: FitnessNorms | None = None,
) -> float:
    """Weighted sum of normalized components; latency enters as ``min/latency``."""
    if len(weights) != 7 or any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("weights must be 7 non-negative numbers summing to 1")
    comps = fitness_components(m, norms or FitnessNorms())
    return math.fsum(w * c for w, c in zip(weights, comps))


@dataclass(frozen=True)
class OverlayConfig:
    super_peer_count: int = 100
    max_connection_fraction: float = 0.10
    reconfigure_period: int = 7 * 24 * 3_600_000
    outer_rings: int = 0

    def __post_init__(self):
        if self.super_peer_count < 3:
            raise ValueError("super_peer_count must be at least 3")
        if not 0 < self.max_connection_fraction <= 1:
            raise ValueError("max_connection_fraction must lie in (0, 1]")
        if self.reconfigure_period <= 0:
            raise ValueError("reconfigure_period must be positive")
        if self.outer_rings < 0:
            raise ValueError("outer_rings must be non-negative")

    def capacity(self, full_node_count: int) -> int:
        return math.floor(self.max_connection_fraction * full_node_count)


def select_super_peers(candidates: Iterable[tuple[NodeId, float]], cfg: OverlayConfig) -> list[NodeId]:
    """Top ``N`` by score, ties to the lower node id. Returned in id order."""
    ranked = sorted(candidates, key=lambda c: (-c[1], c[0]))
    if len(ranked) < cfg.super_peer_count:
        warnings.warn(
            f"only {len(ranked)} candidates for {cfg.super_peer_count} super-peer slots",
            stacklevel=2,
        )
    return sorted(nid for nid, _ in ranked[: cfg.super_peer_count])


@dataclass(frozen=True)
class ConnectionPlan:
    node: NodeId
    primary: NodeId
    backups: tuple[NodeId, NodeId]

    @property
    def super_peers(self) -> tuple[NodeId, NodeId, NodeId]:
        return (self.primary, *self.backups)


@dataclass
class Topology:
    super_peers: list[NodeId] = field(default_factory=list)
    plans: dict[NodeId, ConnectionPlan] = field(default_factory=dict)
    capacity: int = 0

    @property
    def ring_edges(self) -> list[tuple[NodeId, NodeId]]:
        """Backbone links. Super peers are directly connected pairwise, which
        contains the ring ``sp[i] -- sp[i+1]``."""
        sps = self.super_peers
        return [(a, b) for i, a in enumerate(sps) for b in sps[i + 1:]]

    @property
    def full_nodes(self) -> list[NodeId]:
        return sorted(self.plans)

    def load(self) -> dict[NodeId, int]:
        counts = {sp: 0 for sp in self.super_peers}
        for p in self.plans.values():
            for sp in p.super_peers:
                counts[sp] = counts.get(sp, 0) + 1
        return counts

    def attached(self, sp: NodeId, primary_only: bool = True) -> list[NodeId]:
        if primary_only:
            return sorted(n for n, p in self.plans.items() if p.primary == sp)
        return sorted(n for n, p in self.plans.items() if sp in p.super_peers)

    def violations(self) -> list[str]:
        out = []
        sps = set(self.super_peers)
        if len(sps) < 3:
            out.append("fewer than 3 super peers")
        for n, p in self.plans.items():
            if n in sps:
                out.append(f"{n} is both super peer and full node")
            if len(set(p.super_peers)) != 3 or not set(p.super_peers) <= sps:
                out.append(f"{n} lacks 1 primary + 2 distinct backup super peers")
        for sp, c in self.load().items():
            if c > self.capacity:
                out.append(f"{sp} carries {c} connections > cap {self.capacity}")
        return out

    def copy(self) -> "Topology":
        return Topology(list(self.super_peers), dict(self.plans), self.capacity)

    def to_json(self) -> dict:
        return {
            "super_peers": list(self.super_peers),
            "capacity": self.capacity,
            "connections": {
                n: {"primary": p.primary, "backups": list(p.backups)} for n, p in sorted(self.plans.items())
            },
            "ring_edges": [list(e) for e in self.ring_edges],
        }


def join_network(
    new_node: NodeId,
    bootstrap_view: Sequence[NodeId],
    topology: Topology,
    latency: Callable[[NodeId, NodeId], float],
    rng: random.Random,
    solicit: Callable[[NodeId], Iterable[NodeId]] | None = None,
    solicit_count: int = 10,
) -> ConnectionPlan:
    """Connection plan for ``new_node``: its three lowest-latency super peers
    that still have spare capacity.

    The super-peer set is learned by soliciting up to ``solicit_count`` random
    nodes from ``bootstrap_view``; ``solicit`` answers for one node and defaults
    to the shared topology view.
    """
    if not bootstrap_view:
        raise EmptyRegistry("bootstrap view is empty")
    asked = rng.sample(sorted(bootstrap_view), min(solicit_count, len(bootstrap_view)))
    known: set[NodeId] = set()
    for peer in asked:
        known.update(solicit(peer) if solicit else topology.super_peers)
    known &= set(topology.super_peers)
    load = topology.load()
    current = topology.plans.get(new_node)
    if current:
        for sp in current.super_peers:
            load[sp] -= 1
    eligible = sorted(
        (sp for sp in known if sp != new_node and load.get(sp, 0) < topology.capacity),
        key=lambda sp: (latency(new_node, sp), sp),
    )
    if len(eligible) < 3:
        raise NoCapacity(f"{new_node}: only {len(eligible)} super peers with spare capacity")
    return ConnectionPlan(new_node, eligible[0], (eligible[1], eligible[2]))


def bootstrap_peers(registry: Iterable[NodeId], count: int, rng: random.Random) -> list[NodeId]:
    live = sorted(registry)
    if not live:
        raise EmptyRegistry("no live nodes registered")
    return rng.sample(live, min(count, len(live)))


def select_seed_agent(seed_agents: Iterable[tuple[NodeId, float, int]]) -> NodeId:
    """Minimize ``latency * (1 + load)``; ties go to the lower id."""
    agents = list(seed_agents)
    if not agents:
        raise ValueError("no seed agents")
    return min(agents, key=lambda s: (s[1] * (1 + s[2]), s[0]))[0]


def build_topology(
    nodes: Iterable[NodeId],
    scores: Mapping[NodeId, float],
    cfg: OverlayConfig,
    latency: Callable[[NodeId, NodeId], float],
    rng: random.Random,
) -> Topology:
    nodes = sorted(nodes)
    sps = select_super_peers(((n, scores[n]) for n in nodes), cfg)
    full = [n for n in nodes if n not in set(sps)]
    topo = Topology(sps, {}, cfg.capacity(len(full)))
    return _rehome(topo, full, latency, rng)


def reconfigure(
    topology: Topology,
    fitness_table: Mapping[NodeId, float],
    cfg: OverlayConfig,
    latency: Callable[[NodeId, NodeId], float],
    rng: random.Random,
) -> Topology:
    """Recompute the super-peer set from ``fitness_table`` (node -> score).

    Demoted super peers become full nodes; full nodes whose connections are
    no longer valid re-join. A table that selects the same set leaves the
    topology untouched.
    """
    live = set(fitness_table)
    new_sps = select_super_peers(fitness_table.items(), cfg)
    sp_set = set(new_sps)
    new = Topology(new_sps, {}, cfg.capacity(len(live - sp_set)))
    orphans = []
    for n in sorted(live - sp_set):
        p = topology.plans.get(n)
        if p is not None and set(p.super_peers) <= sp_set:
            new.plans[n] = p
        else:
            orphans.append(n)
    return _rehome(new, orphans, latency, rng)


def _rehome(topo: Topology, orphans: list[NodeId], latency, rng) -> Topology:
    """Shed connections from over-cap super peers, then re-join all orphans."""
    orphans = list(orphans)
    while True:
        over = [sp for sp, c in sorted(topo.load().items()) if c > topo.capacity]
        if not over:
            break
        victim = topo.attached(over[0], primary_only=False)[-1]
        del topo.plans[victim]
        orphans.append(victim)
    for n in sorted(orphans):
        view = sorted(set(topo.super_peers) | set(topo.plans))
        topo.plans[n] = join_network(n, view, topo, latency, rng)
    return topo


def remove_node(
    topology: Topology,
    node: NodeId,
    replacement: NodeId | None,
    cfg: OverlayConfig,
    latency: Callable[[NodeId, NodeId], float],
    rng: random.Random,
) -> Topology:
    """Drop ``node``; if it was a super peer, promote ``replacement`` in its place
    and re-home every full node that was connected to it."""
    new = topology.copy()
    new.plans.pop(node, None)
    orphans = []
    if node in new.super_peers:
        new.super_peers.remove(node)
        if replacement is not None:
            new.plans.pop(replacement, None)
            new.super_peers = sorted(new.super_peers + [replacement])
        for n, p in list(new.plans.items()):
            if node in p.super_peers:
                orphans.append(n)
                del new.plans[n]
    new.capacity = cfg.capacity(len(new.plans) + len(orphans))
    return _rehome(new, orphans, latency, rng)
