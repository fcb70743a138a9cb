"""Network-operations agent: performance and integrity indicators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence


def percentile(values: Sequence[float], p: float) -> float | None:
    """Nearest-rank percentile: the smallest value with at least ``p``% at or below it."""
    if not values:
        return None
    if not 0 < p <= 100:
        raise ValueError("p must lie in (0, 100]")
    ordered = sorted(values)
    rank = math.ceil(p / 100 * len(ordered))
    return ordered[rank - 1]


@dataclass
class MetricsSnapshot:
    time: int
    connected_nodes: int
    super_peers: int
    churn_rate: float
    bandwidth_bytes: int
    storage_bytes: int
    ack_latency_p50: float | None
    ack_latency_p90: float | None
    ack_latency_p99: float | None
    outages: int
    detected_attacks: int
    misbehaving: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def netops_report(state) -> MetricsSnapshot:
    """Summarize a running system.

    ``state`` supplies ``now``, ``live_nodes()``, ``super_peers``,
    ``churn_events``, ``bytes_sent``, ``storage_bytes()``, ``ack_latencies``,
    ``outages``, ``attacks`` and ``bans`` (node -> verdict reference).
    """
    live = state.live_nodes()
    lat = list(state.ack_latencies)
    hours = max(state.now / 3_600_000, 1e-9)
    return MetricsSnapshot(
        time=state.now,
        connected_nodes=len(live),
        super_peers=len(state.super_peers),
        churn_rate=state.churn_events / hours,
        bandwidth_bytes=state.bytes_sent,
        storage_bytes=state.storage_bytes(),
        ack_latency_p50=percentile(lat, 50),
        ack_latency_p90=percentile(lat, 90),
        ack_latency_p99=percentile(lat, 99),
        outages=state.outages,
        detected_attacks=state.attacks,
        misbehaving=[{"node": n, "verdict": v} for n, v in sorted(state.bans.items())],
    )
