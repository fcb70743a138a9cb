"""Event queue, virtual clocks, latency model and trace stream."""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import IO, Any, Callable, Iterable

from ..crypto import hash_bytes

MESSAGE_DELIVERY = "message-delivery"
TIMER = "timer"
FAULT_INJECTION = "fault-injection"
AGENT_SCHEDULE = "agent-schedule"


def rng_stream(root_seed: int, label: str) -> random.Random:
    """Independent RNG stream for ``label``; adding labels never shifts others."""
    digest = hash_bytes(f"{root_seed}\x00{label}".encode())
    return random.Random(int.from_bytes(digest[:16], "big"))


def derived_int(root_seed: int, label: str, modulus: int) -> int:
    if modulus <= 1:
        return 0
    digest = hash_bytes(f"{root_seed}\x00{label}".encode())
    return int.from_bytes(digest[:8], "big") % modulus


@dataclass(order=False)
class Event:
    time: int
    seq: int
    kind: str
    payload: Any = field(default=None, repr=False)


class EventQueue:
    def __init__(self):
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0

    def push(self, time: int, kind: str, payload=None) -> Event:
        ev = Event(time, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, (time, ev.seq, ev))
        return ev

    def pop(self) -> Event:
        return heapq.heappop(self._heap)[2]

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class LatencyModel:
    """Per-edge base latency plus bounded deterministic jitter.

    ``spread_ms`` adds a fixed per-edge offset in ``[0, spread_ms]`` so that
    latency-ranked choices are not all ties. Jitter for a message is derived
    from the root seed, the edge and the message's identity, so unrelated
    traffic never perturbs it.
    """

    hop_ms: int = 50
    jitter_max_ms: int = 10
    spread_ms: int = 0
    processing_ms: int = 0
    seed: int = 0

    def base(self, a: str, b: str) -> int:
        if not self.spread_ms:
            return self.hop_ms
        lo, hi = sorted((a, b))
        return self.hop_ms + derived_int(self.seed, f"edge\x00{lo}\x00{hi}", self.spread_ms + 1)

    def jitter(self, src: str, dst: str, key: str) -> int:
        return derived_int(self.seed, f"jitter\x00{src}\x00{dst}\x00{key}", self.jitter_max_ms + 1)

    def delay(self, src: str, dst: str, key: str) -> int:
        return self.base(src, dst) + self.jitter(src, dst, key) + self.processing_ms

    def worst_case(self) -> int:
        return self.hop_ms + self.spread_ms + self.jitter_max_ms + self.processing_ms


def clock_view(skews: dict[str, int], node: str, global_time: int) -> int:
    """Node-local timestamp: global virtual time plus the node's fixed skew."""
    return global_time + skews.get(node, 0)


class TraceWriter:
    """Append-only JSON-lines trace with a running SHA-256 digest."""

    def __init__(self, stream: IO[str] | None = None, keep: bool = False):
        self.stream = stream
        self.keep = keep
        self.records: list[dict] = []
        self._hash = hashlib.sha256()
        self._seq = 0
        self.count = 0

    def write(self, record: dict) -> None:
        record["seq"] = self._seq
        self._seq += 1
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        self.count += 1
        if self.stream is not None:
            self.stream.write(line + "\n")
        if self.keep:
            self.records.append(record)

    def digest(self) -> str:
        return self._hash.hexdigest()


def read_trace(path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
