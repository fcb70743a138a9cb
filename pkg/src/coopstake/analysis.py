"""Read-only analysis of a run directory: transaction tracing and metric reports.

Everything here is recomputed from the files a run leaves behind, chiefly
``trace.jsonl``, so it doubles as an independent check on the simulator's
own counters.
"""

from __future__ import annotations

import bisect
import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .agents.netops import percentile
from .simnet.engine import read_trace

TX_KINDS = ("tx-submit", "tx", "tx-mint", "acked", "ack")
MINT = "@mint"


class NotFound(Exception):
    pass


@dataclass
class Hop:
    time: int
    node: str
    action: str

    def to_json(self) -> dict:
        return {"time": self.time, "node": self.node, "action": self.action}


@dataclass
class TraceQueryResult:
    tx_id: str
    hops: list[Hop]
    status: str
    height: int | None = None
    reason: str | None = None
    round_trip_hops: int | None = None
    ack_latency: int | None = None

    def to_json(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "status": self.status,
            "height": self.height,
            "reason": self.reason,
            "round_trip_hops": self.round_trip_hops,
            "ack_latency": self.ack_latency,
            "hops": [h.to_json() for h in self.hops],
        }

    def describe(self) -> str:
        if self.status == "confirmed":
            return f"confirmed at height {self.height}"
        if self.status == "rejected":
            return f"rejected({self.reason})"
        return "pending"


@dataclass
class _TxIndex:
    """Per-transaction slice of the trace."""

    issue: dict | None = None
    sends: dict = field(default_factory=lambda: defaultdict(list))  # (node, peer, kind) -> [t]
    recvs: dict = field(default_factory=lambda: defaultdict(list))  # node -> [(t, kind, peer)]
    mint_acks: list = field(default_factory=list)
    wallet_acks: list = field(default_factory=list)
    confirms: list = field(default_factory=list)


def _index(records, wanted: str | None = None) -> dict[str, _TxIndex]:
    out: dict[str, _TxIndex] = defaultdict(_TxIndex)
    for r in records:
        refs = r.get("refs") or ()
        if not refs:
            continue
        kind, d = r["kind"], r["dir"]
        for ref in refs:
            if wanted is not None and ref != wanted:
                continue
            if d == "internal":
                if kind == "issue":
                    out[ref].issue = r
                elif kind == "ack" and r["node"] == MINT:
                    out[ref].mint_acks.append(r)
                elif kind == "confirm":
                    out[ref].confirms.append(r)
                continue
            if kind not in TX_KINDS:
                continue
            ix = out[ref]
            if d == "send":
                ix.sends[(r["node"], r["peer"], kind)].append(r["t"])
            elif d == "recv":
                ix.recvs[r["node"]].append((r["t"], kind, r["peer"]))
                if kind == "ack" and r["node"].endswith(".w"):
                    ix.wallet_acks.append(r)
    return out


def _walk_back(ix: _TxIndex, node: str, t: int, kind: str, peer: str, stop) -> list[Hop] | None:
    """Follow a received message back through the senders until ``stop(peer)``."""
    hops = [Hop(t, node, f"recv {kind} from {peer}")]
    for _ in range(64):
        if stop(peer):
            return list(reversed(hops))
        sends = ix.sends.get((peer, node, kind), [])
        i = bisect.bisect_right(sends, t)
        if i == 0:
            return None
        sent = sends[i - 1]
        prior = [r for r in ix.recvs.get(peer, ()) if r[0] <= sent]
        if not prior:
            return None
        t, kind, src = prior[-1]
        node, peer = peer, src
        hops.append(Hop(t, node, f"recv {kind} from {peer}"))
    return None


def _query(tx_id: str, ix: _TxIndex) -> TraceQueryResult:
    if ix.issue is None:
        raise NotFound(tx_id)
    issuer = ix.issue["node"]
    hops = [Hop(ix.issue["t"], issuer, "issue")]
    status, reason, height = "pending", None, None
    rt = latency = None
    if ix.wallet_acks:
        back = ix.wallet_acks[0]
        ret = _walk_back(ix, back["node"], back["t"], "ack", back["peer"], lambda p: p == MINT)
        mint_rec = None
        if ret is not None:
            first = ret[0]
            cands = [m for m in ix.mint_acks if m["t"] <= first.time]
            mint_rec = cands[-1] if cands else None
        fwd = None
        if mint_rec is not None:
            into = [r for r in ix.recvs.get(MINT, ()) if r[0] <= mint_rec["t"] and r[1] == "tx-mint"]
            if into:
                t, kind, peer = into[-1]
                fwd = _walk_back(ix, MINT, t, kind, peer, lambda p: p == issuer)
        if ret is not None and fwd is not None:
            hops += fwd
            hops.append(Hop(mint_rec["t"], MINT, f"ack {mint_rec['info']['status']}"))
            hops += ret
            rt = len(fwd) + len(ret)
        latency = back["t"] - ix.issue["t"]
    if ix.mint_acks:
        last = ix.mint_acks[-1]["info"]["status"]
        if last != "accepted":
            status, reason = "rejected", last.split(":", 1)[-1] if last.startswith("invalid:") else last
    if ix.confirms:
        c = ix.confirms[-1]
        status, height, reason = "confirmed", c["info"]["height"], None
        hops.append(Hop(c["t"], c["node"], f"included at height {height}"))
    hops.sort(key=lambda h: h.time)
    return TraceQueryResult(tx_id, hops, status, height, reason, rt, latency)


def trace_transaction(out_dir: str, tx_id: str) -> TraceQueryResult:
    """Hop chronology of one transaction, from issuance through ack and inclusion."""
    tx_id = tx_id.lower()
    path = os.path.join(out_dir, "trace.jsonl")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ix = _index(read_trace(path), tx_id)
    if tx_id not in ix:
        raise NotFound(tx_id)
    return _query(tx_id, ix[tx_id])


def trace_all(out_dir: str) -> dict[str, TraceQueryResult]:
    """``trace_transaction`` for every issued transaction, reading the trace once."""
    path = os.path.join(out_dir, "trace.jsonl")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ix = _index(read_trace(path))
    return {tx: _query(tx, entry) for tx, entry in sorted(ix.items()) if entry.issue is not None}


def _load(out_dir: str, name: str, default):
    path = os.path.join(out_dir, name)
    if not os.path.exists(path):
        return default
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_report(out_dir: str) -> dict:
    """Block count, ack latencies, dividends, findings and hop histogram, folded from the run files."""
    path = os.path.join(out_dir, "trace.jsonl")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    sealed = 0
    records = []
    for r in read_trace(path):
        if r["dir"] == "internal" and r["kind"] == "seal" and r["node"] == MINT:
            sealed += 1
        if r.get("refs"):
            records.append(r)
    ix = _index(records)
    latencies, hops, statuses = [], Counter(), Counter()
    for tx_id in sorted(ix):
        entry = ix[tx_id]
        if entry.issue is None:
            continue
        q = _query(tx_id, entry)
        statuses[q.status] += 1
        if q.ack_latency is not None:
            latencies.append(q.ack_latency)
        if q.round_trip_hops is not None:
            hops[q.round_trip_hops] += 1
    chain_height = 0
    chain_path = os.path.join(out_dir, "chain.jsonl")
    if os.path.exists(chain_path):
        with open(chain_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    chain_height = max(chain_height, json.loads(line)["height"])
    dividends = _load(out_dir, "dividends.json", [])
    faults = _load(out_dir, "faults.json", {})
    return {
        "blocks_sealed": sealed,
        "committed_height": chain_height,
        "transactions": dict(sorted(statuses.items())),
        "ack_latency_ms": {
            "count": len(latencies),
            "p50": percentile(latencies, 50),
            "p90": percentile(latencies, 90),
            "p99": percentile(latencies, 99),
            "max": max(latencies) if latencies else None,
        },
        "hop_histogram": {str(k): v for k, v in sorted(hops.items())},
        "dividends": {
            "windows": len(dividends),
            "total": sum(d["total"] for d in dividends),
            "paid": sum(sum(d["mint_shares"].values()) + sum(d["dividends"].values()) for d in dividends),
            "carry_out": dividends[-1]["carry_out"] if dividends else 0,
        },
        "findings": Counter(f["kind"] for f in faults.get("findings", [])),
        "bans": sorted(faults.get("bans", {})),
        "verdicts": len(faults.get("verdicts", [])),
    }


def format_report(rep: dict) -> str:
    lat = rep["ack_latency_ms"]
    div = rep["dividends"]
    lines = [
        f"blocks sealed      {rep['blocks_sealed']}",
        f"committed height   {rep['committed_height']}",
        "transactions       " + ", ".join(f"{k} {v}" for k, v in rep["transactions"].items()),
        f"ack latency (ms)   p50 {lat['p50']}  p90 {lat['p90']}  p99 {lat['p99']}  max {lat['max']}"
        f"  (n={lat['count']})",
        "round-trip hops    " + ", ".join(f"{k}: {v}" for k, v in rep["hop_histogram"].items()),
        f"dividends          {div['windows']} windows, {div['total']} sat distributed, carry {div['carry_out']}",
        "findings           " + (", ".join(f"{k} {v}" for k, v in sorted(rep["findings"].items())) or "none"),
        "bans               " + (", ".join(rep["bans"]) or "none"),
    ]
    return "\n".join(lines)
