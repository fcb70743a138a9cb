"""Scenario execution: message flow, agents, voting, faults and end-of-run checks."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Any

from ..agents import configuration
from ..agents.audit import (
    HEAD_HASH_MISMATCH,
    LOG_TAMPER,
    MISSING_BYTES,
    UNRESPONSIVE,
    AuditFinding,
    choose_offsets,
    evaluate_poll,
)
from ..agents.mint import ACCEPTED_STATUS, MintAgent
from ..agents.netops import MetricsSnapshot, netops_report
from ..agents.recovery import (
    DISABLE_SUPER_PEER,
    HANDOFF_AGENT,
    MINT_CRASH,
    MINT_EQUIVOCATION,
    MINT_FORGERY,
    MINT_OMISSION,
    PROMOTE_BACKUP_MINT,
    REPLACE_SUPER_PEER,
    REVERT_BLOCK,
    SUPER_PEER_FAULT,
    BLOCK_FAULTS,
    NoBackupAvailable,
    ProvenFault,
    RecoveryContext,
    recover,
)
from ..agents.reward import BLOCKS_PER_DAY, DividendSet, distribute_rewards
from ..agents.state import (
    AUDIT_PRIMARY,
    AUDIT_SECONDARY,
    CONFIGURATION,
    MINT,
    NETOPS,
    PROVISIONING,
    RECOVERY,
    REWARD,
    BadHandoffSignature,
    handoff,
    receive_handoff,
    serialize_state,
)
from ..consensus import (
    MISBEHAVIOR_PROVEN,
    BlockVote,
    MintReplay,
    StakeTable,
    Verdict,
    _decode_block,
    ban_node,
    ban_proposal_id,
    commit_tally,
    equivocation_proof,
    replay_attest,
)
from ..crypto import KeyDirectory, hash_bytes, keygen
from ..ledger import (
    PAYMENT,
    STAKE_TO_SELF,
    LedgerError,
    Outpoint,
    TxOutput,
    block_subsidy,
    build_block,
    build_genesis,
    make_transaction,
    sort_acked,
)
from ..overlay import (
    FitnessMetrics,
    NoCapacity,
    build_topology,
    join_network,
    remove_node,
    score_fitness,
)
from ..scenario import ScenarioConfig
from ..tamper_log import ActivityKind, BadSignature, entangle, verify_log
from .engine import (
    AGENT_SCHEDULE,
    FAULT_INJECTION,
    MESSAGE_DELIVERY,
    TIMER,
    EventQueue,
    LatencyModel,
    TraceWriter,
    clock_view,
    rng_stream,
)
from .node import PollAnswer, SimNode, WalletTx

ENDPOINTS = {
    MINT: "@mint",
    CONFIGURATION: "@configuration",
    REWARD: "@reward",
    AUDIT_PRIMARY: "@audit",
    AUDIT_SECONDARY: "@audit2",
    RECOVERY: "@recovery",
    NETOPS: "@netops",
    PROVISIONING: "@provisioning",
}
ENDPOINT_KIND = {v: k for k, v in ENDPOINTS.items()}
BYZANTINE_MODES = ("equivocate-block", "omit-acked-tx", "forge-ack-timestamp", "tamper-log-entry")
DAY_MS = 24 * 3_600_000


class TargetMissing(Exception):
    pass


@dataclass
class Message:
    kind: str
    src: str
    dst: str
    body: Any
    refs: tuple
    route: tuple
    ident: str
    sent: int


@dataclass
class RunResult:
    config: ScenarioConfig
    trace_digest: str
    trace_records: int
    violations: list[tuple[str, str]]
    sim: "Simulation" = field(repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations


def _hex(d: bytes) -> str:
    return d.hex()


class Simulation:
    """One deterministic run of a scenario.

    Every decision is a function of the scenario and its seed: RNG streams
    are derived per purpose, iteration is always over sorted keys, and
    message jitter depends on the message's identity only.
    """

    def __init__(self, cfg: ScenarioConfig, trace_stream: IO[str] | None = None, keep_trace: bool = False):
        self.cfg = cfg
        self.now = 0
        self.end = cfg.duration_ms
        ag = cfg.agents
        self.vp = ag.vote_phase_ms
        self.interval = cfg.mint_policy.block_interval
        lat = cfg.latency
        self.latency = LatencyModel(lat.hop_ms, lat.jitter_max_ms, lat.spread_ms, lat.processing_ms, cfg.seed)
        self.worst = self.latency.worst_case()
        self.drain = 2 * self.vp + 40 * self.worst
        self.queue = EventQueue()
        self.trace = TraceWriter(trace_stream, keep_trace)
        self.directory = KeyDirectory(cfg.signature_scheme)
        self.rings = cfg.overlay.outer_rings

        # identities
        self.nodes: dict[str, SimNode] = {}
        self.node_of_addr: dict[str, str] = {}
        self.address: dict[str, str] = {}
        self.a2m_owner: dict[str, str] = {}
        keys = {}
        for n in cfg.nodes:
            k = keygen(hash_bytes(f"node\x00{cfg.seed}\x00{n}".encode()), cfg.signature_scheme)
            a = keygen(hash_bytes(f"a2m\x00{cfg.seed}\x00{n}".encode()), cfg.signature_scheme)
            self.directory.register(k)
            self.directory.register(a)
            keys[n] = (k, a)
            self.address[n] = k.address
            self.node_of_addr[k.address] = n
            self.a2m_owner[k.address] = a.address
        self.reward_address = keygen(hash_bytes(f"reward\x00{cfg.seed}".encode()), cfg.signature_scheme).address

        # genesis: spendable balance and a separate stake output per node
        allocs, where = [], {}
        for n in cfg.nodes:
            if cfg.genesis_balance:
                allocs.append((self.address[n], cfg.genesis_balance))
            if cfg.stake_of(n):
                where[n] = len(allocs)
                allocs.append((self.address[n], cfg.stake_of(n)))
        self.genesis = build_genesis(self.reward_address, allocs)
        for n in cfg.nodes:
            node = SimNode(n, keys[n][0], keys[n][1], self.genesis, self.directory)
            if n in where:
                node.stake_outpoint = Outpoint(self.genesis.coinbase.id, where[n])
            node.online = n not in cfg.late_joiners
            self.nodes[n] = node
        self.stakes = StakeTable({self.address[n]: cfg.stake_of(n) for n in cfg.nodes})

        # overlay
        frng = rng_stream(cfg.seed, "fitness")
        self.scores = {}
        for n in cfg.nodes:
            m = FitnessMetrics(
                uptime_fraction=frng.uniform(0.9, 1.0),
                bandwidth_in=frng.uniform(100, 1000),
                bandwidth_out=frng.uniform(100, 1000),
                latency_ms=frng.uniform(5, 100),
                redundancy_degree=frng.randint(1, 4),
                cpu_score=frng.uniform(0.3, 1.0),
            )
            self.scores[n] = score_fitness(m) + (10.0 if n in cfg.super_peers else 0.0)
        self.overlay_rng = rng_stream(cfg.seed, "overlay")
        initial = [n for n in cfg.nodes if self.nodes[n].online]
        self.topology = build_topology(initial, self.scores, cfg.overlay, self._lat, self.overlay_rng)
        self.topology_snapshots = [(0, self.topology.to_json())]

        # agents
        sps = list(self.topology.super_peers)
        hosts = dict(ag.initial_hosts)
        mint_host = hosts.get(MINT, sps[0])
        others = [sp for sp in sps if sp != mint_host] or sps
        kinds = [CONFIGURATION, REWARD, AUDIT_PRIMARY, RECOVERY, NETOPS, PROVISIONING, AUDIT_SECONDARY]
        self.agent_hosts = {MINT: mint_host}
        for i, kind in enumerate(kinds):
            self.agent_hosts[kind] = hosts.get(kind, others[i % len(others)])
        self.agent_seq = {k: 0 for k in self.agent_hosts}
        self.agent_rng = {k: rng_stream(cfg.seed, f"agent:{k}") for k in self.agent_hosts}
        self.transit: dict[str, list] = {}
        self.mint: MintAgent | None = MintAgent(
            cfg.mint_policy, self.reward_address, self.nodes[mint_host].chain.copy(), 0,
            directory=self.directory)
        self.mint_logs = [self.mint.log]
        self.mint_starts = {self.mint.log.owner: self.genesis}
        self.next_epoch = 1

        # bookkeeping
        self.link_last: dict[tuple[str, str], int] = {}
        self.partitions: list[tuple[frozenset, int, int]] = []
        self.banned: set[str] = set()
        self.disabled: set[str] = set()
        self.host_faults: dict[str, set] = {}
        self.byzantine: set[str] = set(cfg.faulty_nodes)
        self.affected: set[str] = set()
        self.block_store: dict[bytes, Any] = {self.genesis.block_hash: self.genesis}
        self.announced_by: dict[str, set] = {}
        self.collusion: dict[tuple[int, int], bytes] = {}
        self.seals: list[dict] = []
        self.rebuild_checks: list[tuple[str, int, int, bytes, bytes]] = []
        self.tx_registry: dict[bytes, Any] = {}
        self.receipts: list = []
        self.ack_latencies: list[int] = []
        self.ack_records: list[dict] = []
        self.bytes_sent = 0
        self.churn_events = 0
        self.outages = 0
        self.attacks = 0
        self.bans: dict[str, str] = {}
        self.findings: list[AuditFinding] = []
        self.finding_times: list[int] = []
        self.finding_ctx: list[tuple[str | None, int]] = []
        self.committed_hashes: set[bytes] = {self.genesis.block_hash}
        self.verdicts: list[dict] = []
        self.recoveries: list[dict] = []
        self.fault_log: list[dict] = []
        self.reports: list[dict] = []
        self.handled_accused: set[str] = set()
        self.recovery_queue: list[tuple[ProvenFault, Verdict | None]] = []
        self.recovery_scheduled = False
        self.pending_probes: dict[str, dict] = {}
        self.log_request: dict | None = None
        self.dividends: list[DividendSet] = []
        self.reward_start = 1
        self.reward_carry = 0
        self.metrics: list[MetricsSnapshot] = []
        self.wallet_rng = {n: rng_stream(cfg.seed, f"workload:{n}") for n in cfg.nodes}
        self.audit_rng = rng_stream(cfg.seed, "audit")
        self.schedule_rng = rng_stream(cfg.seed, "audit-schedule")
        self.nonce = 0
        self.last_round = 0
        self.round_has_ann: dict[str, int] = {}
        self.invalid_blocks: list[dict] = []
        self._schedule()

    # -- helpers ---------------------------------------------------------------

    def _lat(self, a: str, b: str) -> float:
        return self.latency.base(a, b)

    def host_of(self, ep: str) -> str | None:
        if ep.startswith("@"):
            return self.agent_hosts.get(ENDPOINT_KIND.get(ep, ""))
        if ep.endswith(".w"):
            return ep[:-2]
        if "~r" in ep:
            return ep.split("~", 1)[0]
        return ep

    def alive(self, n: str | None) -> bool:
        if n is None or n not in self.nodes:
            return False
        node = self.nodes[n]
        return node.online and not node.crashed and n not in self.banned

    def local(self, n: str) -> int:
        return clock_view(self.cfg.clock_skews, n, self.now)

    def is_sp(self, n: str) -> bool:
        return n in self.topology.super_peers

    def live_sps(self) -> list[str]:
        return [sp for sp in self.topology.super_peers if self.alive(sp)]

    def attached(self, sp: str) -> list[str]:
        return [n for n in self.topology.attached(sp) if self.nodes[n].online]

    def cut(self, a: str | None, b: str | None) -> bool:
        for nodes, start, stop in self.partitions:
            if start <= self.now < stop and (a in nodes) != (b in nodes):
                return True
        return False

    def up_path(self, n: str, sp: str) -> list[str]:
        return [f"{sp}~r{k}" for k in range(self.rings, 0, -1)] + [sp]

    def down_path(self, sp: str, n: str) -> list[str]:
        return [f"{sp}~r{k}" for k in range(1, self.rings + 1)] + [n]

    def wallet_path(self, via: str, issuer: str) -> list[str]:
        if via == issuer:
            return [issuer, f"{issuer}.w"]
        plan = self.topology.plans.get(issuer)
        if plan is not None and plan.primary == via:
            return [via] + self.down_path(via, issuer) + [f"{issuer}.w"]
        return [via, issuer, f"{issuer}.w"]

    def head_of(self, ep: str) -> str | None:
        if ep in self.nodes:
            return _hex(self.nodes[ep].log.head_digest)[:16]
        if ep == "@mint" and self.mint is not None:
            return _hex(self.mint.log.head_digest)[:16]
        return None

    def record(self, ep: str, direction: str, kind: str, peer: str | None = None, refs=(), info=None) -> None:
        rec = {"t": self.now, "node": ep, "dir": direction, "kind": kind, "peer": peer,
               "refs": list(refs), "head": self.head_of(ep)}
        if info is not None:
            rec["info"] = info
        self.trace.write(rec)

    def send(self, src: str, dst: str, kind: str, body=None, refs=(), ident: str | None = None,
             route=()) -> None:
        if not self.alive(self.host_of(src)):
            return
        ident = ident or f"{kind}|{'|'.join(refs)}"
        arrival = self.now + self.latency.delay(src, dst, ident)
        link = (src, dst)
        arrival = max(arrival, self.link_last.get(link, 0))
        self.link_last[link] = arrival
        msg = Message(kind, src, dst, body, tuple(refs), tuple(route), ident, self.now)
        self.queue.push(arrival, MESSAGE_DELIVERY, msg)
        self.bytes_sent += 200 + 300 * len(refs)
        self.record(src, "send", kind, dst, refs)

    def send_path(self, src: str, path: list[str], kind: str, body=None, refs=(), ident=None) -> None:
        self.send(src, path[0], kind, body, refs, ident, tuple(path[1:]))

    def timer(self, t: int, name: str, *args) -> None:
        self.queue.push(t, TIMER, (name, args))

    # -- scheduling --------------------------------------------------------------

    def _schedule(self) -> None:
        cfg, ag = self.cfg, self.cfg.agents
        for k in range(1, self.end // self.interval + 1):
            self.timer(k * self.interval, "seal", k * self.interval)
        for n in cfg.nodes:
            if n in cfg.late_joiners:
                self.timer(cfg.late_joiners[n], "join", n)
                continue
            self.timer(0, "stake", n)
            self._next_issue(n, 0)
        for f in cfg.faults:
            self.queue.push(f.at, FAULT_INJECTION, f)
        if ag.handoffs:
            cycle = ag.mint_tenure_blocks * self.interval
            t = cycle
            while t + self.interval // 2 <= self.end:
                self.queue.push(t + self.interval // 2, AGENT_SCHEDULE, MINT)
                self.queue.push(t + self.interval // 2, AGENT_SCHEDULE, CONFIGURATION)
                t += cycle
            for kind, period in ((NETOPS, ag.netops_period_ms), (PROVISIONING, ag.provisioning_period_ms)):
                t = period + self.interval // 2
                while t <= self.end:
                    self.queue.push(t, AGENT_SCHEDULE, kind)
                    t += period
        d = 0
        while d * DAY_MS <= self.end:
            self.timer(d * DAY_MS, "audit-day", d)
            d += 1
        t = ag.netops_period_ms
        while t <= self.end:
            self.timer(t, "metrics")
            t += ag.netops_period_ms
        t = ag.stake_period_ms
        while t <= self.end:
            for n in cfg.nodes:
                self.timer(t, "stake", n)
            t += ag.stake_period_ms

    def _next_issue(self, n: str, after: int) -> None:
        rate = self.cfg.workload.tx_per_node_per_hour
        if rate <= 0:
            return
        gap = self.wallet_rng[n].expovariate(rate / 3_600_000)
        t = after + max(1, math.ceil(gap))
        if t <= self.end:
            self.timer(t, "issue", n)

    # -- main loop ------------------------------------------------------------------

    def run(self) -> RunResult:
        limit = self.end + self.drain
        while self.queue and self.queue.peek_time() <= limit:
            ev = self.queue.pop()
            self.now = ev.time
            if ev.kind == MESSAGE_DELIVERY:
                self._deliver(ev.payload)
            elif ev.kind == TIMER:
                name, args = ev.payload
                getattr(self, "_t_" + name.replace("-", "_"))(*args)
            elif ev.kind == FAULT_INJECTION:
                try:
                    self.inject_fault(ev.payload)
                except TargetMissing as exc:
                    self.fault_log.append({**ev.payload.to_json(), "applied": False, "reason": str(exc)})
            elif ev.kind == AGENT_SCHEDULE:
                self._agent_handoff(ev.payload)
        self.now = max(self.now, self.end)
        self._final_flush()
        self.metrics.append(netops_report(self))
        violations = self.check_invariants()
        return RunResult(self.cfg, self.trace.digest(), self.trace.count, violations, self)

    def _deliver(self, msg: Message, arrival: int | None = None) -> None:
        host = self.host_of(msg.dst)
        src_host = self.host_of(msg.src)
        if not self.alive(host) or self.cut(src_host, host):
            self.record(msg.dst, "drop", msg.kind, msg.src, msg.refs)
            return
        kind = ENDPOINT_KIND.get(msg.dst)
        if kind is not None and kind in self.transit:
            self.transit[kind].append((msg, self.now))
            return
        self.record(msg.dst, "recv", msg.kind, msg.src, msg.refs)
        if msg.route:
            self.send(msg.dst, msg.route[0], msg.kind, msg.body, msg.refs, msg.ident, msg.route[1:])
            return
        getattr(self, "_h_" + msg.kind.replace("-", "_"))(msg, self.now if arrival is None else arrival)

    # -- wallets ---------------------------------------------------------------------

    def _t_issue(self, n: str) -> None:
        node = self.nodes[n]
        self._next_issue(n, self.now)
        if not self.alive(n):
            return
        w = self.cfg.workload
        rng = self.wallet_rng[n]
        fee = 0 if rng.random() < w.zero_fee_fraction else w.fee
        coins = [(op, v) for op, v in node.spendable() if v >= w.min_amount + fee]
        others = [m for m in self.cfg.nodes if m != n]
        if not coins or not others:
            return
        op, value = coins[rng.randrange(len(coins))]
        amount = rng.randint(w.min_amount, min(w.max_amount, value - fee))
        to = self.address[rng.choice(others)]
        outs = [TxOutput(to, amount)]
        if value - fee - amount:
            outs.append(TxOutput(node.address, value - fee - amount))
        self.nonce += 1
        tx = make_transaction(node.key, [op], outs, fee, PAYMENT, self.nonce)
        self._submit(node, tx)

    def _t_stake(self, n: str) -> None:
        node = self.nodes[n]
        op = node.stake_outpoint
        if not self.alive(n) or op is None:
            return
        entry = node.chain.utxo_set.get(op)
        if entry is None or op in node.locked:
            return
        self.nonce += 1
        tx = make_transaction(node.key, [op], [TxOutput(node.address, entry.amount)], 0, STAKE_TO_SELF,
                              self.nonce)
        node.stake_outpoint = Outpoint(tx.id, 0)
        self._submit(node, tx)

    def _submit(self, node: SimNode, tx) -> None:
        node.locked.update(tx.inputs)
        node.wallet[tx.id] = WalletTx(tx.id, self.now, tuple(tx.inputs))
        self.tx_registry[tx.id] = tx
        node.log_event(ActivityKind.ISSUE_TX, tx.id, "@mint", self.local(node.id), tx.to_bytes())
        ref = _hex(tx.id)
        self.record(f"{node.id}.w", "internal", "issue", None, [ref], {"fee": tx.fee, "kind": tx.kind})
        self.send(f"{node.id}.w", node.id, "tx-submit", {"tx": tx}, [ref])
        self.timer(self.now + self.cfg.workload.ack_timeout_ms, "ack-timeout", node.id, tx.id, 0)

    def _route_tx(self, node: SimNode, tx, attempt: int) -> None:
        ref = _hex(tx.id)
        body = {"tx": tx, "auth": node.head_auth(), "issuer": node.id}
        if self.is_sp(node.id):
            self.send(node.id, "@mint", "tx-mint", {**body, "via": node.id}, [ref], f"tx-mint|{ref}|{attempt}")
            return
        plan = self.topology.plans.get(node.id)
        if plan is None:
            return
        sps = plan.super_peers
        sp = sps[min(attempt, 2)]
        path = self.up_path(node.id, sp) if attempt == 0 else [sp]
        self.send_path(node.id, path, "tx", body, [ref], f"tx|{ref}|{attempt}")

    def _h_tx_submit(self, msg: Message, t: int) -> None:
        self._route_tx(self.nodes[msg.dst], msg.body["tx"], 0)

    def _t_ack_timeout(self, n: str, txid: bytes, attempt: int) -> None:
        node = self.nodes[n]
        w = node.wallet.get(txid)
        if w is None or w.acked_at is not None or not self.alive(n):
            return
        if attempt >= self.cfg.workload.max_retries:
            w.status = "pending"
            return
        w.attempt = attempt + 1
        self._route_tx(node, self.tx_registry[txid], attempt + 1)
        self.timer(self.now + self.cfg.workload.ack_timeout_ms, "ack-timeout", n, txid, attempt + 1)

    def _h_tx(self, msg: Message, t: int) -> None:
        sp = msg.dst
        ref = msg.refs[0]
        self.send(sp, "@mint", "tx-mint", {**msg.body, "via": sp}, msg.refs, f"tx-mint|{ref}|{msg.ident}")

    # -- mint ------------------------------------------------------------------------

    def _mint_key(self):
        return self.nodes[self.agent_hosts[MINT]].key

    def _h_tx_mint(self, msg: Message, t: int) -> None:
        mint = self.mint
        if mint is None:
            self.record("@mint", "internal", "no-mint", None, msg.refs)
            return
        body = msg.body
        tx, via, issuer = body["tx"], body["via"], body["issuer"]
        ref = _hex(tx.id)
        prior = mint.pending.get(tx.id)
        if prior is not None:
            self.send_path("@mint", self.wallet_path(via, issuer), "ack",
                           {"tx_id": tx.id, "status": ACCEPTED_STATUS, "acked": prior}, [ref], f"re-ack|{ref}")
            return
        if any(op in mint.chain.spent and mint.chain.spent[op] == tx.id for op in tx.inputs):
            return
        host = self.agent_hosts[MINT]
        faults = self.host_faults.get(host, set())
        forge = "forge-ack-timestamp" in faults and mint.last_ack_ts is not None
        if forge:
            faults.discard("forge-ack-timestamp")
        ack = mint.ack(tx, t, self._mint_key(), self.local(host), body.get("auth"), forge=forge)
        self.receipts.extend(mint.receipts)
        mint.receipts.clear()
        self.record("@mint", "internal", "ack", None, [ref], {"status": ack.status, "ts": ack.ack_timestamp})
        if ack.accepted:
            acked = mint.pending[tx.id]
            for sp in self.topology.super_peers:
                self.send("@mint", sp, "acked", {"acked": acked}, [ref], f"acked|{ref}|{ack.ack_timestamp}")
        else:
            self.send_path("@mint", self.wallet_path(via, issuer), "ack",
                           {"tx_id": tx.id, "status": ack.status, "acked": None}, [ref], f"reject|{ref}")

    def _t_seal(self, boundary: int) -> None:
        self.last_round = boundary
        self._watchdog()
        self.timer(boundary + self.vp, "bundle", boundary)
        self.timer(boundary + 2 * self.vp, "tally", boundary)
        self.timer(boundary + 2 * self.vp + 8 * self.worst, "cert-check", boundary)
        mint = self.mint
        host = self.agent_hosts.get(MINT)
        if mint is None or MINT in self.transit or not self.alive(host):
            self.record("@mint", "internal", "no-seal", None, [], {"boundary": boundary})
            return
        faults = self.host_faults.get(host, set())
        omit = "omit-acked-tx" in faults
        equivocate = "equivocate-block" in faults
        faults.discard("omit-acked-tx")
        faults.discard("equivocate-block")
        seal = mint.seal(boundary, self._mint_key(), self.local(host), omit=omit, equivocate=equivocate)
        block, ann = seal.block, seal.announcement
        e, h = mint.epoch, block.height
        self.block_store[block.block_hash] = block
        mine = self.announced_by.setdefault(host, set())
        mine.add(block.block_hash)
        bad = block.block_hash
        if seal.alt_block is not None:
            self.block_store[seal.alt_block.block_hash] = seal.alt_block
            mine.add(seal.alt_block.block_hash)
            bad = seal.alt_block.block_hash
        self.collusion[(e, h)] = bad
        self.seals.append({"t": boundary, "epoch": e, "height": h, "hash": _hex(block.block_hash),
                           "host": host, "alt": _hex(seal.alt_block.block_hash) if seal.alt_block else None,
                           "omit": omit})
        self.record("@mint", "internal", "seal", None, [_hex(block.block_hash)], {"height": h, "epoch": e})
        sps = self.topology.super_peers
        half = len(sps) // 2
        for i, sp in enumerate(sps):
            a = seal.alt_announcement if seal.alt_block is not None and i >= half else ann
            self.send("@mint", sp, "announce", {"ann": a}, [_hex(a.block_hash)], f"announce|{e}|{h}")

    # -- super peers and voting ---------------------------------------------------------

    def _h_acked(self, msg: Message, t: int) -> None:
        n = msg.dst
        node = self.nodes[n]
        acked = msg.body["acked"]
        self._on_acked(node, acked)
        ref = msg.refs[0]
        if msg.src == "@mint" and self.is_sp(n):
            for m in self.attached(n):
                self.send_path(n, self.down_path(n, m), "acked", msg.body, msg.refs, msg.ident)
        if acked.tx.issuer == node.address:
            self.send(n, f"{n}.w", "ack", {"tx_id": acked.tx.id, "status": ACCEPTED_STATUS, "acked": acked},
                      [ref], f"ack|{ref}|{acked.ack_timestamp}")

    def _on_acked(self, node: SimNode, acked) -> None:
        txid = acked.tx.id
        if any(node.chain.spent.get(op) == txid for op in acked.tx.inputs):
            return
        node.pool[txid] = acked
        auth = acked.mint_authenticator
        if auth is None:
            return
        last = node.last_ack_seen.get(auth.log_owner)
        if last is not None and auth.head_index > last[0] and acked.ack_timestamp < last[1]:
            key = ("forged", auth.log_owner)
            if key not in node.reported:
                node.reported.add(key)
                self._report(node.id, {"type": "forged-ack", "owner": auth.log_owner,
                                       "earlier": last[2], "later": acked})
        if last is None or auth.head_index > last[0]:
            node.last_ack_seen[auth.log_owner] = (auth.head_index, acked.ack_timestamp, acked)

    def _h_ack(self, msg: Message, t: int) -> None:
        n = self.host_of(msg.dst)
        node = self.nodes[n]
        body = msg.body
        w = node.wallet.get(body["tx_id"])
        if w is None or w.acked_at is not None:
            return
        w.acked_at = self.now
        w.status = body["status"]
        latency = self.now - w.issued
        self.ack_latencies.append(latency)
        self.ack_records.append({"tx": _hex(w.tx_id), "latency": latency, "status": w.status,
                                 "attempt": w.attempt})
        if w.status == ACCEPTED_STATUS:
            acked = body["acked"]
            node.log_event(ActivityKind.ACCEPT_TX, w.tx_id, "@mint", self.local(n))
            if acked is not None and acked.mint_authenticator is not None:
                try:
                    e_ts = max(self.local(n), node.log.entries[-1].local_timestamp)
                    self.receipts.append(entangle(node.log, acked.mint_authenticator, self.directory, e_ts))
                except BadSignature:
                    pass
        else:
            node.log_event(ActivityKind.REJECT_TX, w.tx_id, "@mint", self.local(n))
            node.locked.difference_update(w.inputs)
            tx = self.tx_registry[w.tx_id]
            if tx.kind == STAKE_TO_SELF:
                node.stake_outpoint = tx.inputs[0]

    def _h_announce(self, msg: Message, t: int) -> None:
        n = msg.dst
        ann = msg.body["ann"]
        if msg.src == "@mint" and self.is_sp(n):
            self._note_ann(self.nodes[n], ann)
            for m in self.attached(n):
                self.send_path(n, self.down_path(n, m), "announce", msg.body, msg.refs, msg.ident)
        self._vote(self.nodes[n], ann)

    def _note_ann(self, sp: SimNode, ann) -> None:
        key = (ann.epoch, ann.height)
        seen = sp.known_anns.setdefault(key, {})
        if ann.block_hash in seen:
            return
        seen[ann.block_hash] = ann
        self.round_has_ann[sp.id] = ann.timestamp
        if len(seen) > 1 and ("equivocation", key) not in sp.reported:
            sp.reported.add(("equivocation", key))
            a, b = sorted(seen.values(), key=lambda x: x.block_hash)[:2]
            self._report(sp.id, {"type": "equivocation", "a": a, "b": b})

    def _vote(self, node: SimNode, ann) -> None:
        key = (ann.epoch, ann.height)
        if key in node.announcements or not ann.verify(self.directory):
            return
        node.announcements[key] = ann
        if ann.height != node.chain.height + 1 or ann.prev_hash != node.chain.head_hash:
            if ann.height > node.chain.height:
                self._request_sync(node)
            return
        due = sort_acked(a for a in node.pool.values() if a.ack_timestamp < ann.timestamp)
        rebuilt = build_block(due[: self.cfg.mint_policy.max_block_txs], node.chain.head, self.cfg.mint_policy,
                              self.reward_address, ann.timestamp)
        self.block_store.setdefault(rebuilt.block_hash, rebuilt)
        node.rebuilt[key] = rebuilt
        self.rebuild_checks.append((node.id, ann.epoch, ann.height, rebuilt.block_hash, ann.block_hash))
        faulty = node.id in self.byzantine
        choice = self.collusion.get(key, ann.block_hash) if faulty else rebuilt.block_hash
        if not faulty and rebuilt.block_hash != ann.block_hash and ("discrepancy", key) not in node.reported:
            node.reported.add(("discrepancy", key))
            self._report(node.id, {"type": "discrepancy", "ann": ann, "rebuilt": rebuilt.block_hash})
        att = node.a2m.attest(("block", ann.epoch, ann.height), choice)
        vote = BlockVote(node.address, ann.epoch, ann.height, att.value, ann, att)
        node.log_event(ActivityKind.VOTE, att.value, "@consensus", self.local(node.id))
        if self.is_sp(node.id):
            self._collect(node, vote)
            return
        plan = self.topology.plans.get(node.id)
        if plan is not None:
            self.send_path(node.id, self.up_path(node.id, plan.primary), "vote", {"vote": vote},
                           [_hex(att.value)], f"vote|{ann.epoch}|{ann.height}|{node.id}")

    def _collect(self, sp: SimNode, vote: BlockVote) -> None:
        box = sp.votes.setdefault((vote.epoch, vote.height), {})
        box.setdefault(vote.voter, vote)
        if vote.announcement is not None:
            self._note_ann(sp, vote.announcement)

    def _h_vote(self, msg: Message, t: int) -> None:
        self._collect(self.nodes[msg.dst], msg.body["vote"])

    def _current_key(self, sp: SimNode):
        keys = [k for k in sp.votes if k[1] == sp.chain.height + 1]
        return max(keys) if keys else None

    def _t_bundle(self, boundary: int) -> None:
        sps = self.live_sps()
        for sp in sps:
            node = self.nodes[sp]
            key = self._current_key(node)
            if self.round_has_ann.get(sp, -1) < boundary and ("no-ann", boundary) not in node.reported:
                node.reported.add(("no-ann", boundary))
                self._report(sp, {"type": "no-announcement", "boundary": boundary})
            if key is None:
                continue
            votes = [node.votes[key][v] for v in sorted(node.votes[key])]
            for other in self.topology.super_peers:
                if other != sp:
                    self.send(sp, other, "bundle", {"votes": votes}, [], f"bundle|{boundary}")

    def _h_bundle(self, msg: Message, t: int) -> None:
        sp = self.nodes[msg.dst]
        for v in msg.body["votes"]:
            self._collect(sp, v)

    def _t_tally(self, boundary: int) -> None:
        mint_host = self.agent_hosts.get(MINT)
        mint_decided = False
        for sp in self.live_sps():
            node = self.nodes[sp]
            key = self._current_key(node)
            if key is None:
                continue
            e, h = key
            valid = [v for v in (node.votes[key][x] for x in sorted(node.votes[key]))
                     if v.valid(self.directory, self.a2m_owner)]
            weights = commit_tally(valid, self.stakes)
            if not weights:
                continue
            winner, stake = max(weights.items(), key=lambda kv: (kv[1], kv[0]))
            committed = False
            if self.stakes.majority(stake) and winner in self.block_store:
                block = self.block_store[winner]
                ann = next(iter(node.known_anns.get(key, {}).values()), None)
                sealer = ann.signature.signer if ann is not None else None
                committed = self._commit(node, block, e, sealer)
                if committed:
                    cert = {"epoch": e, "height": h, "hash": winner, "block": block, "sealer": sealer,
                            "votes": [v for v in valid if v.block_hash == winner], "boundary": boundary}
                    for m in self.attached(sp):
                        self.send_path(sp, self.down_path(sp, m), "certificate", cert, [_hex(winner)],
                                       f"cert|{e}|{h}")
            if sp == mint_host and self.mint is not None and MINT not in self.transit:
                mint_decided = True
                if committed:
                    self.mint.adopt(self.block_store[winner])
                elif self.mint.chain.height == h and self.mint.epoch == e:
                    self.mint.abandon()
                    self.record("@mint", "internal", "abandon", None, [], {"height": h, "epoch": e})
        if not mint_decided and self.mint is not None and MINT not in self.transit:
            host = self.nodes.get(mint_host)
            if host is not None and self.alive(mint_host) and host.chain.height >= self.mint.chain.height:
                self.mint.adopt(host.chain.head)

    def _commit(self, node: SimNode, block, epoch: int, sealer: str | None) -> bool:
        try:
            node.chain.append(block, check=True)
        except LedgerError as exc:
            self.invalid_blocks.append({"node": node.id, "height": block.height, "reason": str(exc)})
            self.record(node.id, "internal", "reject-block", None, [_hex(block.block_hash)])
            return False
        node.append_replica(block)
        for a in block.txs:
            node.pool.pop(a.tx.id, None)
        node.log_event(ActivityKind.NEW_BLOCK_HASH, block.block_hash, "@consensus", self.local(node.id))
        node.commits.append((epoch, block.height, block.block_hash, self.now))
        if node.id not in self.byzantine:
            self.committed_hashes.add(block.block_hash)
        if sealer is not None:
            node.sealers[block.height] = sealer
        self.record(node.id, "internal", "commit", None, [_hex(block.block_hash)],
                    {"height": block.height, "epoch": epoch})
        for a in block.txs:
            if a.tx.issuer == node.address:
                w = node.wallet.get(a.tx.id)
                if w is not None:
                    node.locked.difference_update(w.inputs)
                    self.record(f"{node.id}.w", "internal", "confirm", None, [_hex(a.tx.id)],
                                {"height": block.height})
        if node.id == self.agent_hosts.get(REWARD):
            self._reward_check(node)
        return True

    def _h_certificate(self, msg: Message, t: int) -> None:
        node = self.nodes[msg.dst]
        cert = msg.body
        node.cert_round = max(node.cert_round, cert["boundary"])
        e, h, winner = cert["epoch"], cert["height"], cert["hash"]
        seen, stake = set(), 0
        for v in cert["votes"]:
            if v.voter in seen or v.block_hash != winner or (v.epoch, v.height) != (e, h):
                continue
            if not v.valid(self.directory, self.a2m_owner):
                continue
            seen.add(v.voter)
            stake += self.stakes.stake(v.voter)
        if not self.stakes.majority(stake):
            return
        block = cert["block"]
        if block.block_hash != winner:
            return
        if h == node.chain.height + 1 and block.prev_hash == node.chain.head_hash:
            self._commit(node, block, e, cert["sealer"])
        elif h > node.chain.height + 1 or (h == node.chain.height + 1):
            self._request_sync(node)

    # -- liveness of super peers, sync ---------------------------------------------------

    def _t_cert_check(self, boundary: int) -> None:
        for n in sorted(self.topology.plans):
            node = self.nodes[n]
            if not self.alive(n) or node.cert_round >= boundary or not node.announcements:
                continue
            if max(node.announcements)[1] < node.chain.height + 1 and self.round_has_ann.get(n, 0) < boundary:
                pass
            plan = self.topology.plans[n]
            key = ("ping", boundary)
            if key in node.reported:
                continue
            node.reported.add(key)
            self.pending_probes[f"ping|{n}|{plan.primary}"] = {"node": n, "sp": plan.primary}
            self.send(n, plan.primary, "ping", {"from": n}, [], f"ping|{boundary}")
            self.timer(self.now + 4 * self.worst + 10, "ping-timeout", n, plan.primary)

    def _h_ping(self, msg: Message, t: int) -> None:
        self.send(msg.dst, msg.src, "pong", {}, [], msg.ident)

    def _h_pong(self, msg: Message, t: int) -> None:
        self.pending_probes.pop(f"ping|{msg.dst}|{msg.src}", None)
        self._request_sync(self.nodes[msg.dst])

    def _t_ping_timeout(self, n: str, sp: str) -> None:
        if self.pending_probes.pop(f"ping|{n}|{sp}", None) is None or not self.alive(n):
            return
        plan = self.topology.plans.get(n)
        if plan is None or plan.primary != sp:
            return
        new = dataclasses.replace(plan, primary=plan.backups[0], backups=(plan.backups[1], plan.primary))
        self.topology.plans[n] = new
        self.record(n, "internal", "failover", new.primary, [])
        self._report(n, {"type": "unresponsive-sp", "sp": sp})
        self._request_sync(self.nodes[n])

    def _sync_source(self, node: SimNode) -> str | None:
        plan = self.topology.plans.get(node.id)
        if plan is not None:
            for sp in plan.super_peers:
                if self.alive(sp):
                    return sp
            return plan.primary
        for sp in self.topology.super_peers:
            if sp != node.id and self.alive(sp):
                return sp
        return None

    def _request_sync(self, node: SimNode) -> None:
        src = self._sync_source(node)
        if src is None:
            return
        have = [(b.height, b.block_hash) for b in node.chain.blocks[-8:]]
        self.send(node.id, src, "sync-req", {"have": have}, [], f"sync|{node.chain.height}")

    def _h_sync_req(self, msg: Message, t: int) -> None:
        sp = self.nodes[msg.dst]
        fork = 0
        for h, hsh in reversed(msg.body["have"]):
            if h <= sp.chain.height and sp.chain.blocks[h].block_hash == hsh:
                fork = h
                break
        meta = {}
        for e, h, hsh, _ in sp.commits:
            if h > fork:
                meta[h] = (e, sp.sealers.get(h))
        body = {"fork": fork, "blocks": sp.chain.blocks[fork + 1:], "meta": meta,
                "pool": [sp.pool[k] for k in sorted(sp.pool)]}
        self.send(sp.id, msg.src, "sync", body, [], f"sync-reply|{fork}|{sp.chain.height}")

    def _unwind(self, node: SimNode) -> None:
        """Drop the head block; its txs go back to the pool and the wallet re-locks its own inputs."""
        for a in node.chain.revert():
            node.pool[a.tx.id] = a
            w = node.wallet.get(a.tx.id)
            if w is not None:
                node.locked.update(w.inputs)
        node.truncate_replica()

    def _h_sync(self, msg: Message, t: int) -> None:
        node = self.nodes[msg.dst]
        body = msg.body
        fork = body["fork"]
        if fork > node.chain.height:
            return
        while node.chain.height > fork:
            self._unwind(node)
        for b in body["blocks"]:
            if b.height == node.chain.height + 1 and b.prev_hash == node.chain.head_hash:
                e, sealer = body["meta"].get(b.height, (-1, None))
                if not self._commit(node, b, e, sealer):
                    break
        for a in body["pool"]:
            if a.tx.id not in node.pool or node.pool[a.tx.id].ack_timestamp < a.ack_timestamp:
                node.pool[a.tx.id] = a
        node.cert_round = max(node.cert_round, self.last_round)

    # -- reports, audit and recovery ----------------------------------------------------

    def _report(self, src: str, report: dict) -> None:
        self.reports.append({"t": self.now, "from": src, "type": report["type"]})
        self.send(src, "@audit", "report", report, [], f"report|{report['type']}|{src}|{self.now}")

    def _h_report(self, msg: Message, t: int) -> None:
        r = msg.body
        kind = r["type"]
        if kind == "equivocation":
            a, b = r["a"], r["b"]
            if equivocation_proof(a, b, self.directory):
                accused = self.node_of_addr.get(a.signature.signer)
                if accused is not None:
                    self._prove(accused, MINT_EQUIVOCATION, a.height, ("announcement", a.height), True)
        elif kind in ("discrepancy", "forged-ack"):
            self._request_mint_log()
        elif kind == "no-announcement":
            self._probe("@mint", MINT_CRASH)
        elif kind == "unresponsive-sp":
            self._probe(r["sp"], SUPER_PEER_FAULT)

    def _request_mint_log(self) -> None:
        if self.mint is None or self.log_request is not None:
            return
        self.log_request = {"owner": self.mint.log.owner, "at": self.now}
        self.send("@audit", "@mint", "log-req", {}, [], f"log-req|{self.now}")
        self.timer(self.now + 6 * self.worst + 10, "log-timeout", self.mint.log.owner)

    def _h_log_req(self, msg: Message, t: int) -> None:
        mint = self.mint
        if mint is None:
            return
        body = {"entries": tuple(mint.log.entries), "payloads": dict(mint.log.payloads),
                "head": mint.log.authenticator(self._mint_key()), "start": mint.start_block,
                "host": self.agent_hosts[MINT]}
        self.send("@mint", "@audit", "log-reply", body, [], f"log-reply|{len(mint.log)}")

    def _t_log_timeout(self, owner: str) -> None:
        if self.log_request is not None and self.log_request["owner"] == owner:
            self.log_request = None
            self._probe("@mint", MINT_CRASH)

    def _h_log_reply(self, msg: Message, t: int) -> None:
        self.log_request = None
        body = msg.body
        entries, head, host = body["entries"], body["head"], body["host"]
        rep = verify_log(entries, head, self.directory)
        if not rep.ok:
            self._prove(host, MINT_OMISSION, None, (head.log_owner, rep.first_bad_index), True)
            return
        machine = MintReplay(self.tx_registry, self.cfg.mint_policy, self.reward_address, body["start"])
        res = replay_attest(entries, body["payloads"], machine)
        if res.matches:
            return
        e = entries[res.index]
        if e.activity_kind == ActivityKind.NEW_BLOCK_HASH.value:
            height = _decode_block(body["payloads"][res.index])[0]
            self._prove(host, MINT_OMISSION, height, (head.log_owner, res.index), True)
        else:
            self._prove(host, MINT_FORGERY, None, (head.log_owner, res.index), True)

    def _probe(self, target: str, kind: str) -> None:
        key = f"probe|{target}"
        if key in self.pending_probes:
            return
        accused = self.host_of(target)
        if accused in self.handled_accused or accused in self.disabled:
            return
        self.pending_probes[key] = {"target": target, "accused": accused, "kind": kind, "sent": self.now}
        self.send("@audit", target, "probe", {}, [], f"probe|{self.now}")
        self.timer(self.now + 6 * self.worst + 10, "probe-timeout", key)

    def _h_probe(self, msg: Message, t: int) -> None:
        self.send(msg.dst, msg.src, "probe-reply", {"target": msg.dst}, [], msg.ident)

    def _h_probe_reply(self, msg: Message, t: int) -> None:
        self.pending_probes.pop(f"probe|{msg.body['target']}", None)

    def _t_probe_timeout(self, key: str) -> None:
        p = self.pending_probes.pop(key, None)
        if p is None or p["accused"] is None:
            return
        auditor = self.agent_hosts.get(AUDIT_PRIMARY)
        if not self.alive(auditor):
            return
        self._add_finding(AuditFinding(p["accused"], UNRESPONSIVE, (p["target"],)), auditor, p["sent"])
        self.outages += 1
        self._prove(p["accused"], p["kind"], None, (p["target"], -1), False)

    def _add_finding(self, f: AuditFinding, auditor: str | None, sent: int) -> None:
        self.findings.append(f)
        self.finding_times.append(self.now)
        self.finding_ctx.append((auditor, sent))

    def _prove(self, accused: str, kind: str, height, evidence: tuple, misbehavior: bool) -> None:
        if accused in self.handled_accused or (not misbehavior and accused in self.disabled):
            return
        if misbehavior:
            self.handled_accused.add(accused)
        verdict = None
        if misbehavior:
            verdict = Verdict(ban_proposal_id(accused), MISBEHAVIOR_PROVEN, evidence, accused)
            self.attacks += 1
        self.verdicts.append({"t": self.now, "accused": accused, "kind": kind, "height": height,
                              "evidence": list(evidence), "misbehavior": misbehavior})
        self.record("@audit", "internal", "verdict", accused, [], {"kind": kind})
        self.send("@audit", "@recovery", "fault",
                  {"fault": ProvenFault(accused, kind, height, str(evidence)), "verdict": verdict},
                  [], f"fault|{accused}")

    def _h_fault(self, msg: Message, t: int) -> None:
        self.recovery_queue.append((msg.body["fault"], msg.body["verdict"]))
        if self.recovery_scheduled:
            return
        self.recovery_scheduled = True
        settle = self.last_round + 2 * self.vp + 8 * self.worst + 20
        self.timer(max(self.now, settle), "recover")

    def _t_recover(self) -> None:
        self.recovery_scheduled = False
        queue, self.recovery_queue = self.recovery_queue, []
        rec_host = self.agent_hosts.get(RECOVERY)
        if not queue or not self.alive(rec_host):
            return
        ref = self.nodes[rec_host]
        faults = []
        for f, verdict in queue:
            if verdict is not None:
                self.banned.add(f.accused)
                self.bans[f.accused] = _hex(verdict.proposal_id)[:16]
            elif f.accused in self.nodes:
                self.disabled.add(f.accused)
            height = f.height
            if f.kind in BLOCK_FAULTS and height is not None:
                head = ref.chain.head
                if head.height != height or head.block_hash not in self.announced_by.get(f.accused, set()):
                    height = None
            faults.append(dataclasses.replace(f, height=height))
            if f.accused not in self.topology.super_peers and f.accused in self.topology.plans:
                if verdict is not None:
                    self.topology = ban_node(self.topology, f.accused, verdict, self.cfg.overlay, self._lat,
                                             self.overlay_rng)
                    self._topology_changed()
        excluded = frozenset(self.banned | self.disabled | {n for n in self.nodes if not self.alive(n)})
        candidates = sorted((n for n in self.topology.plans if n not in excluded),
                            key=lambda n: (-self.scores[n], n))
        ctx = RecoveryContext(
            mint_host=self.agent_hosts.get(MINT),
            super_peers=list(self.topology.super_peers),
            agent_hosts={k: v for k, v in sorted(self.agent_hosts.items())},
            head_height=ref.chain.height,
            candidates=candidates,
            excluded=excluded,
        )
        try:
            plan = recover(faults, ctx)
        except NoBackupAvailable as exc:
            self.recoveries.append({"t": self.now, "error": str(exc)})
            self.record("@recovery", "internal", "recovery-failed", None, [])
            if self.agent_hosts.get(MINT) in excluded:
                self.mint = None
            return
        self.recoveries.append({"t": self.now, "faults": [dataclasses.asdict(f) for f in faults],
                                "plan": plan.to_json()})
        self.record("@recovery", "internal", "recovery", None, [], {"plan": plan.to_json()})
        pending_replace, revert, promote = {}, None, None
        for action in plan.actions:
            op = action[0]
            if op == REVERT_BLOCK:
                revert = ref.chain.head
            elif op == PROMOTE_BACKUP_MINT:
                promote = action[1]
            elif op == DISABLE_SUPER_PEER:
                pending_replace[action[1]] = None
            elif op == REPLACE_SUPER_PEER:
                pending_replace[action[1]] = action[2]
            elif op == HANDOFF_AGENT:
                self.agent_hosts[action[1]] = action[2]
                self.transit.pop(action[1], None)
        # re-home first so the replacement super peer and its new children see the revert
        joined = []
        for old, new in pending_replace.items():
            if old not in self.topology.super_peers:
                continue
            if len(self.topology.super_peers) - (0 if new else 1) < 3:
                continue
            verdict = next((v for f, v in queue if f.accused == old and v is not None), None)
            try:
                if verdict is not None:
                    self.topology = ban_node(self.topology, old, verdict, self.cfg.overlay, self._lat,
                                             self.overlay_rng, new)
                else:
                    self.topology = remove_node(self.topology, old, new, self.cfg.overlay, self._lat,
                                                self.overlay_rng)
            except NoCapacity as exc:
                self.recoveries.append({"t": self.now, "error": f"re-home failed: {exc}"})
                continue
            if new is not None:
                joined.append(new)
            self._topology_changed()
        if revert is not None:
            for sp in self.topology.super_peers:
                self.send("@recovery", sp, "revert", {"height": revert.height, "hash": revert.block_hash},
                          [_hex(revert.block_hash)], f"revert|{revert.height}")
        if promote is not None:
            self.mint = None
            self.transit.pop(MINT, None)
            self.agent_hosts[MINT] = promote
            epoch = self.next_epoch
            self.next_epoch += 1
            self.send("@recovery", promote, "promote", {"epoch": epoch}, [], f"promote|{epoch}")
        for new in joined:
            self._request_sync(self.nodes[new])

    def _topology_changed(self) -> None:
        self.churn_events += 1
        self.topology_snapshots.append((self.now, self.topology.to_json()))

    def _h_revert(self, msg: Message, t: int) -> None:
        n = msg.dst
        if msg.src.startswith("@") and self.is_sp(n):
            for m in self.attached(n):
                self.send_path(n, self.down_path(n, m), "revert", msg.body, msg.refs, msg.ident)
        node = self.nodes[n]
        if node.chain.height == msg.body["height"] and node.chain.head_hash == msg.body["hash"]:
            self._unwind(node)
            node.log_event(ActivityKind.NEW_BLOCK_HASH, node.chain.head_hash, "@recovery", self.local(n))
            self.record(n, "internal", "revert", None, msg.refs, {"height": msg.body["height"]})

    def _h_promote(self, msg: Message, t: int) -> None:
        host = self.nodes[msg.dst]
        if self.agent_hosts.get(MINT) != host.id or self.mint is not None:
            return
        epoch = msg.body["epoch"]
        mint = MintAgent(self.cfg.mint_policy, self.reward_address, host.chain.copy(), epoch,
                         directory=self.directory)
        self.mint = mint
        self.mint_logs.append(mint.log)
        self.mint_starts[mint.log.owner] = mint.start_block
        self.record("@mint", "internal", "promoted", host.id, [], {"epoch": epoch})
        key = host.key
        for a in sort_acked(host.pool.values()):
            ack = mint.ack(a.tx, self.now, key, self.local(host.id), exempt=True)
            ref = _hex(a.tx.id)
            if ack.accepted:
                acked = mint.pending[a.tx.id]
                for sp in self.topology.super_peers:
                    self.send("@mint", sp, "acked", {"acked": acked}, [ref], f"acked|{ref}|{ack.ack_timestamp}")

    # -- audit polls -----------------------------------------------------------------------

    def _t_audit_day(self, day: int) -> None:
        polls = []
        base = day * DAY_MS
        per = self.cfg.agents.audit_polls_per_day
        slots = DAY_MS // self.interval
        for n in self.cfg.nodes:
            for _ in range(per):
                slot = self.schedule_rng.randrange(slots)
                offset = self.schedule_rng.randrange(self.interval // 4, 3 * self.interval // 4)
                t = base + slot * self.interval + offset
                if self.now <= t <= self.end:
                    polls.append((t, n))
        polls.sort()
        for t, n in polls:
            self.timer(t, "poll", n, AUDIT_PRIMARY)
        k = max(1, round(0.10 * len(polls))) if polls else 0
        for i in sorted(self.schedule_rng.sample(range(len(polls)), k)):
            t, n = polls[i]
            self.timer(t + 1, "poll", n, AUDIT_SECONDARY)

    def _t_poll(self, n: str, kind: str) -> None:
        host = self.agent_hosts.get(kind)
        if not self.alive(host) or not self.nodes[n].online or n in self.banned or n == host:
            return
        ref = self.nodes[host]
        if ref.chain.height < 1:
            return
        settled = ref.block_offsets[-1]
        offsets = choose_offsets(self.audit_rng, settled, self.cfg.agents.audit_probe_count)
        ep = ENDPOINTS[kind]
        key = f"poll|{kind}|{n}|{self.now}"
        self.pending_probes[key] = {"node": n, "offsets": offsets, "head": ref.chain.head_hash,
                                    "ref": bytes(ref.replica[:settled]), "kind": kind,
                                    "sent": self.now, "auditor": host}
        self.send(ep, n, "poll", {"offsets": offsets, "key": key}, [], key)
        self.timer(self.now + 6 * self.worst + 10, "poll-timeout", key)

    def _h_poll(self, msg: Message, t: int) -> None:
        node = self.nodes[msg.dst]
        offsets = msg.body["offsets"]
        answers = [node.replica[o] if o < len(node.replica) else None for o in offsets]
        reply = PollAnswer(node.chain.head_hash, answers, tuple(node.log.entries), node.head_auth())
        self.send(node.id, msg.src, "poll-reply", {"key": msg.body["key"], "answer": reply}, [], msg.ident)

    def _h_poll_reply(self, msg: Message, t: int) -> None:
        p = self.pending_probes.pop(msg.body["key"], None)
        if p is None:
            return
        answer = msg.body["answer"]
        found = evaluate_poll(p["node"], answer, p["offsets"], p["head"], p["ref"], self.directory)
        if answer.head in self.committed_hashes:
            # a head some honest node committed is lag or lead, not corruption
            lagging = [f for f in found if f.kind == HEAD_HASH_MISMATCH]
            found = [f for f in found if f.kind != HEAD_HASH_MISMATCH]
            if lagging:
                self.send(msg.dst, p["node"], "resync", {}, [], f"resync|{p['node']}|{self.now}")
        self._handle_findings(found, msg.dst, p["auditor"], p["sent"])

    def _t_poll_timeout(self, key: str) -> None:
        p = self.pending_probes.pop(key, None)
        if p is None:
            return
        self.outages += 1
        self._handle_findings([AuditFinding(p["node"], UNRESPONSIVE)], ENDPOINTS[p["kind"]], p["auditor"],
                              p["sent"])

    def _handle_findings(self, found: list[AuditFinding], ep: str, auditor: str | None, sent: int) -> None:
        for f in found:
            self._add_finding(f, auditor, sent)
            self.record(ep, "internal", "finding", f.node, [], {"kind": f.kind})
            if f.kind in (MISSING_BYTES, HEAD_HASH_MISMATCH):
                self.send(ep, f.node, "resync", {}, [], f"resync|{f.node}|{self.now}")
            elif f.kind == LOG_TAMPER:
                kind = SUPER_PEER_FAULT if self.is_sp(f.node) else "log-tamper"
                self._prove(f.node, kind, None, (f.node, f.detail[0]), True)
            elif f.kind == UNRESPONSIVE and self.is_sp(f.node):
                self._prove(f.node, SUPER_PEER_FAULT, None, (f.node, -1), False)

    def _h_resync(self, msg: Message, t: int) -> None:
        node = self.nodes[msg.dst]
        node.resync_replica()
        self._request_sync(node)

    def _watchdog(self) -> None:
        """Restart agents whose host died from their last checkpoint; the mint is left to recovery."""
        pool = [sp for sp in self.live_sps() if sp not in self.disabled]
        if not pool:
            return
        for kind in sorted(self.agent_hosts):
            host = self.agent_hosts[kind]
            if kind == MINT or self.alive(host):
                continue
            new = configuration.choose_successor(self.agent_rng[CONFIGURATION], pool,
                                                 {self.agent_hosts.get(MINT)} if len(pool) > 1 else ())
            self.agent_hosts[kind] = new
            self.transit.pop(kind, None)
            self.record(ENDPOINTS[kind], "internal", "restored", new, [], {"from": host})

    # -- agent handoffs -------------------------------------------------------------------

    def _agent_payload(self, kind: str) -> dict:
        if kind == REWARD:
            return {"next_start": self.reward_start, "carry": self.reward_carry}
        if kind == CONFIGURATION:
            return {"hosts": dict(sorted(self.agent_hosts.items()))}
        return {"kind": kind, "t": self.now}

    def _agent_handoff(self, kind: str) -> None:
        old = self.agent_hosts.get(kind)
        if kind in self.transit or not self.alive(old):
            return
        if kind == MINT and self.mint is None:
            return
        busy = {self.agent_hosts.get(AUDIT_PRIMARY), self.agent_hosts.get(RECOVERY), old}
        if kind != MINT:
            busy = {old, self.agent_hosts.get(MINT)}
        cfg_host = self.agent_hosts.get(CONFIGURATION)
        rng = self.agent_rng[CONFIGURATION] if kind == MINT else self.agent_rng[kind]
        pool = [sp for sp in self.live_sps() if sp not in self.banned]
        if len(pool) < 2 or not self.alive(cfg_host):
            return
        new = configuration.choose_successor(rng, pool, busy)
        if new == old:
            return
        payload = self.mint.to_state() if kind == MINT else self._agent_payload(kind)
        state = serialize_state(kind, old, self.agent_seq[kind], payload)
        signed = handoff(state, new, self.nodes[old].key)
        self.transit[kind] = []
        self.record(ENDPOINTS[kind], "internal", "handoff", new, [], {"kind": kind, "seq": signed.sequence})
        self.send(old, new, "agent-state", {"state": signed, "from": old}, [], f"handoff|{kind}|{signed.sequence}")

    def _h_agent_state(self, msg: Message, t: int) -> None:
        st = msg.body["state"]
        old = msg.body["from"]
        kind = st.kind
        buffered = self.transit.pop(kind, None)
        if buffered is None:
            return
        host = self.nodes[msg.dst]
        try:
            payload = receive_handoff(st, self.directory, self.address[old], self.agent_seq[kind])
            if kind == MINT:
                mint = MintAgent.from_state(payload, self.cfg.mint_policy, self.reward_address,
                                            host.chain.copy(), self.mint.log, self.directory)
        except (BadHandoffSignature, ValueError) as exc:
            self.record(ENDPOINTS[kind], "internal", "handoff-rejected", host.id, [], {"reason": str(exc)})
            buffered_replay = buffered
        else:
            self.agent_seq[kind] = st.sequence
            self.agent_hosts[kind] = host.id
            if kind == MINT:
                self.mint = mint
            self.record(ENDPOINTS[kind], "internal", "resumed", host.id, [], {"seq": st.sequence})
            buffered_replay = buffered
        for m, arrival in buffered_replay:
            saved = self.now
            self._deliver(m, arrival)
            self.now = saved

    # -- faults, joins, rewards, metrics ---------------------------------------------------------

    def inject_fault(self, spec) -> None:
        target = spec.target
        node_id = target if target in self.nodes else self.agent_hosts.get(target)
        if spec.mode != "partition" and (node_id is None or not self.alive(node_id)):
            raise TargetMissing(f"{target} is not live at {spec.at}")
        entry = {**spec.to_json(), "node": node_id, "applied": True}
        mode = spec.mode
        if mode in BYZANTINE_MODES:
            self.byzantine.add(node_id)
        self.affected.add(node_id)
        if mode == "crash":
            self.nodes[node_id].crashed = True
            self.churn_events += 1
        elif mode in ("equivocate-block", "omit-acked-tx", "forge-ack-timestamp"):
            self.host_faults.setdefault(node_id, set()).add(mode)
        elif mode == "tamper-log-entry":
            log = self.nodes[node_id].log
            if spec.index >= len(log.entries):
                raise TargetMissing(f"{node_id} log has no entry {spec.index}")
            e = log.entries[spec.index]
            log.entries[spec.index] = dataclasses.replace(e, payload_digest=hash_bytes(b"tampered" + e.payload_digest))
        elif mode == "corrupt-replica-byte":
            rep = self.nodes[node_id].replica
            if spec.offset >= len(rep):
                raise TargetMissing(f"{node_id} replica shorter than {spec.offset}")
            rep[spec.offset] ^= 0xFF
        elif mode == "partition":
            self.partitions.append((frozenset(spec.nodes), spec.at, spec.at + spec.duration))
            self.affected.update(spec.nodes)
            entry["node"] = None
        self.fault_log.append(entry)
        self.record(node_id or "@network", "internal", "fault", None, [], {"mode": mode})

    def _t_join(self, n: str) -> None:
        node = self.nodes[n]
        node.online = True
        full = len(self.topology.plans) + 1
        self.topology.capacity = self.cfg.overlay.capacity(full)
        view = sorted(set(self.topology.super_peers) | set(self.topology.plans))
        try:
            plan = join_network(n, view, self.topology, self._lat, self.overlay_rng)
        except NoCapacity:
            node.online = False
            self.record(n, "internal", "join-failed", None, [])
            return
        self.topology.plans[n] = plan
        self._topology_changed()
        self.record(n, "internal", "join", plan.primary, [])
        self._request_sync(node)
        self.timer(self.now + 1, "stake", n)
        self._next_issue(n, self.now)

    def _reward_check(self, node: SimNode) -> None:
        while node.chain.height >= self.reward_start + BLOCKS_PER_DAY:
            self._distribute(node, (self.reward_start, self.reward_start + BLOCKS_PER_DAY))

    def _distribute(self, node: SimNode, window: tuple[int, int]) -> None:
        ds = distribute_rewards(node.chain, window, self.stakes, self.cfg.reward_policy, self.topology,
                                sealers=node.sealers, addresses=self.address, carry=self.reward_carry)
        self.dividends.append(ds)
        self.reward_carry = ds.carry_out
        self.reward_start = window[1]
        self.record("@reward", "internal", "dividends", None, [], {"window": list(window), "total": ds.total})

    def _final_flush(self) -> None:
        host = self.agent_hosts.get(REWARD)
        node = self.nodes.get(host) if host else None
        if node is None or not self.alive(host):
            ref = self.reference_node()
            node = self.nodes[ref] if ref else None
        if node is None:
            return
        if node.chain.height >= self.reward_start:
            self._distribute(node, (self.reward_start, node.chain.height + 1))

    def _t_metrics(self) -> None:
        self.metrics.append(netops_report(self))

    # netops view
    def live_nodes(self) -> list[str]:
        return [n for n in self.cfg.nodes if self.alive(n)]

    @property
    def super_peers(self) -> list[str]:
        return self.topology.super_peers

    def storage_bytes(self) -> int:
        return sum(len(self.nodes[n].replica) for n in self.live_nodes())

    # -- end of run --------------------------------------------------------------------------

    def honest_nodes(self) -> list[str]:
        return [n for n in self.cfg.nodes
                if n not in self.byzantine and n not in self.banned and self.nodes[n].online]

    def reference_node(self) -> str | None:
        honest = [n for n in self.honest_nodes() if self.alive(n)]
        if not honest:
            return None
        sps = [n for n in honest if self.is_sp(n)]
        return max(sps or honest, key=lambda n: (self.nodes[n].chain.height, -int(n[1:])))

    def check_invariants(self) -> list[tuple[str, str]]:
        out: list[tuple[str, str]] = []
        honest = self.honest_nodes()
        # safety
        decided: dict[tuple[int, int], tuple[bytes, str]] = {}
        for n in honest:
            for e, h, hsh, _ in self.nodes[n].commits:
                if e < 0:
                    continue
                prior = decided.setdefault((e, h), (hsh, n))
                if prior[0] != hsh:
                    out.append(("safety", f"{prior[1]} and {n} committed different blocks at epoch {e} height {h}"))
        chains = sorted(((self.nodes[n].chain.height, n) for n in honest), reverse=True)
        if chains:
            longest = self.nodes[chains[0][1]].chain
            for _, n in chains[1:]:
                c = self.nodes[n].chain
                if any(c.blocks[i].block_hash != longest.blocks[i].block_hash for i in range(len(c.blocks))):
                    out.append(("safety", f"{n}'s chain is not a prefix of {chains[0][1]}'s"))
                    break
        # liveness
        times = sorted({t for n in honest for _, _, _, t in self.nodes[n].commits})
        first = {}
        for n in honest:
            for e, h, _, t in self.nodes[n].commits:
                first[(e, h)] = min(first.get((e, h), t), t)
        marks = [0] + sorted(first.values()) + [self.end]
        bound = 2 * self.interval + 2 * self.vp + 20 * self.worst
        if self.end >= bound:
            for a, b in zip(marks, marks[1:]):
                if b - a > bound:
                    out.append(("liveness", f"no block committed between {a} and {b} ms"))
                    break
        del times
        # topology caps
        for v in self.topology.violations():
            out.append(("topology", v))
        # value conservation
        for n in honest:
            c = self.nodes[n].chain
            minted = sum(block_subsidy(b.height) for b in c.blocks)
            if c.utxo_total() != minted:
                out.append(("value-conservation", f"{n}: utxo total {c.utxo_total()} != minted {minted}"))
                break
        # dividend conservation
        for ds in self.dividends:
            if ds.paid() + ds.carry_out != ds.total + ds.carry_in:
                out.append(("dividend-conservation", f"window {ds.window} pays {ds.paid()} of {ds.total}"))
        # audit soundness
        touched = self.affected | set(self.cfg.faulty_nodes) | self.byzantine
        for f, (auditor, sent), t in zip(self.findings, self.finding_ctx, self.finding_times):
            if f.node in touched:
                continue
            if f.kind == UNRESPONSIVE and self._was_cut(auditor, f.node, sent, t):
                continue
            out.append(("audit-soundness", f"{f.kind} finding against uncorrupted {f.node}"))
            break
        return out

    def _was_cut(self, a: str | None, b: str, start: int, stop: int) -> bool:
        """Did a registered partition separate ``a`` from ``b`` at some point in ``[start, stop]``?"""
        for nodes, p0, p1 in self.partitions:
            if p0 <= stop and start < p1 and (a in nodes) != (b in nodes):
                return True
        return False

    # -- exports -----------------------------------------------------------------------------

    def sealed_blocks(self) -> list[dict]:
        return list(self.seals)

    def committed_chain(self, n: str | None = None):
        n = n or self.reference_node()
        return self.nodes[n].chain if n else None

    def write_outputs(self, out_dir: str, result: RunResult) -> None:
        os.makedirs(os.path.join(out_dir, "topology"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "logs"), exist_ok=True)
        chain = self.committed_chain()
        with open(os.path.join(out_dir, "chain.jsonl"), "w", encoding="utf-8") as fh:
            if chain is not None:
                fh.write(chain.export_jsonl())
        for t, topo in self.topology_snapshots:
            _dump(os.path.join(out_dir, "topology", f"t{t:012d}.json"), topo)
        _dump(os.path.join(out_dir, "topology", "final.json"), self.topology.to_json())
        _dump(os.path.join(out_dir, "dividends.json"), [d.to_json() for d in self.dividends])
        _dump(os.path.join(out_dir, "faults.json"), {
            "injected": self.fault_log,
            "findings": [dict(f.to_json(), t=t) for f, t in zip(self.findings, self.finding_times)],
            "verdicts": self.verdicts,
            "recoveries": self.recoveries,
            "bans": dict(sorted(self.bans.items())),
            "reports": self.reports,
        })
        latest = self.metrics[-1] if self.metrics else netops_report(self)
        _dump(os.path.join(out_dir, "metrics.json"), {
            "trace_digest": result.trace_digest,
            "trace_records": result.trace_records,
            "blocks_sealed": len(self.seals),
            "committed_height": chain.height if chain is not None else 0,
            "reward_address": self.reward_address,
            "snapshots": [m.to_json() for m in self.metrics],
            "final": latest.to_json(),
            "ack_latencies": self.ack_records,
            "invariants": [{"name": a, "detail": b} for a, b in result.violations],
        })
        for n in self.cfg.nodes:
            node = self.nodes[n]
            with open(os.path.join(out_dir, "logs", f"{n}.json"), "w", encoding="utf-8") as fh:
                fh.write(node.log.export_json(node.head_auth()))
        for log in self.mint_logs:
            name = log.owner.replace("@", "").replace("/", "-")
            host = self.nodes[self.agent_hosts[MINT]].key
            with open(os.path.join(out_dir, "logs", f"{name}.json"), "w", encoding="utf-8") as fh:
                fh.write(log.export_json(log.authenticator(host)))


def _dump(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run(cfg: ScenarioConfig, out_dir: str | None = None, keep_trace: bool = False) -> RunResult:
    """Execute ``cfg``; with ``out_dir`` the trace and all reports are written there."""
    if out_dir is None:
        sim = Simulation(cfg, None, keep_trace)
        return sim.run()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trace.jsonl"), "w", encoding="utf-8") as fh:
        sim = Simulation(cfg, fh, keep_trace)
        result = sim.run()
    sim.write_outputs(out_dir, result)
    return result
