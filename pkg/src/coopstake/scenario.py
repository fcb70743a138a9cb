"""Scenario files: strict JSON schema with field-level diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .crypto import SCHEMES
from .ledger import COIN, MintPolicy, block_subsidy
from .overlay import OverlayConfig
from .agents.reward import RewardPolicy
from .agents.state import AGENT_KINDS

SCHEMA_VERSION = 1
FAULT_MODES = (
    "crash", "equivocate-block", "omit-acked-tx", "tamper-log-entry", "corrupt-replica-byte",
    "forge-ack-timestamp", "partition",
)
DEFAULT_STAKE = COIN // 10
DEFAULT_BALANCE = COIN // 2
MINT_ONLY_MODES = ("equivocate-block", "omit-acked-tx", "forge-ack-timestamp")


class InvalidScenario(Exception):
    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{f}: {m}" for f, m in errors))


def node_id(i: int) -> str:
    return f"n{i:03d}"


@dataclass(frozen=True)
class LatencyConfig:
    hop_ms: int = 50
    jitter_max_ms: int = 10
    spread_ms: int = 0
    processing_ms: int = 0


@dataclass(frozen=True)
class WorkloadConfig:
    tx_per_node_per_hour: float = 2.0
    zero_fee_fraction: float = 0.05
    fee: int = 1000
    min_amount: int = 10_000
    max_amount: int = 1_000_000
    ack_timeout_ms: int = 2000
    max_retries: int = 2


@dataclass(frozen=True)
class AgentsConfig:
    mint_tenure_blocks: int = 6
    handoffs: bool = True
    vote_phase_ms: int = 500
    audit_probe_count: int = 16
    audit_polls_per_day: int = 1
    netops_period_ms: int = 3 * 3_600_000
    provisioning_period_ms: int = 24 * 3_600_000
    stake_period_ms: int = 7 * 24 * 3_600_000
    initial_hosts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FaultSpec:
    at: int
    target: str
    mode: str
    index: int | None = None
    offset: int | None = None
    nodes: tuple = ()
    duration: int | None = None

    def to_json(self) -> dict:
        d = {"at": self.at, "target": self.target, "mode": self.mode}
        for k in ("index", "offset", "duration"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        if self.nodes:
            d["nodes"] = list(self.nodes)
        return d


@dataclass(frozen=True)
class ScenarioConfig:
    node_count: int
    super_peer_count: int
    seed: int
    duration_ms: int
    signature_scheme: str = "ed25519"
    super_peers: tuple = ()
    stakes: dict = field(default_factory=dict)
    default_stake: int = DEFAULT_STAKE
    genesis_balance: int = DEFAULT_BALANCE
    faulty_nodes: tuple = ()
    clock_skews: dict = field(default_factory=dict)
    latency: LatencyConfig = LatencyConfig()
    mint_policy: MintPolicy = MintPolicy()
    reward_policy: RewardPolicy = RewardPolicy()
    overlay: OverlayConfig = OverlayConfig(super_peer_count=3, max_connection_fraction=1.0)
    workload: WorkloadConfig = WorkloadConfig()
    agents: AgentsConfig = AgentsConfig()
    faults: tuple = ()
    late_joiners: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def nodes(self) -> list[str]:
        return [node_id(i) for i in range(self.node_count)]

    def stake_of(self, node: str) -> int:
        return self.stakes.get(node, self.default_stake)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        from dataclasses import replace

        return replace(self, seed=seed)


_SECTIONS = {
    "latency": LatencyConfig,
    "mint_policy": MintPolicy,
    "reward_policy": RewardPolicy,
    "overlay": OverlayConfig,
    "workload": WorkloadConfig,
    "agents": AgentsConfig,
}
_TOP = {
    "schema_version", "node_count", "super_peer_count", "seed", "duration_ms", "signature_scheme",
    "super_peers", "stakes", "default_stake", "genesis_balance", "faulty_nodes", "clock_skews",
    "faults", "late_joiners", *_SECTIONS,
}
_FAULT_FIELDS = {"at", "target", "mode", "index", "offset", "nodes", "duration"}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def _section(name: str, raw: Any, errors: list, extra: dict | None = None):
    cls = _SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append((name, "must be an object"))
        return None
    import dataclasses

    known = {f.name: f for f in dataclasses.fields(cls)}
    ok = True
    for k in raw:
        if k not in known:
            errors.append((f"{name}.{k}", "unknown field"))
            ok = False
    kwargs = dict(extra or {})
    for k, v in raw.items():
        if k not in known:
            continue
        default = known[k].default
        if isinstance(default, bool):
            if not isinstance(v, bool):
                errors.append((f"{name}.{k}", "must be a boolean"))
                ok = False
        elif isinstance(default, int) and not isinstance(default, bool):
            if not _is_int(v):
                errors.append((f"{name}.{k}", "must be an integer"))
                ok = False
        elif isinstance(default, float):
            if not _is_num(v):
                errors.append((f"{name}.{k}", "must be a number"))
                ok = False
        kwargs[k] = v
    if not ok:
        return None
    if name == "reward_policy":
        for k, v in kwargs.items():
            if not 0 <= v <= 1:
                errors.append((f"{name}.{k}", f"{v} outside [0, 1]"))
                ok = False
        if not ok:
            return None
    if name == "mint_policy" and "free_tx_fraction" in kwargs and not 0 <= kwargs["free_tx_fraction"] <= 1:
        errors.append(("mint_policy.free_tx_fraction", f"{kwargs['free_tx_fraction']} outside [0, 1]"))
        return None
    if name == "overlay" and "max_connection_fraction" in kwargs \
            and not 0 < kwargs["max_connection_fraction"] <= 1:
        errors.append(("overlay.max_connection_fraction", f"{kwargs['max_connection_fraction']} outside (0, 1]"))
        return None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        errors.append((name, str(exc)))
        return None


def parse_scenario(doc: Any) -> ScenarioConfig:
    """Validate a decoded scenario document; raises :class:`InvalidScenario`."""
    errors: list[tuple[str, str]] = []
    if not isinstance(doc, dict):
        raise InvalidScenario([("$", "scenario must be a JSON object")])
    for k in sorted(doc):
        if k not in _TOP:
            errors.append((k, "unknown field"))
    if doc.get("schema_version") != SCHEMA_VERSION:
        errors.append(("schema_version", f"must be {SCHEMA_VERSION}"))
    for k in ("node_count", "super_peer_count", "seed", "duration_ms"):
        if k not in doc:
            errors.append((k, "required"))
        elif not _is_int(doc[k]):
            errors.append((k, "must be an integer"))
    if errors:
        raise InvalidScenario(errors)

    n, sp = doc["node_count"], doc["super_peer_count"]
    if n < 4:
        errors.append(("node_count", "need at least 4 nodes"))
    if sp < 3:
        errors.append(("super_peer_count", "need at least 3 super peers"))
    elif sp >= n:
        errors.append(("super_peer_count", "must be smaller than node_count"))
    if doc["duration_ms"] <= 0:
        errors.append(("duration_ms", "must be positive"))
    nodes = {node_id(i) for i in range(max(n, 0))}
    scheme = doc.get("signature_scheme", "ed25519")
    if scheme not in SCHEMES:
        errors.append(("signature_scheme", f"unknown scheme {scheme!r}"))

    def node_list(key):
        v = doc.get(key, [])
        if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
            errors.append((key, "must be a list of node ids"))
            return ()
        for x in v:
            if x not in nodes:
                errors.append((key, f"unknown node {x!r}"))
        return tuple(v)

    def node_map(key, check):
        v = doc.get(key, {})
        if not isinstance(v, dict):
            errors.append((key, "must be an object keyed by node id"))
            return {}
        for x, val in v.items():
            if x not in nodes:
                errors.append((f"{key}.{x}", "unknown node"))
            elif not check(val):
                errors.append((f"{key}.{x}", "bad value"))
        return dict(v)

    supers = node_list("super_peers")
    if supers and len(set(supers)) != sp:
        errors.append(("super_peers", f"must list exactly {sp} distinct nodes"))
    faulty = node_list("faulty_nodes")
    stakes = node_map("stakes", lambda v: _is_int(v) and v >= 0)
    skews = node_map("clock_skews", _is_int)
    late = node_map("late_joiners", lambda v: _is_int(v) and v >= 0)
    for x in late:
        if x in supers:
            errors.append((f"late_joiners.{x}", "a super peer cannot join late"))
    for k in ("default_stake", "genesis_balance"):
        if k in doc and (not _is_int(doc[k]) or doc[k] < 0):
            errors.append((k, "must be a non-negative integer"))
    if _is_int(n) and not any(e[0] in ("default_stake", "genesis_balance") or e[0].startswith("stakes") for e in errors):
        stake_total = sum(stakes.get(x, doc.get("default_stake", DEFAULT_STAKE)) for x in nodes)
        total = stake_total + len(nodes) * doc.get("genesis_balance", DEFAULT_BALANCE)
        if total > block_subsidy(0):
            errors.append(("genesis_balance", f"balances and stakes total {total}, more than the "
                                              f"first block's {block_subsidy(0)}"))

    sections = {}
    for name in _SECTIONS:
        extra = {"super_peer_count": sp} if name == "overlay" and _is_int(sp) and sp >= 3 else None
        raw = doc.get(name)
        if name == "overlay" and isinstance(raw, dict) and "super_peer_count" in raw:
            errors.append(("overlay.super_peer_count", "set super_peer_count at top level"))
            continue
        if name == "agents" and isinstance(raw, dict) and "initial_hosts" in raw:
            hosts = raw["initial_hosts"]
            if not isinstance(hosts, dict):
                errors.append(("agents.initial_hosts", "must be an object"))
            else:
                for kind, host in hosts.items():
                    if kind not in AGENT_KINDS:
                        errors.append((f"agents.initial_hosts.{kind}", "unknown agent kind"))
                    elif supers and host not in supers:
                        errors.append((f"agents.initial_hosts.{kind}", f"{host!r} is not a super peer"))
                    elif host not in nodes:
                        errors.append((f"agents.initial_hosts.{kind}", f"unknown node {host!r}"))
                if hosts and not supers:
                    errors.append(("agents.initial_hosts", "requires an explicit super_peers list"))
        sections[name] = _section(name, raw, errors, extra)
    ov = sections.get("overlay")
    if ov is not None and not errors:
        full = n - sp
        if ov.capacity(full) * sp < 3 * full:
            errors.append(("overlay.max_connection_fraction",
                           f"capacity {ov.capacity(full)} per super peer cannot give {full} full nodes "
                           "three connections each"))

    faults = []
    raw_faults = doc.get("faults", [])
    if not isinstance(raw_faults, list):
        errors.append(("faults", "must be a list"))
        raw_faults = []
    for i, f in enumerate(raw_faults):
        where = f"faults[{i}]"
        if not isinstance(f, dict):
            errors.append((where, "must be an object"))
            continue
        for k in f:
            if k not in _FAULT_FIELDS:
                errors.append((f"{where}.{k}", "unknown field"))
        mode, target, at = f.get("mode"), f.get("target"), f.get("at")
        if mode not in FAULT_MODES:
            errors.append((f"{where}.mode", f"unknown mode {mode!r}"))
        if not _is_int(at) or at < 0:
            errors.append((f"{where}.at", "must be a non-negative integer"))
        elif _is_int(doc["duration_ms"]) and at >= doc["duration_ms"]:
            errors.append((f"{where}.at", "after the end of the run"))
        if not isinstance(target, str) or (target not in nodes and target not in AGENT_KINDS):
            errors.append((f"{where}.target", f"unknown target {target!r}"))
        elif mode in MINT_ONLY_MODES and target not in nodes and target != "mint":
            errors.append((f"{where}.target", f"{mode} applies to the mint"))
        if mode == "tamper-log-entry" and not (_is_int(f.get("index")) and f["index"] >= 0):
            errors.append((f"{where}.index", "required non-negative integer"))
        if mode == "corrupt-replica-byte" and not (_is_int(f.get("offset")) and f["offset"] >= 0):
            errors.append((f"{where}.offset", "required non-negative integer"))
        fnodes = ()
        if mode == "partition":
            fn = f.get("nodes")
            if not isinstance(fn, list) or not fn or any(x not in nodes for x in fn):
                errors.append((f"{where}.nodes", "required list of known node ids"))
            else:
                fnodes = tuple(fn)
            if not (_is_int(f.get("duration")) and f["duration"] > 0):
                errors.append((f"{where}.duration", "required positive integer"))
        if not any(e[0].startswith(where) for e in errors):
            faults.append(FaultSpec(at, target, mode, f.get("index"), f.get("offset"), fnodes, f.get("duration")))
    if errors:
        raise InvalidScenario(errors)
    return ScenarioConfig(
        node_count=n,
        super_peer_count=sp,
        seed=doc["seed"],
        duration_ms=doc["duration_ms"],
        signature_scheme=scheme,
        super_peers=tuple(sorted(supers)),
        stakes=stakes,
        default_stake=doc.get("default_stake", DEFAULT_STAKE),
        genesis_balance=doc.get("genesis_balance", DEFAULT_BALANCE),
        faulty_nodes=tuple(sorted(faulty)),
        clock_skews=skews,
        faults=tuple(sorted(faults, key=lambda f: f.at)),
        late_joiners=late,
        **sections,
    )


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidScenario([("$", f"not valid JSON: {exc}")]) from None
    except OSError as exc:
        raise InvalidScenario([("$", str(exc))]) from None
    return parse_scenario(doc)
