"""Nomadic singleton agents and their state handoff."""

from .audit import AuditFinding, audit_poll
from .mint import Ack, MintAgent, Seal, mint_ack, mint_seal
from .recovery import NoBackupAvailable, ProvenFault, RecoveryContext, RecoveryPlan, recover
from .reward import DividendSet, RewardPolicy, distribute_rewards
from .netops import MetricsSnapshot, netops_report, percentile
from .state import AgentState, BadHandoffSignature, handoff, receive_handoff

__all__ = [
    "Ack", "AgentState", "AuditFinding", "BadHandoffSignature", "DividendSet", "MetricsSnapshot",
    "MintAgent", "NoBackupAvailable", "ProvenFault", "RecoveryContext", "RecoveryPlan", "RewardPolicy",
    "Seal", "audit_poll", "distribute_rewards", "handoff", "mint_ack", "mint_seal", "netops_report",
    "percentile", "receive_handoff", "recover",
]
