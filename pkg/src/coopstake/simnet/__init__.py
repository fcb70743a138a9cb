"""Discrete-event simulation of the cooperative network."""

from .engine import (
    AGENT_SCHEDULE,
    FAULT_INJECTION,
    MESSAGE_DELIVERY,
    TIMER,
    EventQueue,
    LatencyModel,
    TraceWriter,
    clock_view,
    read_trace,
    rng_stream,
)
from .runner import Message, RunResult, Simulation, TargetMissing, run

__all__ = [
    "AGENT_SCHEDULE", "FAULT_INJECTION", "MESSAGE_DELIVERY", "TIMER", "EventQueue", "LatencyModel",
    "TraceWriter", "clock_view", "read_trace", "rng_stream", "Message", "RunResult", "Simulation",
    "TargetMissing", "run",
]
