"""Configuration agent: picks agent hosts from the super-peer set."""

from __future__ import annotations

import random
from typing import Iterable


def choose_successor(rng: random.Random, super_peers: Iterable[str], exclude: Iterable[str] = ()) -> str:
    """Uniform draw over eligible super peers, in id order so the draw is reproducible."""
    skip = set(exclude)
    pool = sorted(sp for sp in super_peers if sp not in skip)
    if not pool:
        pool = sorted(super_peers)
    if not pool:
        raise ValueError("no super peers to choose from")
    return rng.choice(pool)
