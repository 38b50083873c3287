"""Deterministic random-stream management.

Every source of randomness in a simulation run draws from its own generator,
derived from the root seed through a spawn key that names the run index, a
domain code, and any further indices (robot id, edge endpoints, ...). Streams
are therefore independent and stable: adding a consumer, reordering draws
inside another stream, or toggling dropout cannot perturb anybody else's
sequence, and the same (seed, run, name) always reproduces the same draws.
"""

from __future__ import annotations

import numpy as np

DOMAIN_INIT = 0
DOMAIN_TRUTH = 1
DOMAIN_MEASUREMENT = 2
DOMAIN_DROPOUT = 3


def stream(root_seed: int, run_idx: int, domain: int, *indices: int) -> np.random.Generator:
    """Generator for one named noise source of one Monte Carlo run."""
    key = (run_idx, domain) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy=root_seed, spawn_key=key))
