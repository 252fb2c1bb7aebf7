"""
Counter-based random substreams.

Every (agent, round, purpose) triple gets its own Philox stream keyed by the
master seed, so draws never depend on the order agents are visited in or on
how work is split across threads.
"""

import numpy as np

MASK64 = (1 << 64) - 1

TRAJECTORY = 0
GRADIENT = 1
PROBE = 2


def _key(seed):
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return seed & ((1 << 128) - 1)


def agent_stream(seed, agent, round_, purpose=GRADIENT) -> np.random.Generator:
    counter = np.array([0, int(agent) & MASK64, int(round_) & MASK64, int(purpose) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed), counter=counter))


def run_stream(seed, purpose=TRAJECTORY) -> np.random.Generator:
    """Stream for whole-run quantities such as the target disturbance."""
    counter = np.array([0, MASK64, MASK64, int(purpose) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed), counter=counter))
