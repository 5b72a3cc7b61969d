"""Counter-based random streams keyed by (seed, purpose, index).

Every trial gets its own Philox stream derived through ``SeedSequence`` with a
spawn key, so results never depend on how trials are split across workers.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "numpy-Philox4x64-10/SeedSequence-spawn-key"

# purpose tags for the first spawn-key word
TRIAL = 0
SCENARIO = 1
CLASSICAL = 2
POOL = 3

_U64 = (1 << 64) - 1


class SeedCollisionError(ValueError):
    pass


def check_seed(seed) -> int:
    s = int(seed)
    if s != seed or not 0 <= s <= _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return s


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream named ``key`` under root ``seed``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def trial_stream(seed: int, trial: int) -> np.random.Generator:
    return stream(seed, TRIAL, trial)


def check_disjoint(shards) -> None:
    """Refuse shard layouts in which two shards would reuse a trial stream."""
    seen = {}
    for shard_id, trials in enumerate(shards):
        for t in trials:
            if t in seen:
                raise SeedCollisionError(
                    f"trial {t} assigned to shards {seen[t]} and {shard_id}")
            seen[t] = shard_id
