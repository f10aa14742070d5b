"""Seeded random streams.

All randomness flows through numpy's ``Generator`` over the Philox4x64-10
counter-based bit generator, which yields the same stream for a given seed on
every platform numpy supports.
"""

import numpy as np

ALGORITHM = "philox4x64-10"


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(int(seed)))


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    return value


def rng_state(rng: np.random.Generator) -> dict:
    """Bit-generator state as plain ints and lists (JSON-serializable)."""
    return _plain(rng.bit_generator.state)


def restore_rng(state: dict) -> np.random.Generator:
    inner = state["state"]
    full = dict(state)
    full["state"] = {k: np.array(v, dtype=np.uint64) for k, v in inner.items()}
    full["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    bg = np.random.Philox()
    bg.state = full
    return np.random.Generator(bg)
