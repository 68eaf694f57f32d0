"""Named, independent random streams derived from a single root seed.

Every stochastic decision in the package (data generation, clip sampling,
transform label draws, parameter init, negative sampling, eval shuffling)
pulls from one of these streams, so runs are reproducible end to end and
adding consumers to one stream never disturbs another.  The deep-learning
backend's own global RNG is never used.
"""

from __future__ import annotations

import numpy as np

# Stable stream indices.  Appending new names is fine; renumbering is not,
# since checkpoints store per-stream states keyed by these names.
STREAM_IDS = {
    "data": 0,       # synthetic dataset specs
    "sampling": 1,   # clip starts + epoch shuffling during pretraining
    "transforms": 2, # transform label draws and transform-internal choices
    "init": 3,       # parameter initialization
    "negatives": 4,  # memory-bank negative sampling / queue prefill
    "eval": 5,       # evaluation-time init, shuffling and clip choices
}


def named_stream(root_seed: int, name: str) -> np.random.Generator:
    """Return the PCG64 generator for stream `name` under `root_seed`.

    Streams for distinct names are statistically independent; the same
    (root_seed, name) pair always yields an identical generator.
    """
    if name not in STREAM_IDS:
        raise ValueError(
            f"unknown stream name {name!r}; expected one of {sorted(STREAM_IDS)}"
        )
    if not isinstance(root_seed, (int, np.integer)) or isinstance(root_seed, bool):
        raise TypeError(f"root_seed must be an int, got {type(root_seed).__name__}")
    if root_seed < 0:
        raise ValueError(f"root_seed must be non-negative, got {root_seed}")
    seq = np.random.SeedSequence((int(root_seed), STREAM_IDS[name]))
    return np.random.Generator(np.random.PCG64(seq))


def capture_state(gen: np.random.Generator) -> dict:
    """Snapshot a generator's state as a JSON-serializable dict."""
    state = gen.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_state(gen: np.random.Generator, snapshot: dict) -> None:
    """Restore a generator to a state captured by `capture_state`."""
    if snapshot.get("bit_generator") != "PCG64":
        raise ValueError(
            f"snapshot is for {snapshot.get('bit_generator')!r}, expected 'PCG64'"
        )
    gen.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(snapshot["state"]), "inc": int(snapshot["inc"])},
        "has_uint32": int(snapshot["has_uint32"]),
        "uinteger": int(snapshot["uinteger"]),
    }
