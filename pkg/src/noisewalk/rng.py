"""Counter-based random number streams.

Every Monte Carlo routine in the package draws from a Philox generator
keyed by ``(seed, stream)``.  Distinct streams are statistically
independent, and a given (seed, stream) pair always yields the same
sequence, no matter which worker consumes it or in what order streams
are created.  Per-trial substreams therefore make results independent
of the worker count.

Stream ids are structured: high bits select a component (one per
estimator family), low bits the trial index, so no two call sites can
collide on a stream.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

MAX_SEED = 2**64

# Component tags; each estimator family owns a disjoint stream range.
STREAM_DRIFT = 0
STREAM_ENTROPY = 1
STREAM_TV_COUPLED = 2
STREAM_TV_INDEPENDENT = 3
STREAM_BOUNDARY = 4
STREAM_DIMENSION_CENTERS = 5
STREAM_PATH = 6

_COMPONENT_SHIFT = 2**40  # room for 2^40 trials per component


def check_seed(seed: int) -> int:
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise InputError(f"seed must be an integer, got {seed!r}")
    if not 0 <= seed < MAX_SEED:
        raise InputError(f"seed must lie in [0, 2^64), got {seed}")
    return seed


def stream_id(component: int, trial: int = 0) -> int:
    """Compose a stream id from a component tag and a trial index."""
    if trial < 0 or trial >= _COMPONENT_SHIFT:
        raise InputError(f"trial index {trial} out of range")
    return component * _COMPONENT_SHIFT + trial


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for the given (seed, stream) pair.

    The 128-bit Philox key is ``seed + (stream << 64)``, so streams and
    seeds can never alias each other.
    """
    check_seed(seed)
    if stream < 0:
        raise InputError(f"stream must be nonnegative, got {stream}")
    return np.random.Generator(np.random.Philox(key=seed + (stream << 64)))


def sample_indices(cum_weights: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling over a cumulative weight vector.

    ``cum_weights`` must be nondecreasing with final entry within 1e-12
    of 1.  Returns int64 indices.  The final bin absorbs any float
    shortfall of the cumulative sum.
    """
    u = rng.random(size)
    idx = np.searchsorted(cum_weights, u, side="left")
    return np.minimum(idx, len(cum_weights) - 1)
