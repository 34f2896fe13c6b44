"""Vectorized batch simulation of many independent walk trajectories.

Trial i always draws from the Philox stream (component, i), so any
partition of trials into blocks, and any assignment of blocks to
worker processes, produces bit-identical per-trial results.  Blocks
are fixed-size; multiprocess runs map blocks to a pool and reassemble
them in block order.

The walk itself runs as a batch stack machine over int8 letter
columns: each atom is expanded to its letter sequence (zero-padded to
the longest atom), and every column applies one letter to all trials
at once with vectorized cancel-or-push updates.  Inverse-free supports
never trigger the cancel branch, so one engine serves both regimes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import rng as rngmod
from .errors import BudgetError, InputError
from .measures import FiniteMeasure

BLOCK = 4096
_MAX_RANK_INT8 = 120


def block_ranges(trials: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + BLOCK, trials)) for lo in range(0, trials, BLOCK)]


def letter_matrices(measure: FiniteMeasure) -> list[np.ndarray]:
    """Per-coordinate [n_atoms, max_len] int8 letter matrices, zero padded."""
    if measure.rank > _MAX_RANK_INT8:
        raise BudgetError(f"rank {measure.rank} exceeds the int8 letter budget")
    coords = 2 if measure.kind == "pair" else 1
    out = []
    for c in range(coords):
        rows = [(a[c] if measure.kind == "pair" else a) for a, _ in measure.atoms]
        width = max((len(r) for r in rows), default=1)
        width = max(width, 1)
        mat = np.zeros((len(rows), width), dtype=np.int8)
        for i, r in enumerate(rows):
            mat[i, : len(r)] = r
        out.append(mat)
    return out


def index_block(
    measure: FiniteMeasure, n: int, seed: int, component: int, lo: int, hi: int
) -> np.ndarray:
    """Atom indices [hi-lo, n]; row i comes from stream (component, lo + i)."""
    cum = measure._cumulative()
    out = np.empty((hi - lo, n), dtype=np.int32)
    for i in range(hi - lo):
        gen = rngmod.generator(seed, rngmod.stream_id(component, lo + i))
        out[i] = rngmod.sample_indices(cum, n, gen)
    return out


def _run_stack(letters: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduce letter columns [T, steps] against per-trial stacks.

    Zero letters are padding and do nothing.  Returns (stacks, ptrs):
    stacks[i, :ptrs[i]] is the reduced word of trial i.
    """
    t, steps = letters.shape
    st = np.zeros((t, steps + 1), dtype=np.int8)
    pt = np.zeros(t, dtype=np.int32)
    rows = np.arange(t)
    for col in range(steps):
        x = letters[:, col]
        act = x != 0
        top = st[rows, np.maximum(pt - 1, 0)]
        cancel = act & (pt > 0) & (top == -x)
        pt[cancel] -= 1
        push = act & ~cancel
        pr = rows[push]
        st[pr, pt[push]] = x[push]
        pt[push] += 1
    return st, pt


def _stacks_for_block(
    measure: FiniteMeasure,
    n: int,
    seed: int,
    component: int,
    lo: int,
    hi: int,
    snapshot_at: int | None = None,
):
    """Run one block of walks; returns per-coordinate (stack, ptr) pairs.

    ``snapshot_at`` additionally captures the state after that many
    steps (used for boundary stability checks).
    """
    idx = index_block(measure, n, seed, component, lo, hi)
    mats = letter_matrices(measure)
    results = []
    for mat in mats:
        if snapshot_at is None:
            letters = mat[idx].reshape(hi - lo, -1)
            results.append((_run_stack(letters), None))
        else:
            width = mat.shape[1]
            first = mat[idx[:, :snapshot_at]].reshape(hi - lo, -1)
            rest = mat[idx[:, snapshot_at:]].reshape(hi - lo, -1)
            st, pt = _run_stack(first)
            snap = (st.copy(), pt.copy())
            # continue from the snapshot: widen stacks, replay the tail
            st2 = np.zeros((hi - lo, snapshot_at * width + rest.shape[1] + 1), np.int8)
            st2[:, : st.shape[1]] = st
            pt2 = pt.copy()
            rows = np.arange(hi - lo)
            for col in range(rest.shape[1]):
                x = rest[:, col]
                act = x != 0
                top = st2[rows, np.maximum(pt2 - 1, 0)]
                cancel = act & (pt2 > 0) & (top == -x)
                pt2[cancel] -= 1
                push = act & ~cancel
                pr = rows[push]
                st2[pr, pt2[push]] = x[push]
                pt2[push] += 1
            results.append(((st2, pt2), snap))
    return results


def _map_blocks(func, blocks, workers: int):
    if workers <= 1 or len(blocks) <= 1:
        return [func(b) for b in blocks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, blocks))


class _LengthJob:
    def __init__(self, measure, n, seed, component):
        self.args = (measure, n, seed, component)

    def __call__(self, block):
        measure, n, seed, component = self.args
        res = _stacks_for_block(measure, n, seed, component, block[0], block[1])
        return [pt for (st, pt), _ in res]


def final_lengths(
    measure: FiniteMeasure,
    n: int,
    trials: int,
    seed: int,
    component: int,
    workers: int = 1,
) -> list[np.ndarray]:
    """Word length of each trial's position after n steps, per coordinate."""
    if not isinstance(n, int) or n < 1:
        raise InputError(f"n must be a positive integer, got {n!r}")
    if not isinstance(trials, int) or trials < 1:
        raise InputError(f"trials must be a positive integer, got {trials!r}")
    blocks = block_ranges(trials)
    parts = _map_blocks(_LengthJob(measure, n, seed, component), blocks, workers)
    coords = len(parts[0])
    return [np.concatenate([p[c] for p in parts]) for c in range(coords)]


def _common_prefix_lengths(
    st_a: np.ndarray, pt_a: np.ndarray, st_b: np.ndarray, pt_b: np.ndarray
) -> np.ndarray:
    """Length of the common prefix of two stacked word batches, rowwise."""
    lim = np.minimum(pt_a, pt_b)
    width = int(lim.max(initial=0))
    if width == 0:
        return np.zeros(len(pt_a), dtype=np.int32)
    cols = np.arange(width)
    mism = (st_a[:, :width] != st_b[:, :width]) | (cols[None, :] >= lim[:, None])
    any_m = mism.any(axis=1)
    first = np.argmax(mism, axis=1).astype(np.int32)
    return np.where(any_m, first, lim.astype(np.int32))


class _PairPrefixJob:
    def __init__(self, measure, n, seed, component):
        self.args = (measure, n, seed, component)

    def __call__(self, block):
        measure, n, seed, component = self.args
        res = _stacks_for_block(measure, n, seed, component, block[0], block[1])
        (st1, pt1), _ = res[0]
        (st2, pt2), _ = res[1]
        w = max(st1.shape[1], st2.shape[1])
        if st1.shape[1] < w:
            st1 = np.pad(st1, ((0, 0), (0, w - st1.shape[1])))
        if st2.shape[1] < w:
            st2 = np.pad(st2, ((0, 0), (0, w - st2.shape[1])))
        return _common_prefix_lengths(st1, pt1, st2, pt2)


def pair_prefix_lengths(
    pair_measure: FiniteMeasure,
    n: int,
    trials: int,
    seed: int,
    component: int,
    workers: int = 1,
) -> np.ndarray:
    """Common-prefix length between the two coordinates after n steps.

    This is the Gromov product of the position pair for each trial.
    """
    if pair_measure.kind != "pair":
        raise InputError("pair_prefix_lengths needs a pair measure")
    blocks = block_ranges(trials)
    parts = _map_blocks(_PairPrefixJob(pair_measure, n, seed, component), blocks, workers)
    return np.concatenate(parts)


class _BoundaryJob:
    def __init__(self, measure, horizon, keep_depth, seed, component):
        self.args = (measure, horizon, keep_depth, seed, component)

    def __call__(self, block):
        measure, horizon, keep_depth, seed, component = self.args
        lo, hi = block
        t = hi - lo
        if measure.inverse_free:
            # positions only ever grow, so the state at the horizon is a
            # prefix of every later state: stability holds with the full
            # position, and the later steps need not be simulated.
            res = _stacks_for_block(measure, horizon, seed, component, lo, hi)
            out = []
            for (st, pt), _ in res:
                clip = np.minimum(pt, keep_depth).astype(np.int32)
                letters = np.zeros((t, keep_depth), dtype=np.int8)
                w = min(st.shape[1], keep_depth)
                letters[:, :w] = st[:, :w]
                cols = np.arange(keep_depth)
                letters[cols[None, :] >= clip[:, None]] = 0
                out.append((letters, pt.astype(np.int32)))
            return out
        res = _stacks_for_block(
            measure, 2 * horizon, seed, component, lo, hi, snapshot_at=horizon
        )
        out = []
        for (st, pt), snap in res:
            sst, spt = snap
            w = max(st.shape[1], sst.shape[1])
            if sst.shape[1] < w:
                sst = np.pad(sst, ((0, 0), (0, w - sst.shape[1])))
            if st.shape[1] < w:
                st = np.pad(st, ((0, 0), (0, w - st.shape[1])))
            plen = _common_prefix_lengths(sst, spt, st, pt)
            clip = np.minimum(plen, keep_depth).astype(np.int32)
            letters = np.zeros((t, keep_depth), dtype=np.int8)
            ww = min(sst.shape[1], keep_depth)
            letters[:, :ww] = sst[:, :ww]
            cols = np.arange(keep_depth)
            letters[cols[None, :] >= clip[:, None]] = 0
            out.append((letters, plen))
        return out


def boundary_prefixes(
    pair_measure: FiniteMeasure,
    horizon: int,
    keep_depth: int,
    trials: int,
    seed: int,
    component: int,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stable prefixes of a batch of pair walks.

    Runs each walk to 2 * horizon and takes, per coordinate, the common
    prefix of the positions at the horizon and at twice the horizon
    (inverse-free walks shortcut this: the prefix is the full position
    at the horizon).  Returns (letters1, letters2, len1, len2) where the
    letter arrays are [trials, keep_depth] int8, zero padded beyond the
    per-trial stable length.
    """
    if pair_measure.kind != "pair":
        raise InputError("boundary_prefixes needs a pair measure")
    blocks = block_ranges(trials)
    parts = _map_blocks(
        _BoundaryJob(pair_measure, horizon, keep_depth, seed, component),
        blocks,
        workers,
    )
    letters1 = np.concatenate([p[0][0] for p in parts])
    len1 = np.concatenate([p[0][1] for p in parts])
    letters2 = np.concatenate([p[1][0] for p in parts])
    len2 = np.concatenate([p[1][1] for p in parts])
    return letters1, letters2, len1, len2
