"""Boundary sampling, cylinder counting, and dimension estimation."""

import math
from fractions import Fraction

import numpy as np
import pytest

from noisewalk.boundary import (
    BoundarySampleSet,
    ball_measure,
    build_tree,
    dimension_singularity_check,
    local_dimension,
    sample_boundary,
)
from noisewalk.errors import InputError, ValidationError
from noisewalk.measures import uniform_measure
from noisewalk.oracle import h_semigroup


def semi(m=2):
    return uniform_measure(m, inverse_free=True)


def srw(rank=2):
    return uniform_measure(rank)


def hand_built_samples():
    """Five fully stable rank-2 samples of depth 2 with known prefixes."""
    l1 = np.array(
        [[1, 1], [1, 1], [1, 2], [2, 1], [2, 1]], dtype=np.int8
    )
    l2 = np.array(
        [[1, 1], [1, 1], [1, 1], [2, 2], [2, 1]], dtype=np.int8
    )
    lens = np.full(5, 2, dtype=np.int64)
    return BoundarySampleSet(l1, l2, lens, lens, horizon=2, keep_depth=2,
                             rank=2, seed=0)


# ---------------------------------------------------------------------------
# sampling


def test_semigroup_prefixes_are_fully_stable():
    s = sample_boundary(semi(2), 0.5, horizon=40, trials=64, seed=12)
    assert len(s) == 64
    assert (s.t_stable == 40).all()
    # letters are positive generators only
    assert (s.letters1 >= 1).all() and (s.letters1 <= 2).all()


def test_group_prefixes_partially_stable():
    s = sample_boundary(srw(2), 0.5, horizon=60, trials=128, seed=12)
    frac_deep = float((s.usable_depth() >= 10).mean())
    assert frac_deep > 0.9  # the walk has positive drift, rays stabilize
    sample = s[0]
    assert sample.prefix1 == tuple(
        int(x) for x in s.letters1[0, : min(s.len1[0], s.keep_depth)]
    )


def test_sample_boundary_reproducible_and_worker_independent():
    a = sample_boundary(srw(2), 0.3, horizon=30, trials=50, seed=7)
    b = sample_boundary(srw(2), 0.3, horizon=30, trials=50, seed=7, workers=4)
    assert (a.letters1 == b.letters1).all()
    assert (a.letters2 == b.letters2).all()
    assert (a.t_stable == b.t_stable).all()


def test_sample_boundary_validation():
    with pytest.raises(InputError):
        sample_boundary(semi(2), 0.5, horizon=0, trials=10, seed=1)
    with pytest.raises(InputError):
        sample_boundary(semi(2), 0.5, horizon=10, trials=0, seed=1)


# ---------------------------------------------------------------------------
# cylinder tree


def test_tree_counts_on_hand_built_fixture():
    s = hand_built_samples()
    tree = build_tree(s, 2)
    tree.validate()
    assert tree.sample_count == 5
    assert tree.usable_count(1) == 5
    # depth 1: pairs (1,1) x3, (2,2) x2
    assert tree.node_count(1) == 2
    assert tree.count_of_prefix((1,), (1,)) == 3
    assert tree.count_of_prefix((2,), (2,)) == 2
    assert tree.count_of_prefix((1,), (2,)) == 0
    # depth 2
    assert tree.count_of_prefix((1, 1), (1, 1)) == 2
    assert tree.count_of_prefix((1, 2), (1, 1)) == 1
    assert tree.count_of_prefix((2, 1), (2, 2)) == 1
    assert tree.count_of_prefix((2, 1), (2, 1)) == 1


def test_tree_export_golden():
    s = hand_built_samples()
    tree = build_tree(s, 2)
    assert list(tree.export_records()) == [
        "1 1 3",
        "2 2 2",
        "1,1 1,1 2",
        "1,2 1,1 1",
        "2,1 2,1 1",
        "2,1 2,2 1",
    ]
    assert list(tree.export_records(max_depth=1)) == ["1 1 3", "2 2 2"]


def test_tree_prefix_roundtrip():
    s = sample_boundary(semi(2), 0.7, horizon=12, trials=200, seed=9)
    tree = build_tree(s, 6)
    tree.validate()
    for t in (1, 3, 6):
        for nid in range(tree.node_count(t)):
            p1, p2 = tree.prefix_of_node(t, nid)
            assert tree.count_of_prefix(p1, p2) >= 1
        assert tree.usable_count(t) == 200


def test_tree_depth_validation():
    s = sample_boundary(semi(2), 0.5, horizon=10, trials=20, seed=3)
    with pytest.raises(ValidationError):
        build_tree(s, 11)  # deeper than kept prefixes
    tree = build_tree(s, 5)
    with pytest.raises(InputError):
        tree.node_count(6)
    with pytest.raises(InputError):
        tree.count_of_prefix((1, 1), (1,))


# ---------------------------------------------------------------------------
# ball measure


def test_ball_measure_leave_one_out_matches_brute_force():
    s = sample_boundary(semi(2), 0.8, horizon=8, trials=300, seed=31)
    tree = build_tree(s, 4)
    prefixes = [(sample.prefix1[:4], sample.prefix2[:4]) for sample in s]
    for center in (0, 17, 299):
        p1, p2 = prefixes[center]
        for t in (1, 2, 4):
            brute = sum(
                1
                for j, (q1, q2) in enumerate(prefixes)
                if j != center and q1[:t] == p1[:t] and q2[:t] == p2[:t]
            )
            got = ball_measure(tree, center, t)
            assert got == brute / (len(s) - 1)


def test_ball_measure_external_sample():
    s = sample_boundary(semi(2), 0.8, horizon=8, trials=100, seed=31)
    tree = build_tree(s, 4)
    probe = s[3]
    v = ball_measure(tree, probe, 2)
    brute = sum(
        1
        for sample in s
        if sample.prefix1[:2] == probe.prefix1[:2]
        and sample.prefix2[:2] == probe.prefix2[:2]
    )
    assert v == brute / len(s)


def test_ball_measure_nonincreasing_in_depth():
    s = sample_boundary(semi(2), 0.6, horizon=10, trials=400, seed=13)
    tree = build_tree(s, 8)
    for center in (0, 100, 399):
        vals = [ball_measure(tree, center, t) for t in range(1, 9)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_cylinder_masses_partition_unity():
    s = sample_boundary(srw(2), 0.5, horizon=40, trials=500, seed=19)
    tree = build_tree(s, 6)
    for t in (1, 3, 6):
        usable = tree.usable_count(t)
        total = sum(
            tree.count_of_prefix(*tree.prefix_of_node(t, nid))
            for nid in range(tree.node_count(t))
        )
        assert total == usable <= len(s)


def test_semigroup_cylinder_masses_match_exact_law():
    # each depth-t pair cylinder has exact mass p^k q^(t-k) with k the
    # number of agreeing positions; most empirical frequencies should
    # cover it at the per-cylinder 95% level
    from noisewalk.estimators import _wilson
    from noisewalk.oracle import coupling_weights

    rho, t, trials = 0.5, 3, 40_000
    s = sample_boundary(semi(2), rho, horizon=10, trials=trials, seed=23)
    tree = build_tree(s, t)
    p, q = coupling_weights(2, rho)
    covered = 0
    nodes = tree.node_count(t)
    for nid in range(nodes):
        p1, p2 = tree.prefix_of_node(t, nid)
        k = sum(1 for a, b in zip(p1, p2) if a == b)
        exact = p**k * q ** (t - k)
        lo, hi = _wilson(tree.count_of_prefix(p1, p2), trials)
        covered += lo <= exact <= hi
    assert covered >= 0.9 * nodes


def test_shannon_consistency_on_semigroup():
    # -(1/t) log of the exact mass of the sample's own prefix cylinder
    # concentrates at the entropy rate
    from noisewalk.oracle import coupling_weights

    rho, t = 0.5, 25
    s = sample_boundary(semi(2), rho, horizon=t, trials=5000, seed=29)
    p, q = coupling_weights(2, rho)
    vals = []
    for sample in s:
        k = sum(1 for a, b in zip(sample.prefix1, sample.prefix2) if a == b)
        vals.append(-(k * math.log(p) + (t - k) * math.log(q)) / t)
    mean = sum(vals) / len(vals)
    h = h_semigroup(2, rho)
    assert abs(mean - h) / h < 0.02


def test_ball_measure_validation():
    s = sample_boundary(semi(2), 0.5, horizon=6, trials=30, seed=2)
    tree = build_tree(s, 3)
    with pytest.raises(InputError):
        ball_measure(tree, 30, 2)  # index out of range
    with pytest.raises(InputError):
        ball_measure(tree, 0, 4)  # deeper than the tree


# ---------------------------------------------------------------------------
# local dimension


def test_local_dimension_independent_coupling():
    # at rho = 1 the boundary measure is the product measure and the
    # dimension is 2 log 2
    s = sample_boundary(semi(2), 1.0, horizon=60, trials=20_000, seed=41,
                        keep_depth=12)
    tree = build_tree(s, 12)
    r = local_dimension(s, tree, tuple(range(1, 13)), n_centers=150, seed=41)
    expect = 2 * math.log(2)
    assert abs(r.value - expect) / expect < 0.1
    assert r.method == "local-dimension"
    assert r.details["centers_used"] > 100


def test_local_dimension_validation():
    s = sample_boundary(semi(2), 0.5, horizon=8, trials=50, seed=2)
    tree = build_tree(s, 4)
    with pytest.raises(InputError):
        local_dimension(s, tree, (3,), 10, seed=2)  # single depth
    with pytest.raises(InputError):
        local_dimension(s, tree, (1, 9), 10, seed=2)  # beyond tree depth
    other = sample_boundary(semi(2), 0.5, horizon=8, trials=49, seed=2)
    with pytest.raises(ValidationError):
        local_dimension(other, tree, (1, 2), 10, seed=2)


def test_dimension_singularity_conclusive_and_not():
    mu = semi(2)
    kwargs = dict(horizon=80, trials=20_000, t_grid=tuple(range(1, 13)),
                  n_centers=150, seed=47)
    rep = dimension_singularity_check(mu, 0.2, 1.0, **kwargs)
    assert rep.conclusive
    assert rep.gap > 0
    assert rep.closed_form_a == h_semigroup(2, 0.2)
    assert rep.closed_form_b == h_semigroup(2, 1.0)
    # same noise level on both sides: identical estimates, no gap
    rep_same = dimension_singularity_check(mu, 0.6, 0.6, **kwargs)
    assert not rep_same.conclusive
    assert rep_same.gap == 0.0
