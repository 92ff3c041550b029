"""Lifting postconditions, coset equivariance, neighbourhood selection."""

import numpy as np
import pytest

from gesa import groups as G
from gesa.errors import EmptyInputError, GroupMismatchError
from gesa.lifting import (
    LiftedFeatureMap,
    lift,
    neighbourhood,
    neighbourhood_mask,
    validate_lift,
)


def grid_points(n=3, spacing=1.0):
    xs = np.arange(n) * spacing
    return np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)


def test_t2_lift_is_translations():
    pts = np.random.default_rng(0).normal(size=(5, 2))
    fmap = lift(pts, np.ones((5, 1)), G.T2)
    assert len(fmap) == 5
    validate_lift(fmap, pts)
    for i in range(5):
        assert np.allclose(fmap.matrices[i][:2, 2], pts[i])
        assert np.allclose(fmap.matrices[i][:2, :2], np.eye(2))


def test_se2_lift_size_and_postcondition():
    pts = np.random.default_rng(1).normal(size=(3, 2))
    fmap = lift(pts, np.ones((3, 2)), G.SE2, num_lift_samples=4, rng_seed=5)
    assert len(fmap) == 12
    validate_lift(fmap, pts)
    # feature rows duplicated per coset sample
    assert np.array_equal(fmap.features[0], fmap.features[3])


def test_se3_lift_postcondition():
    pts = np.random.default_rng(2).normal(size=(4, 3))
    fmap = lift(pts, np.ones((4, 1)), G.SE3, num_lift_samples=3, rng_seed=9)
    assert len(fmap) == 12
    validate_lift(fmap, pts)


def test_lift_empty_raises():
    with pytest.raises(EmptyInputError):
        lift(np.zeros((0, 2)), np.zeros((0, 1)), G.T2)


def test_lift_so2_raises():
    with pytest.raises(GroupMismatchError):
        lift(np.zeros((2, 2)), np.zeros((2, 1)), G.SO2)


def test_lift_equivariance_cosets():
    """lift(u . points) and u . lift(points) populate the same cosets."""
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(4, 2))
    u = G.GroupElement(G.SE2, G.random_elements(G.SE2, 1, 77)[0])
    feats = np.ones((4, 1))
    lifted = lift(pts, feats, G.SE2, num_lift_samples=3, rng_seed=11)
    moved_pts = G.act_many(G.SE2, u.matrix[None], pts)
    lifted_moved = lift(moved_pts, feats, G.SE2, num_lift_samples=3, rng_seed=11)
    translated = lifted.left_translate(u)
    # same cosets: every element maps the origin to the transformed point
    validate_lift(lifted_moved, moved_pts)
    validate_lift(translated, moved_pts)
    # and elements differ only by right-multiplication by a stabiliser element
    for i in range(len(lifted)):
        rel = np.linalg.inv(lifted_moved.matrices[i]) @ translated.matrices[i]
        assert np.max(np.abs(rel[:2, 2])) < 1e-9  # pure rotation remainder


def test_lift_equivariance_exact_for_cyclic():
    """With a full cyclic stabiliser and u in T(2) x C4, sets agree exactly."""
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(3, 2))
    feats = np.ones((3, 1))
    u = G.compose(G.translation(G.SE2, [0.7, -0.2]), G.rotation(G.SE2, np.pi / 2))
    lifted = lift(pts, feats, G.cyclic(4))
    moved = lift(G.act_many(G.SE2, u.matrix[None], pts), feats, G.cyclic(4))
    translated = lifted.left_translate(u)

    def keyed(mats):
        return sorted(tuple(np.round(m, 9).ravel()) for m in mats)

    assert keyed(moved.matrices) == keyed(translated.matrices)


def test_section_choice_does_not_change_cosets():
    """Translation section vs translation-then-fixed-rotation section."""
    pts = np.random.default_rng(5).normal(size=(3, 2))
    feats = np.ones((3, 1))
    base = lift(pts, feats, G.cyclic(4))
    # alternative section s(x) = t_x * r where r is a fixed C4 rotation
    n = pts.shape[0]
    sec = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    sec[:, :2, 2] = pts
    r = G.rotation(G.SE2, np.pi / 2).matrix
    sec = sec @ r[None]
    alt = lift(pts, feats, G.cyclic(4), section=sec)

    def coset_key(fmap, origin):
        rows = np.flatnonzero(fmap.origin_index == origin)
        return sorted(tuple(np.round(fmap.matrices[i], 9).ravel()) for i in rows)

    for i in range(n):
        assert coset_key(base, i) == coset_key(alt, i)


def test_neighbourhood_all_within_infinite_radius():
    pts = grid_points(3)
    fmap = lift(pts, np.ones((9, 1)), G.T2)
    idx = neighbourhood(fmap, 4, radius=np.inf, max_size=9)
    assert np.array_equal(idx, np.arange(9))


def test_neighbourhood_grid_oracle():
    """Exhaustive distance scan on a unit grid, radius 1.5 at the center."""
    pts = grid_points(3)
    fmap = lift(pts, np.ones((9, 1)), G.T2)
    center = 4  # middle of the 3x3 grid
    expected = np.flatnonzero(np.linalg.norm(pts - pts[center], axis=1) <= 1.5)
    idx = neighbourhood(fmap, center, radius=1.5, max_size=9)
    assert np.array_equal(idx, expected)
    assert len(idx) == 9  # center + 8 neighbours at spacing 1


def test_neighbourhood_subsample_deterministic_and_contains_center():
    pts = grid_points(5)
    fmap = lift(pts, np.ones((25, 1)), G.T2)
    a = neighbourhood(fmap, 12, radius=np.inf, max_size=6, rng_seed=3)
    b = neighbourhood(fmap, 12, radius=np.inf, max_size=6, rng_seed=3)
    c = neighbourhood(fmap, 12, radius=np.inf, max_size=6, rng_seed=4)
    assert np.array_equal(a, b)
    assert len(a) == 6 and 12 in a
    assert not np.array_equal(a, c)


def test_neighbourhood_equivariant_under_left_translation():
    pts = np.random.default_rng(6).normal(size=(6, 2))
    fmap = lift(pts, np.ones((6, 1)), G.SE2, num_lift_samples=3, rng_seed=2)
    u = G.GroupElement(G.SE2, G.random_elements(G.SE2, 1, 42)[0])
    moved = fmap.left_translate(u)
    for center in range(len(fmap)):
        a = neighbourhood(fmap, center, radius=2.0, max_size=5, rng_seed=8)
        b = neighbourhood(moved, center, radius=2.0, max_size=5, rng_seed=8)
        assert np.array_equal(a, b)


def test_neighbourhood_mask_matches_rowwise_op():
    pts = np.random.default_rng(7).normal(size=(5, 2))
    fmap = lift(pts, np.ones((5, 1)), G.SE2, num_lift_samples=2, rng_seed=1)
    mask = neighbourhood_mask(fmap, radius=2.5, max_size=4, rng_seed=13)
    for i in range(len(fmap)):
        idx = neighbourhood(fmap, i, radius=2.5, max_size=4, rng_seed=13)
        assert np.array_equal(np.flatnonzero(mask[i]), idx)


def test_permuted_map_and_canonical_order():
    pts = np.random.default_rng(8).normal(size=(4, 2))
    fmap = lift(pts, np.arange(4.0)[:, None], G.SE2, num_lift_samples=2, rng_seed=0)
    perm = np.random.default_rng(9).permutation(len(fmap))
    shuffled = fmap.permuted(perm)
    order = shuffled.canonical_order()
    restored = shuffled.permuted(order)
    assert np.array_equal(restored.origin_index, fmap.origin_index)
    assert np.array_equal(restored.stab_index, fmap.stab_index)
    assert np.allclose(restored.matrices, fmap.matrices)
