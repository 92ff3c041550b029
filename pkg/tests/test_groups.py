"""Group arithmetic, exp/log round trips, oracle agreement, invariances."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesa import groups as G
from gesa.errors import (
    DimensionMismatchError,
    GroupMismatchError,
    SingularRotationError,
)

from .oracles import (
    algebra_matrix,
    coords_from_algebra_matrix,
    dense_logm,
    series_expm,
)

ALL_GROUPS = [G.T1, G.T2, G.T3, G.SO2, G.SE2, G.SO3, G.SE3]
GROUP_IDS = [str(g) for g in ALL_GROUPS]


def random_element(group, rng_seed):
    return G.GroupElement(group, G.random_elements(group, 1, rng_seed)[0])


# ---------------------------------------------------------------------------
# compose / inverse / act
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("group", ALL_GROUPS, ids=GROUP_IDS)
def test_compose_identity(group):
    g = random_element(group, 0)
    e = G.identity(group)
    assert np.allclose(G.compose(e, g).matrix, g.matrix, atol=1e-12)
    assert np.allclose(G.compose(g, e).matrix, g.matrix, atol=1e-12)


@pytest.mark.parametrize("group", ALL_GROUPS, ids=GROUP_IDS)
def test_compose_inverse_is_identity(group):
    for seed in range(10):
        g = random_element(group, seed)
        prod = G.compose(g, G.inverse(g))
        assert np.max(np.abs(prod.matrix - np.eye(group.matrix_dim))) < 1e-10


def test_compose_group_mismatch():
    with pytest.raises(GroupMismatchError):
        G.compose(G.identity(G.T2), G.identity(G.SE2))


def test_se2_compose_hand_oracle():
    # rot(pi/2) followed by trans(1,0): matrix product sends the origin to (0,1)
    g = G.compose(G.rotation(G.SE2, np.pi / 2), G.translation(G.SE2, [1.0, 0.0]))
    assert np.max(np.abs(G.act(g, [0.0, 0.0]) - np.array([0.0, 1.0]))) < 1e-12


def test_t2_inverse_negates():
    g = G.translation(G.T2, [1.5, -2.0])
    assert np.allclose(G.inverse(g).matrix[:2, 2], [-1.5, 2.0])


def test_so3_inverse_is_transpose():
    g = random_element(G.SO3, 3)
    inv = G.inverse(g)
    assert np.allclose(inv.matrix, g.matrix.T)
    assert np.allclose(g.matrix @ inv.matrix, np.eye(3), atol=1e-12)


def test_act_identity_and_quarter_turn():
    x = np.array([0.3, -1.2])
    assert np.allclose(G.act(G.identity(G.T2), x), x)
    # standard rotation matrix: theta = pi/2 sends (1, 0) to (0, 1)
    y = G.act(G.rotation(G.SO2, np.pi / 2), [1.0, 0.0])
    assert np.max(np.abs(y - np.array([0.0, 1.0]))) < 1e-12


def test_act_se2_hand_oracle():
    # trans(1,0) * rot(pi) applied to (1,0): rotate to (-1,0), shift to (0,0)
    g = G.compose(G.translation(G.SE2, [1.0, 0.0]), G.rotation(G.SE2, np.pi))
    assert np.max(np.abs(G.act(g, [1.0, 0.0]))) < 1e-12


def test_act_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        G.act(G.identity(G.SE2), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("group", ALL_GROUPS, ids=GROUP_IDS)
def test_action_homomorphism(group):
    rng = np.random.default_rng(7)
    mats_a = G.random_elements(group, 100, 1)
    mats_b = G.random_elements(group, 100, 2)
    xs = rng.normal(size=(100, group.base_dim))
    ab = np.einsum("nij,njk->nik", mats_a, mats_b)
    lhs = G.act_many(group, ab, xs)
    rhs = G.act_many(group, mats_a, G.act_many(group, mats_b, xs))
    assert np.max(np.abs(lhs - rhs)) < 1e-10


# ---------------------------------------------------------------------------
# exp / log
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("group", ALL_GROUPS, ids=GROUP_IDS)
def test_exp_of_zero_is_identity(group):
    e = G.exp_map(G.AlgebraVector(group, np.zeros(group.algebra_dim)))
    assert np.array_equal(e.matrix, np.eye(group.matrix_dim))


def test_so2_exp_matches_rotation_matrix():
    m = G.exp_map(G.AlgebraVector(G.SO2, [0.3])).matrix
    expected = np.array(
        [[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]]
    )
    assert np.allclose(m, expected, atol=1e-15)


@pytest.mark.parametrize("group", ALL_GROUPS, ids=GROUP_IDS)
def test_exp_matches_series_oracle(group):
    rng = np.random.default_rng(11)
    v = G.random_algebra(group, 50, rng, max_norm=1.0, max_rotation=1.0)
    mats = G.exp_many(group, v)
    for i in range(50):
        ref = series_expm(algebra_matrix(group, v[i]))
        assert np.max(np.abs(mats[i] - ref)) < 1e-10


def test_log_identity_is_zero():
    for group in ALL_GROUPS:
        v = G.log_map(G.identity(group))
        assert np.array_equal(v.coords, np.zeros(group.algebra_dim))


def test_t3_log_reads_translation():
    g = G.translation(G.T3, [1.5, -2.0, 0.5])
    assert np.array_equal(G.log_map(g).coords, [1.5, -2.0, 0.5])


@pytest.mark.parametrize("group", ALL_GROUPS, ids=GROUP_IDS)
def test_log_exp_round_trip(group):
    rng = np.random.default_rng(23)
    v = G.random_algebra(group, 500, rng)
    back = G.log_many(group, G.exp_many(group, v))
    assert np.max(np.abs(back - v)) < 1e-8


@pytest.mark.parametrize("group", ALL_GROUPS, ids=GROUP_IDS)
def test_log_matches_dense_logm_oracle(group):
    mats = G.random_elements(group, 500, 5)
    ours = G.log_many(group, mats)
    for i in range(0, 500, 7):
        ref = coords_from_algebra_matrix(group, dense_logm(mats[i]))
        assert np.max(np.abs(ours[i] - ref)) < 1e-7


def test_log_small_angle_branch():
    # angles below the 1e-4 series switchover must still round-trip tightly
    for theta in [1e-5, -3e-5, 9.9e-5]:
        v = np.array([0.4, -0.2, theta])
        back = G.log_many(G.SE2, G.exp_many(G.SE2, v))
        assert np.max(np.abs(back - v)) < 1e-12


def test_so3_log_near_pi_raises():
    g = G.rotation(G.SO3, np.array([np.pi - 1e-8, 0.0, 0.0]))
    with pytest.raises(SingularRotationError):
        G.log_map(g)


def test_se3_log_near_pi_raises():
    R = G._rodrigues(np.array([0.0, np.pi - 1e-7, 0.0]))
    mat = np.eye(4)
    mat[:3, :3] = R
    with pytest.raises(SingularRotationError):
        G.log_map(G.GroupElement(G.SE3, mat))


def test_angle_normalisation_range():
    for theta in [3.5, -3.5, np.pi, -np.pi, 6.0, -6.0]:
        v = G.log_map(G.rotation(G.SO2, theta)).coords[0]
        assert -np.pi < v <= np.pi
        assert abs(np.mod(v - theta + np.pi, 2 * np.pi) - np.pi) < 1e-12


@settings(max_examples=60, deadline=None)
@given(
    tx=st.floats(-2, 2),
    ty=st.floats(-2, 2),
    theta=st.floats(-np.pi + 0.01, np.pi - 0.01),
)
def test_se2_round_trip_property(tx, ty, theta):
    v = np.array([tx, ty, theta])
    back = G.log_many(G.SE2, G.exp_many(G.SE2, v))
    assert np.max(np.abs(back - v)) < 1e-8


# ---------------------------------------------------------------------------
# relative coordinates and distance
# ---------------------------------------------------------------------------


def test_relative_coords_of_self_is_zero():
    for group in ALL_GROUPS:
        g = random_element(group, 2)
        assert np.max(np.abs(G.relative_coords(g, g).coords)) < 1e-12


def test_relative_coords_t2_is_displacement():
    a = G.translation(G.T2, [1.0, 2.0])
    b = G.translation(G.T2, [4.0, -1.0])
    assert np.allclose(G.relative_coords(a, b).coords, [3.0, -3.0])


@pytest.mark.parametrize("use_log", [True, False], ids=["log", "canonical"])
def test_relative_coords_left_invariance(use_log):
    a = random_element(G.SE2, 10)
    b = random_element(G.SE2, 11)
    base = G.relative_coords(a, b, use_log=use_log).coords
    for seed in range(100):
        u = random_element(G.SE2, 1000 + seed)
        ua, ub = G.compose(u, a), G.compose(u, b)
        moved = G.relative_coords(ua, ub, use_log=use_log).coords
        assert np.max(np.abs(moved - base)) < 1e-9


def test_distance_basics():
    g = random_element(G.SE3, 4)
    assert G.distance(g, g) < 1e-12
    a = G.translation(G.T2, [0.0, 0.0])
    b = G.translation(G.T2, [3.0, 4.0])
    assert abs(G.distance(a, b) - 5.0) < 1e-12


def test_distance_left_invariance_se2():
    a = random_element(G.SE2, 20)
    b = random_element(G.SE2, 21)
    d0 = G.distance(a, b)
    worst = 0.0
    for seed in range(50):
        u = random_element(G.SE2, 3000 + seed)
        worst = max(worst, abs(G.distance(G.compose(u, a), G.compose(u, b)) - d0))
    assert worst < 1e-9


# ---------------------------------------------------------------------------
# stabiliser sampling
# ---------------------------------------------------------------------------


def test_stabiliser_trivial_for_translations():
    for count in (1, 5):
        elems = G.sample_stabiliser(G.T2, count, 0)
        assert len(elems) == 1
        assert np.array_equal(elems[0].matrix, np.eye(3))


def test_stabiliser_se2_deterministic_rotations():
    a = G.sample_stabiliser_matrices(G.SE2, 4, 123)
    b = G.sample_stabiliser_matrices(G.SE2, 4, 123)
    assert a.shape == (4, 3, 3)
    assert np.array_equal(a, b)
    # pure rotations: no translation component
    assert np.max(np.abs(a[:, :2, 2])) == 0.0
    for R in a[:, :2, :2]:
        assert np.allclose(R.T @ R, np.eye(2), atol=1e-12)


def test_stabiliser_se2_iid_mode_differs_and_is_seeded():
    a = G.sample_stabiliser_matrices(G.SE2, 6, 9, mode="iid")
    b = G.sample_stabiliser_matrices(G.SE2, 6, 9, mode="iid")
    c = G.sample_stabiliser_matrices(G.SE2, 6, 10, mode="iid")
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stabiliser_se3_haar_mean_concentrates():
    mats = G.sample_stabiliser_matrices(G.SE3, 10000, 7)
    mean_R = mats[:, :3, :3].mean(axis=0)
    assert np.linalg.norm(mean_R, ord=2) < 0.05


def test_stabiliser_cyclic_enumerates_exactly():
    mats = G.sample_stabiliser_matrices(G.cyclic(4), 99, 0)
    assert mats.shape == (4, 2, 2)
    angles = sorted(G.wrap_angle(np.arctan2(mats[:, 1, 0], mats[:, 0, 0])))
    assert np.allclose(angles, [-np.pi / 2, 0.0, np.pi / 2, np.pi])
