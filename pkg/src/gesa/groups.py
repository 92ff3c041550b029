"""Matrix Lie group arithmetic: exp/log maps, actions, stabiliser sampling.

Supported groups and their matrix forms:

===========  =============  ==============  =====================
group        matrix size    algebra dim     coordinate layout
===========  =============  ==============  =====================
T(n)         (n+1)x(n+1)    n               translation
SO(2)        2x2            1               angle
SE(2)        3x3            3               (tx', ty', angle)
SO(3)        3x3            3               rotation vector
SE(3)        4x4            6               (t' (3), rotvec (3))
C(n)         2x2            1               angle (multiple of 2*pi/n)
===========  =============  ==============  =====================

SE(n) and T(n) elements use the homogeneous block form [[R, t], [0, 1]].
Translational algebra coordinates for SE(n) are the "twisted" coordinates
t' = V^-1 t, so that exp/log invert the matrix exponential exactly.

All arithmetic here is float64 regardless of the network precision setting.
Small-angle code paths switch to 4th-order Taylor series below
``SMALL_ANGLE`` = 1e-4; SO(3)/SE(3) logs raise ``SingularRotationError``
within ``PI_SINGULARITY`` = 1e-6 of the angle-pi branch point instead of
silently picking a branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    GroupMismatchError,
    SingularRotationError,
)

SMALL_ANGLE = 1e-4
PI_SINGULARITY = 1e-6
ORTHO_DRIFT = 1e-12


# ---------------------------------------------------------------------------
# Group identifiers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupId:
    """Tag identifying one of the supported matrix groups.

    ``kind`` is one of ``t``, ``so2``, ``se2``, ``so3``, ``se3``, ``cyclic``;
    ``n`` is the base-space dimension for ``t`` and the order for ``cyclic``.
    """

    kind: str
    n: int = 0

    def __post_init__(self):
        if self.kind not in ("t", "so2", "se2", "so3", "se3", "cyclic"):
            raise ValueError(f"unknown group kind {self.kind!r}")
        if self.kind == "t" and not 1 <= self.n <= 3:
            raise ValueError("T(n) supports n in {1, 2, 3}")
        if self.kind == "cyclic" and self.n < 1:
            raise ValueError("cyclic order must be >= 1")

    @property
    def matrix_dim(self) -> int:
        return {
            "t": self.n + 1,
            "so2": 2,
            "se2": 3,
            "so3": 3,
            "se3": 4,
            "cyclic": 2,
        }[self.kind]

    @property
    def algebra_dim(self) -> int:
        return {"t": self.n, "so2": 1, "se2": 3, "so3": 3, "se3": 6, "cyclic": 1}[
            self.kind
        ]

    @property
    def base_dim(self) -> int:
        """Dimension of the space the group naturally acts on."""
        return {"t": self.n, "so2": 2, "se2": 2, "so3": 3, "se3": 3, "cyclic": 2}[
            self.kind
        ]

    @property
    def rotation_dim(self) -> int:
        """Size of the rotation block inside the matrix form (0 for pure T(n))."""
        return {"t": 0, "so2": 2, "se2": 2, "so3": 3, "se3": 3, "cyclic": 2}[self.kind]

    @property
    def has_translation(self) -> bool:
        return self.kind in ("t", "se2", "se3")

    def __str__(self):
        if self.kind == "t":
            return f"t{self.n}"
        if self.kind == "cyclic":
            return f"c{self.n}"
        return self.kind


T1 = GroupId("t", 1)
T2 = GroupId("t", 2)
T3 = GroupId("t", 3)
SO2 = GroupId("so2")
SE2 = GroupId("se2")
SO3 = GroupId("so3")
SE3 = GroupId("se3")


def cyclic(n: int) -> GroupId:
    return GroupId("cyclic", n)


def parse_group(tag: str) -> GroupId:
    """Parse a CLI-style tag such as ``t2``, ``se3`` or ``c4``."""
    tag = tag.strip().lower()
    if tag in ("so2", "se2", "so3", "se3"):
        return GroupId(tag)
    if tag.startswith("t") and tag[1:].isdigit():
        return GroupId("t", int(tag[1:]))
    if tag.startswith("c") and tag[1:].isdigit():
        return cyclic(int(tag[1:]))
    raise ValueError(f"unknown group tag {tag!r}")


# ---------------------------------------------------------------------------
# Elements and algebra vectors
# ---------------------------------------------------------------------------


@dataclass
class GroupElement:
    group: GroupId
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        m = self.group.matrix_dim
        if self.matrix.shape != (m, m):
            raise DimensionMismatchError(
                f"{self.group} element must be {m}x{m}, got {self.matrix.shape}"
            )

    def __repr__(self):
        return f"GroupElement({self.group}, {np.array2string(self.matrix, precision=6)})"


@dataclass
class AlgebraVector:
    group: GroupId
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1)
        d = self.group.algebra_dim
        if self.coords.shape != (d,):
            raise DimensionMismatchError(
                f"{self.group} algebra vector must have dim {d}, got {self.coords.shape}"
            )


@dataclass
class SpatialPoint:
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1)


def _as_point(x) -> np.ndarray:
    if isinstance(x, SpatialPoint):
        return x.coords
    return np.asarray(x, dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------------------
# Small-angle-safe trigonometric coefficient helpers
# ---------------------------------------------------------------------------


def _sinc(theta):
    """sin(t)/t with a 4th-order series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=np.float64)
    small = np.abs(theta) < SMALL_ANGLE
    t2 = theta * theta
    series = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = np.where(small, 1.0, np.sin(theta) / np.where(small, 1.0, theta))
    return np.where(small, series, exact)


def _cosc(theta):
    """(1 - cos(t))/t with a series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=np.float64)
    small = np.abs(theta) < SMALL_ANGLE
    t2 = theta * theta
    series = theta / 2.0 - theta * t2 / 24.0 + theta * t2 * t2 / 720.0
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = np.where(
            small, 0.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta)
        )
    return np.where(small, series, exact)


def _cosc2(theta):
    """(1 - cos(t))/t^2 with a series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=np.float64)
    small = np.abs(theta) < SMALL_ANGLE
    t2 = theta * theta
    series = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = np.where(small, 0.5, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    return np.where(small, series, exact)


def _tms3(theta):
    """(t - sin(t))/t^3 with a series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=np.float64)
    small = np.abs(theta) < SMALL_ANGLE
    t2 = theta * theta
    series = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = np.where(
            small,
            1.0 / 6.0,
            (theta - np.sin(theta)) / np.where(small, 1.0, t2 * theta),
        )
    return np.where(small, series, exact)


def _half_over_sinc(theta):
    """t/(2 sin(t)) with a series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=np.float64)
    small = np.abs(theta) < SMALL_ANGLE
    t2 = theta * theta
    series = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = np.where(
            small, 0.5, theta / (2.0 * np.where(small, 1.0, np.sin(theta)))
        )
    return np.where(small, series, exact)


def wrap_angle(theta):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=np.float64), 2.0 * np.pi)


def _skew(v):
    """Batched hat operator: (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _rot2(theta):
    """Batched 2x2 rotation matrices from angles (...,)."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2), dtype=np.float64)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def _rodrigues(omega):
    """Batched SO(3) exponential of rotation vectors (..., 3)."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega, axis=-1)
    K = _skew(omega)
    a = _sinc(theta)[..., None, None]
    b = _cosc2(theta)[..., None, None]
    return np.eye(3) + a * K + b * (K @ K)


# ---------------------------------------------------------------------------
# Batched exp / log on raw matrix stacks (used by lifting and attention)
# ---------------------------------------------------------------------------


def exp_many(group: GroupId, coords: np.ndarray) -> np.ndarray:
    """Exponential map on a stack of algebra coordinates (..., d) -> (..., m, m)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != group.algebra_dim:
        raise DimensionMismatchError(
            f"expected trailing dim {group.algebra_dim} for {group}, got {coords.shape}"
        )
    lead = coords.shape[:-1]
    m = group.matrix_dim
    if group.kind == "t":
        out = np.broadcast_to(np.eye(m), lead + (m, m)).copy()
        out[..., : group.n, group.n] = coords
        return out
    if group.kind in ("so2", "cyclic"):
        return _rot2(coords[..., 0])
    if group.kind == "se2":
        theta = coords[..., 2]
        a = _sinc(theta)
        b = _cosc(theta)
        u = coords[..., :2]
        out = np.zeros(lead + (3, 3), dtype=np.float64)
        out[..., :2, :2] = _rot2(theta)
        out[..., 0, 2] = a * u[..., 0] - b * u[..., 1]
        out[..., 1, 2] = b * u[..., 0] + a * u[..., 1]
        out[..., 2, 2] = 1.0
        return out
    if group.kind == "so3":
        return _rodrigues(coords)
    if group.kind == "se3":
        u, omega = coords[..., :3], coords[..., 3:]
        theta = np.linalg.norm(omega, axis=-1)
        K = _skew(omega)
        V = (
            np.eye(3)
            + _cosc2(theta)[..., None, None] * K
            + _tms3(theta)[..., None, None] * (K @ K)
        )
        out = np.zeros(lead + (4, 4), dtype=np.float64)
        out[..., :3, :3] = _rodrigues(omega)
        out[..., :3, 3] = np.einsum("...ij,...j->...i", V, u)
        out[..., 3, 3] = 1.0
        return out
    raise ValueError(group.kind)


def _log_rot2(R):
    theta = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return wrap_angle(theta)


def _log_so3(R):
    tr = np.trace(R, axis1=-2, axis2=-1)
    cos_theta = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if np.any(theta > np.pi - PI_SINGULARITY):
        raise SingularRotationError(
            "rotation angle within 1e-6 of pi; log map branch is ambiguous"
        )
    coef = _half_over_sinc(theta)
    vee = np.stack(
        [
            R[..., 2, 1] - R[..., 1, 2],
            R[..., 0, 2] - R[..., 2, 0],
            R[..., 1, 0] - R[..., 0, 1],
        ],
        axis=-1,
    )
    return coef[..., None] * vee


def log_many(group: GroupId, mats: np.ndarray) -> np.ndarray:
    """Log-map coordinates of a stack of group matrices (..., m, m) -> (..., d)."""
    mats = np.asarray(mats, dtype=np.float64)
    if group.kind == "t":
        return mats[..., : group.n, group.n].copy()
    if group.kind in ("so2", "cyclic"):
        return _log_rot2(mats)[..., None]
    if group.kind == "se2":
        theta = _log_rot2(mats[..., :2, :2])
        a = _sinc(theta)
        b = _cosc(theta)
        den = a * a + b * b
        tx, ty = mats[..., 0, 2], mats[..., 1, 2]
        # V^-1 = [[a, b], [-b, a]] / (a^2 + b^2)
        return np.stack(
            [(a * tx + b * ty) / den, (-b * tx + a * ty) / den, theta], axis=-1
        )
    if group.kind == "so3":
        return _log_so3(mats)
    if group.kind == "se3":
        omega = _log_so3(mats[..., :3, :3])
        theta = np.linalg.norm(omega, axis=-1)
        K = _skew(omega)
        V = (
            np.eye(3)
            + _cosc2(theta)[..., None, None] * K
            + _tms3(theta)[..., None, None] * (K @ K)
        )
        u = np.linalg.solve(V, mats[..., :3, 3][..., None])[..., 0]
        return np.concatenate([u, omega], axis=-1)
    raise ValueError(group.kind)


def inverse_many(group: GroupId, mats: np.ndarray) -> np.ndarray:
    """Closed-form block inverse of a stack of group matrices."""
    mats = np.asarray(mats, dtype=np.float64)
    r = group.rotation_dim
    if group.kind in ("so2", "so3", "cyclic"):
        return np.swapaxes(mats, -1, -2).copy()
    b = group.base_dim
    out = np.zeros_like(mats)
    if group.kind == "t":
        out[...] = np.eye(group.matrix_dim)
        out[..., :b, b] = -mats[..., :b, b]
        return out
    Rt = np.swapaxes(mats[..., :r, :r], -1, -2)
    out[..., :r, :r] = Rt
    out[..., :r, r] = -np.einsum("...ij,...j->...i", Rt, mats[..., :r, r])
    out[..., r, r] = 1.0
    return out


def canonical_coords_many(group: GroupId, mats: np.ndarray) -> np.ndarray:
    """Raw translation block concatenated with rotation log coordinates.

    Bypasses the V^-1 twist of the full log map; same dimension as the
    algebra. For T(n) this equals the log map.
    """
    mats = np.asarray(mats, dtype=np.float64)
    if group.kind == "t":
        return mats[..., : group.n, group.n].copy()
    if group.kind in ("so2", "cyclic"):
        return _log_rot2(mats)[..., None]
    if group.kind == "se2":
        return np.concatenate(
            [mats[..., :2, 2], _log_rot2(mats[..., :2, :2])[..., None]], axis=-1
        )
    if group.kind == "so3":
        return _log_so3(mats)
    if group.kind == "se3":
        return np.concatenate([mats[..., :3, 3], _log_so3(mats[..., :3, :3])], axis=-1)
    raise ValueError(group.kind)


def act_many(group: GroupId, mats: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a stack of elements (..., m, m) to points (..., b)."""
    points = np.asarray(points, dtype=np.float64)
    b = group.base_dim
    if points.shape[-1] != b:
        raise DimensionMismatchError(
            f"{group} acts on R^{b}, got point dim {points.shape[-1]}"
        )
    if group.kind in ("so2", "so3", "cyclic"):
        return np.einsum("...ij,...j->...i", mats, points)
    R = mats[..., :b, :b]
    t = mats[..., :b, b]
    return np.einsum("...ij,...j->...i", R, points) + t


def relative_coords_many(
    group: GroupId, mats_a: np.ndarray, mats_b: np.ndarray, use_log: bool = True
) -> np.ndarray:
    """Coordinates of a^-1 b for stacks of matrices (broadcasting allowed)."""
    rel = inverse_many(group, mats_a) @ np.asarray(mats_b, dtype=np.float64)
    if use_log:
        return log_many(group, rel)
    return canonical_coords_many(group, rel)


def pairwise_coords(
    group: GroupId, mats: np.ndarray, use_log: bool = True
) -> np.ndarray:
    """All-pairs relative coordinates of a stack: (L, m, m) -> (L, L, d)."""
    inv = inverse_many(group, mats)
    rel = np.einsum("aij,bjk->abik", inv, mats)
    if use_log:
        return log_many(group, rel)
    return canonical_coords_many(group, rel)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(n) via SVD."""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U = U.copy()
        U[:, -1] = -U[:, -1]
        out = U @ Vt
    return out


# ---------------------------------------------------------------------------
# Scalar (spec-level) operations on GroupElement
# ---------------------------------------------------------------------------


def identity(group: GroupId) -> GroupElement:
    return GroupElement(group, np.eye(group.matrix_dim))


def translation(group: GroupId, t) -> GroupElement:
    """Pure-translation element of T(n) or SE(n)."""
    if not group.has_translation:
        raise GroupMismatchError(f"{group} has no translation part")
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.shape != (group.base_dim,):
        raise DimensionMismatchError(
            f"{group} translation must have dim {group.base_dim}"
        )
    mat = np.eye(group.matrix_dim)
    mat[: group.base_dim, group.base_dim] = t
    return GroupElement(group, mat)


def rotation(group: GroupId, angle_or_matrix) -> GroupElement:
    """Rotation-only element (angle for 2-D kinds, 3x3 matrix or rotvec for 3-D)."""
    if group.kind == "t":
        raise GroupMismatchError("T(n) has no rotations")
    arr = np.asarray(angle_or_matrix, dtype=np.float64)
    if group.kind in ("so2", "cyclic", "se2"):
        R = _rot2(float(arr))
    else:
        R = arr if arr.shape == (3, 3) else _rodrigues(arr.reshape(3))
    mat = np.eye(group.matrix_dim)
    r = group.rotation_dim
    mat[:r, :r] = R
    return GroupElement(group, mat)


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Group product a * b, re-orthonormalizing the rotation block on drift."""
    if a.group != b.group:
        raise GroupMismatchError(f"cannot compose {a.group} with {b.group}")
    mat = a.matrix @ b.matrix
    r = a.group.rotation_dim
    if r:
        R = mat[:r, :r]
        drift = np.max(np.abs(R.T @ R - np.eye(r)))
        if drift > ORTHO_DRIFT:
            mat = mat.copy()
            mat[:r, :r] = orthonormalize(R)
    return GroupElement(a.group, mat)


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement(g.group, inverse_many(g.group, g.matrix))


def act(g: GroupElement, x) -> np.ndarray:
    """Apply g to a point of the base space; returns the image coordinates."""
    return act_many(g.group, g.matrix, _as_point(x))


def exp_map(v: AlgebraVector) -> GroupElement:
    return GroupElement(v.group, exp_many(v.group, v.coords))


def log_map(g: GroupElement) -> AlgebraVector:
    return AlgebraVector(g.group, log_many(g.group, g.matrix))


def relative_coords(
    g: GroupElement, g2: GroupElement, use_log: bool = True
) -> AlgebraVector:
    """Coordinates of g^-1 g2; invariant under g -> u g, g2 -> u g2."""
    if g.group != g2.group:
        raise GroupMismatchError(f"cannot relate {g.group} with {g2.group}")
    return AlgebraVector(
        g.group, relative_coords_many(g.group, g.matrix, g2.matrix, use_log=use_log)
    )


def distance(g: GroupElement, g2: GroupElement) -> float:
    """Left-invariant distance: Euclidean norm of the relative log coordinates."""
    return float(np.linalg.norm(relative_coords(g, g2, use_log=True).coords))


# ---------------------------------------------------------------------------
# Stabiliser sampling and random elements
# ---------------------------------------------------------------------------


def stabiliser_angles(count: int, rng: np.random.Generator, mode: str) -> np.ndarray:
    """Rotation angles for an SO(2) stabiliser sample.

    ``stratified`` draws an equispaced grid with one uniform random phase
    (each angle is still marginally Uniform[0, 2pi)); ``iid`` draws
    independent uniforms.
    """
    if mode == "stratified":
        phase = rng.uniform(0.0, 2.0 * np.pi)
        return np.mod(phase + 2.0 * np.pi * np.arange(count) / count, 2.0 * np.pi)
    if mode == "iid":
        return rng.uniform(0.0, 2.0 * np.pi, size=count)
    raise ValueError(f"unknown sampling mode {mode!r}")


def _quaternion_rotations(count: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform SO(3) samples via normalized uniform quaternions."""
    q = rng.normal(size=(count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((count, 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - z * w)
    R[:, 0, 2] = 2 * (x * z + y * w)
    R[:, 1, 0] = 2 * (x * y + z * w)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - x * w)
    R[:, 2, 0] = 2 * (x * z - y * w)
    R[:, 2, 1] = 2 * (y * z + x * w)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def sample_stabiliser_matrices(
    group: GroupId, count: int, rng_seed: int, mode: str = "stratified"
) -> np.ndarray:
    """Stacked matrices of stabiliser samples, embedded in ``group``'s form.

    T(n) has a trivial stabiliser: a single identity regardless of ``count``.
    Cyclic groups enumerate all ``n`` rotations exactly (``count`` ignored).
    SE(3)/SO(3) use Haar-uniform rotations; ``mode`` applies to the 2-D kinds.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    m = group.matrix_dim
    if group.kind == "t":
        return np.eye(m)[None]
    if group.kind == "cyclic":
        return _rot2(2.0 * np.pi * np.arange(group.n) / group.n)
    if group.kind in ("so2", "se2"):
        R = _rot2(stabiliser_angles(count, rng, mode))
    else:
        R = _quaternion_rotations(count, rng)
    if group.kind in ("so2", "so3"):
        return R
    out = np.zeros((count, m, m), dtype=np.float64)
    out[:, : m - 1, : m - 1] = R
    out[:, m - 1, m - 1] = 1.0
    return out


def sample_stabiliser(
    group: GroupId, count: int, rng_seed: int, mode: str = "stratified"
) -> list[GroupElement]:
    mats = sample_stabiliser_matrices(group, count, rng_seed, mode=mode)
    return [GroupElement(group, m) for m in mats]


def cyclic_stabiliser_matrices(order: int, group: GroupId = SE2) -> np.ndarray:
    """The full C_order rotation subgroup, embedded in ``group``'s matrix form.

    Used for exact (non-Monte-Carlo) lifts on 2-D roto-translation inputs.
    """
    if group.kind not in ("se2", "so2", "cyclic"):
        raise GroupMismatchError("cyclic stabilisers embed in 2-D rotation groups")
    R = _rot2(2.0 * np.pi * np.arange(order) / order)
    if group.kind != "se2":
        return R
    out = np.zeros((order, 3, 3), dtype=np.float64)
    out[:, :2, :2] = R
    out[:, 2, 2] = 1.0
    return out


def random_algebra(
    group: GroupId,
    count: int,
    rng: np.random.Generator,
    max_norm: float = 2.0,
    max_rotation: float = np.pi - 0.01,
) -> np.ndarray:
    """Random algebra coordinates within the guaranteed round-trip domain."""
    d = group.algebra_dim
    v = rng.uniform(-1.0, 1.0, size=(count, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    v *= rng.uniform(0.0, max_norm, size=(count, 1)) / np.maximum(norms, 1e-12)
    if group.kind in ("so2", "cyclic"):
        v[:, 0] = rng.uniform(-max_rotation, max_rotation, size=count)
    elif group.kind == "se2":
        v[:, 2] = rng.uniform(-max_rotation, max_rotation, size=count)
    elif group.kind == "so3":
        axis = rng.normal(size=(count, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        v = axis * rng.uniform(0.0, max_rotation, size=(count, 1))
    elif group.kind == "se3":
        axis = rng.normal(size=(count, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        v[:, 3:] = axis * rng.uniform(0.0, max_rotation, size=(count, 1))
    return v


def random_elements(
    group: GroupId,
    count: int,
    rng_seed: int,
    max_rotation: float = np.pi - 0.01,
    translation_scale: float = 2.0,
) -> np.ndarray:
    """Stack of random group matrices with bounded rotation angles."""
    rng = np.random.default_rng(rng_seed)
    v = random_algebra(group, count, rng, max_rotation=max_rotation)
    mats = exp_many(group, v)
    if group.has_translation:
        b = group.base_dim
        mats[..., :b, b] = rng.normal(scale=translation_scale, size=(count, b))
    if group.kind == "cyclic":
        k = rng.integers(0, group.n, size=count)
        mats = _rot2(2.0 * np.pi * k / group.n)
    return mats
