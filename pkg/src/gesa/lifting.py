"""Lifting point clouds onto group elements and neighbourhood selection.

A point/feature pair (x_i, f_i) lifts to the sampled coset
{t_{x_i} h : h in H_hat}, where t_{x_i} is the pure-translation section and
H_hat is a finite stabiliser sample (trivial for T(n), sampled rotations for
SE(2)/SE(3), or a full cyclic subgroup for exact discrete lifts). Feature
rows are duplicated across each point's coset samples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatchError, EmptyInputError, GroupMismatchError
from .groups import (
    SE2,
    GroupElement,
    GroupId,
    cyclic_stabiliser_matrices,
    log_many,
    pairwise_coords,
    relative_coords_many,
    sample_stabiliser_matrices,
)


@dataclass
class LiftedFeatureMap:
    """A finite feature map on the group: stacked elements plus feature rows.

    ``origin_index[k]`` is the input point that element ``k`` was lifted
    from; ``stab_index[k]`` indexes the stabiliser sample used. Elements
    sharing an origin carry identical feature rows by construction.
    """

    group: GroupId
    matrices: np.ndarray  # (L, m, m) stacked group matrices
    features: object  # (L, d_v) ndarray or autodiff Tensor
    origin_index: np.ndarray  # (L,)
    stab_index: np.ndarray  # (L,)

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def num_elements(self) -> int:
        return self.matrices.shape[0]

    def element(self, i: int) -> GroupElement:
        return GroupElement(self.group, self.matrices[i])

    @property
    def elements(self) -> list[GroupElement]:
        return [self.element(i) for i in range(len(self))]

    def with_features(self, features) -> "LiftedFeatureMap":
        return replace(self, features=features)

    def left_translate(self, u: GroupElement) -> "LiftedFeatureMap":
        """Regular-representation action: (g, f) -> (u g, f)."""
        if u.group != self.group:
            raise GroupMismatchError(f"cannot translate {self.group} map by {u.group}")
        return replace(self, matrices=u.matrix[None] @ self.matrices)

    def permuted(self, perm: np.ndarray) -> "LiftedFeatureMap":
        perm = np.asarray(perm)
        feats = self.features
        feats = feats[perm] if isinstance(feats, np.ndarray) else feats.take_rows(perm)
        return LiftedFeatureMap(
            group=self.group,
            matrices=self.matrices[perm],
            features=feats,
            origin_index=self.origin_index[perm],
            stab_index=self.stab_index[perm],
        )

    def canonical_order(self) -> np.ndarray:
        """Indices sorting elements by (origin_index, stab_index)."""
        return np.lexsort((self.stab_index, self.origin_index))

    def pairwise_coords(self, use_log: bool = True) -> np.ndarray:
        """(L, L, d) relative coordinates of all element pairs."""
        return pairwise_coords(self.group, self.matrices, use_log=use_log)


def lift(
    points,
    features,
    group: GroupId,
    num_lift_samples: int = 1,
    rng_seed: int = 0,
    stabiliser: np.ndarray | None = None,
    sampling_mode: str = "stratified",
    section: np.ndarray | None = None,
) -> LiftedFeatureMap:
    """Lift (points, features) onto the group.

    ``group`` may be ``t1/t2/t3`` (trivial stabiliser), ``se2``/``se3``
    (Monte Carlo stabiliser of size ``num_lift_samples``), or ``cyclic(n)``
    (exact lift onto SE(2) matrices with the full C_n rotation subgroup; the
    returned map is tagged SE(2)). ``stabiliser`` overrides sampling with an
    explicit (K, m, m) stack. ``section`` optionally replaces the default
    pure-translation section with explicit (n, m, m) section matrices, one
    per point (they must still map the origin to each point).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] == 0:
        raise EmptyInputError("cannot lift an empty point set")
    features = np.asarray(features)
    if features.ndim == 1:
        features = features[:, None]
    if features.shape[0] != points.shape[0]:
        raise DimensionMismatchError(
            f"{points.shape[0]} points but {features.shape[0]} feature rows"
        )

    if group.kind == "cyclic":
        map_group = SE2
        stab = cyclic_stabiliser_matrices(group.n, SE2)
    elif group.kind in ("so2", "so3"):
        raise GroupMismatchError(f"{group} does not act transitively on point clouds")
    else:
        map_group = group
        stab = (
            np.asarray(stabiliser, dtype=np.float64)
            if stabiliser is not None
            else sample_stabiliser_matrices(
                map_group, num_lift_samples, rng_seed, mode=sampling_mode
            )
        )

    b = map_group.base_dim
    if points.shape[1] != b:
        raise DimensionMismatchError(
            f"{map_group} lifts points in R^{b}, got dim {points.shape[1]}"
        )

    n = points.shape[0]
    if section is None:
        section = np.broadcast_to(
            np.eye(map_group.matrix_dim), (n,) + (map_group.matrix_dim,) * 2
        ).copy()
        section[:, :b, b] = points
    else:
        section = np.asarray(section, dtype=np.float64)

    k = stab.shape[0]
    mats = np.einsum("nij,kjm->nkim", section, stab).reshape(
        n * k, map_group.matrix_dim, map_group.matrix_dim
    )
    origin = np.repeat(np.arange(n), k)
    stab_idx = np.tile(np.arange(k), n)
    feats = np.repeat(features, k, axis=0)
    return LiftedFeatureMap(
        group=map_group,
        matrices=mats,
        features=feats,
        origin_index=origin,
        stab_index=stab_idx,
    )


def validate_lift(fmap: LiftedFeatureMap, points, atol: float = 1e-8) -> None:
    """Check the lift postcondition g . x0 = x_origin for every element."""
    from .groups import act_many

    points = np.asarray(points, dtype=np.float64)
    x0 = np.zeros(fmap.group.base_dim)
    images = act_many(
        fmap.group, fmap.matrices, np.broadcast_to(x0, (len(fmap), x0.size))
    )
    err = np.max(np.abs(images - points[fmap.origin_index]))
    if err > atol:
        raise AssertionError(f"lift postcondition violated: max error {err:.3e}")


def batched_lift_coords(points, features, group: GroupId, use_log: bool = True):
    """Pairwise relative coordinates for a batch of same-size point sets.

    Only groups with deterministic lifts are supported: T(n) (elements are
    the translations themselves) and cyclic(k) (exact lift onto SE(2) with
    the full C_k rotation subgroup). Returns ``(rel, feats)`` where ``rel``
    is (B, L, L, d) and ``feats`` is (B, L, d_f) with rows repeated per
    stabiliser sample.
    """
    points = np.asarray(points, dtype=np.float64)
    feats = np.asarray(features)
    if points.ndim != 3:
        raise DimensionMismatchError("batched lift expects points of shape (B, n, d)")
    B, n, dx = points.shape
    if group.kind == "t":
        if dx != group.n:
            raise DimensionMismatchError(f"{group} lifts points in R^{group.n}")
        rel = points[:, None, :, :] - points[:, :, None, :]
        return rel, feats
    if group.kind != "cyclic":
        raise GroupMismatchError(
            f"batched lifting needs a deterministic lift; {group} is Monte Carlo"
        )
    k = group.n
    phis = 2.0 * np.pi * np.arange(k) / k
    delta = points[:, None, :, :] - points[:, :, None, :]  # (B, i, j, 2)
    ca, sa = np.cos(phis), np.sin(phis)
    # R(-phi_a) applied to delta: (B, i, a, j, 2)
    dx_, dy_ = delta[..., 0], delta[..., 1]
    tx = ca[None, None, :, None] * dx_[:, :, None, :] + sa[None, None, :, None] * dy_[:, :, None, :]
    ty = -sa[None, None, :, None] * dx_[:, :, None, :] + ca[None, None, :, None] * dy_[:, :, None, :]
    # relative rotation angle wrap(phi_b - phi_a), shape (a, b)
    from .groups import _cosc, _sinc, wrap_angle

    theta = wrap_angle(phis[None, :] - phis[:, None])
    if use_log:
        a_c = _sinc(theta)
        b_c = _cosc(theta)
        den = a_c * a_c + b_c * b_c
        # V^-1 = [[a, b], [-b, a]] / (a^2+b^2), applied per (a, b) pair
        A = (a_c / den)[None, None, :, None, :]
        Bc = (b_c / den)[None, None, :, None, :]
        tx_b = tx[..., None]  # (B, i, a, j, 1) broadcast over b
        ty_b = ty[..., None]
        out_x = A * tx_b + Bc * ty_b
        out_y = -Bc * tx_b + A * ty_b
    else:
        out_x = np.broadcast_to(tx[..., None], tx.shape + (k,))
        out_y = np.broadcast_to(ty[..., None], ty.shape + (k,))
    th = np.broadcast_to(theta[None, None, :, None, :], out_x.shape)
    rel = np.stack([out_x, out_y, th], axis=-1)  # (B, i, a, j, b, 3)
    L = n * k
    rel = rel.reshape(B, L, L, 3)  # row index i*k+a, column index j*k+b
    feats_out = np.repeat(feats, k, axis=1)
    return rel, feats_out


def batched_lift_coords_tensor(q, group: GroupId, use_log: bool = True):
    """Differentiable version of :func:`batched_lift_coords`.

    ``q`` is an autodiff tensor of shape (B, n, d); the returned relative
    coordinates are a tensor of shape (B, L, L, algebra_dim) whose gradient
    flows back into ``q``. Rotation-grid factors are constants, so only the
    translational entries carry gradients (they are the only q-dependent
    ones). Needed when the network input positions are themselves being
    differentiated, e.g. force computation from a learned potential.
    """
    from . import autodiff as ad

    B, n, d = q.shape
    q_i = ad.reshape(q, (B, n, 1, d))
    q_j = ad.reshape(q, (B, 1, n, d))
    delta = ad.sub(q_j, q_i)  # (B, i, j, d); rel[i, j] = x_j - x_i
    if group.kind == "t":
        return delta
    if group.kind != "cyclic":
        raise GroupMismatchError(
            f"differentiable batched lifting needs a deterministic lift; got {group}"
        )
    from .groups import _cosc, _rot2, _sinc, wrap_angle

    k = group.n
    phis = 2.0 * np.pi * np.arange(k) / k
    theta = wrap_angle(phis[None, :] - phis[:, None])  # (a, b)
    rot = _rot2(-phis)  # (a, 2, 2): R(-phi_a)
    if use_log:
        a_c, b_c = _sinc(theta), _cosc(theta)
        den = a_c * a_c + b_c * b_c
        vinv = np.zeros((k, k, 2, 2))
        vinv[..., 0, 0] = a_c / den
        vinv[..., 0, 1] = b_c / den
        vinv[..., 1, 0] = -b_c / den
        vinv[..., 1, 1] = a_c / den
        A = np.einsum("abxy,ayz->abxz", vinv, rot)  # (a, b, 2, 2)
    else:
        A = np.broadcast_to(rot[:, None], (k, k, 2, 2)).copy()
    # rel_t[b, i, a, j, c, :] = A[a, c] @ delta[b, i, j, :]
    de = ad.reshape(delta, (B, n, 1, n, 1, 1, d))
    Ac = ad.constant(A.reshape(1, 1, k, 1, k, d, d))
    rel_t = ad.reduce_sum(ad.mul(Ac, de), axis=-1)  # (B, n, k, n, k, 2)
    L = n * k
    rel_t = ad.reshape(rel_t, (B, L, L, 2))
    th = np.broadcast_to(
        np.tile(theta, (n, n)).reshape(1, L, L, 1), (B, L, L, 1)
    ).copy()
    return ad.concat([rel_t, ad.constant(th)], axis=-1)


def _row_rng(rng_seed: int, row: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([rng_seed, row]))


def neighbourhood(
    fmap: LiftedFeatureMap,
    center_index: int,
    radius: float,
    max_size: int,
    rng_seed: int = 0,
) -> np.ndarray:
    """Indices within ``radius`` of the center element, subsampled to ``max_size``.

    Distances use the log-map norm, which is left-invariant, so the selected
    index set is unchanged when every element is left-translated (same seed).
    The center is always kept.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    rel = relative_coords_many(
        fmap.group, fmap.matrices[center_index][None], fmap.matrices
    )
    dist = np.linalg.norm(rel, axis=-1)
    dist[center_index] = 0.0
    candidates = np.flatnonzero(dist <= radius)
    if candidates.size <= max_size:
        return np.sort(candidates)
    others = candidates[candidates != center_index]
    rng = _row_rng(rng_seed, center_index)
    chosen = rng.choice(others, size=max_size - 1, replace=False)
    return np.sort(np.concatenate([[center_index], chosen]))


def neighbourhood_mask(
    fmap: LiftedFeatureMap,
    radius: float = np.inf,
    max_size: int | None = None,
    rng_seed: int = 0,
) -> np.ndarray:
    """Dense boolean (L, L) mask of neighbourhood membership per query row."""
    L = len(fmap)
    if not np.isfinite(radius) and max_size is None:
        return np.ones((L, L), dtype=bool)
    mask = np.zeros((L, L), dtype=bool)
    if np.isfinite(radius):
        dist = np.linalg.norm(fmap.pairwise_coords(use_log=True), axis=-1)
        within = dist <= radius
    else:
        within = np.ones((L, L), dtype=bool)
    np.fill_diagonal(within, True)
    for i in range(L):
        candidates = np.flatnonzero(within[i])
        if max_size is not None and candidates.size > max_size:
            others = candidates[candidates != i]
            rng = _row_rng(rng_seed, i)
            chosen = rng.choice(others, size=max_size - 1, replace=False)
            candidates = np.concatenate([[i], chosen])
        mask[i, candidates] = True
    return mask
