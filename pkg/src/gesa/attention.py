"""Self-attention over lifted group elements.

The layer attends across the elements of a lifted feature map. Unnormalised
weights combine a content kernel on feature pairs with a location kernel
that sees the pair only through the relative coordinates nu[log(g^-1 g')]
(or the canonical flattened coordinates), which is what makes the layer
commute with left translation of the elements.

Kernel design space:

* content: ``dot_product`` (per-head scalar), ``concat``,
  ``linear_concat_linear``;
* location: ``plain`` (identity embedding) or ``mlp``;
* combination: ``additive``, ``multiplicative`` (both need scalar kernels)
  or ``mlp`` (vector kernels allowed);
* normalisation: ``softmax`` rows, or ``constant`` division by the realized
  neighbourhood size (the unbiased choice under Monte Carlo lifting).

Multi-head assembly splits W^Q/W^K/W^V per head and maps the stacked head
outputs through W^O. Group elements pass through a layer unchanged.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, EmptyInputError
from .groups import GroupId
from .lifting import LiftedFeatureMap, lift, neighbourhood_mask
from .nn import MLP, Linear, ParameterStore

CONTENT_KINDS = ("dot_product", "concat", "linear_concat_linear")
LOCATION_KINDS = ("plain", "mlp")
COMBINE_KINDS = ("additive", "mlp", "multiplicative")
NORM_KINDS = ("softmax", "constant")


@dataclass
class AttentionConfig:
    content_kind: str = "dot_product"
    location_kind: str = "mlp"
    combine_kind: str = "additive"
    norm_kind: str = "constant"
    heads: int = 4
    feature_dim: int = 32
    location_mlp_widths: tuple = (16, 16)
    use_log_map: bool = True
    # auxiliary knobs (not part of the core design space)
    location_activation: str = "swish"
    location_scale: float = 1.0
    location_out_dim: int = 8
    content_dim: int = 16
    combine_mlp_widths: tuple = (16,)

    def validate(self) -> None:
        if self.content_kind not in CONTENT_KINDS:
            raise ConfigError(f"unknown content_kind {self.content_kind!r}")
        if self.location_kind not in LOCATION_KINDS:
            raise ConfigError(f"unknown location_kind {self.location_kind!r}")
        if self.combine_kind not in COMBINE_KINDS:
            raise ConfigError(f"unknown combine_kind {self.combine_kind!r}")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"unknown norm_kind {self.norm_kind!r}")
        if self.feature_dim % self.heads != 0:
            raise ConfigError(
                f"heads={self.heads} must divide feature_dim={self.feature_dim}"
            )
        if self.combine_kind in ("additive", "multiplicative"):
            if self.content_kind != "dot_product":
                raise ConfigError(
                    f"{self.combine_kind} combination needs a scalar content "
                    f"kernel (dot_product), got {self.content_kind}"
                )
            if self.location_kind == "plain":
                raise ConfigError(
                    f"{self.combine_kind} combination needs a scalar location "
                    "kernel; 'plain' produces a vector (use combine_kind='mlp')"
                )

    @property
    def head_dim(self) -> int:
        return self.feature_dim // self.heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, doc: str) -> "AttentionConfig":
        raw = json.loads(doc)
        for key in ("location_mlp_widths", "combine_mlp_widths"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


class GroupSelfAttention:
    """One equivariant self-attention layer over lifted elements."""

    def __init__(self, store: ParameterStore, name: str, config: AttentionConfig,
                 algebra_dim: int):
        config.validate()
        self.config = config
        self.algebra_dim = algebra_dim
        D = config.feature_dim
        self.wq = Linear(store, f"{name}.wq", D, D, bias=False)
        self.wk = Linear(store, f"{name}.wk", D, D, bias=False)
        self.wv = Linear(store, f"{name}.wv", D, D, bias=False)
        self.wo = Linear(store, f"{name}.wo", D, D, bias=False)

        content_out = {
            "dot_product": 1,
            "concat": 2 * config.head_dim,
            "linear_concat_linear": config.content_dim,
        }[config.content_kind]
        if config.content_kind == "linear_concat_linear":
            self.w_content = Linear(
                store, f"{name}.wc", 2 * config.head_dim, config.content_dim
            )
        else:
            self.w_content = None

        if config.location_kind == "mlp":
            loc_out = (
                config.heads
                if config.combine_kind in ("additive", "multiplicative")
                else config.location_out_dim
            )
            self.location_mlp = MLP(
                store,
                f"{name}.loc",
                algebra_dim,
                config.location_mlp_widths,
                loc_out,
                activation=config.location_activation,
            )
            self._loc_dim = loc_out
        else:
            self.location_mlp = None
            self._loc_dim = algebra_dim

        if config.combine_kind == "mlp":
            loc_per_head = self._loc_dim
            self.combine_mlp = MLP(
                store,
                f"{name}.comb",
                content_out + loc_per_head,
                config.combine_mlp_widths,
                1,
            )
        else:
            self.combine_mlp = None

    # -- kernel pieces (exposed for direct testing) -------------------------

    def content_attention(self, f_g: Tensor, f_g2: Tensor) -> Tensor:
        """Content kernel for a single pair of feature vectors.

        Returns (heads,) for dot_product, (heads, 2*head_dim) for concat and
        (heads, content_dim) for linear_concat_linear.
        """
        cfg = self.config
        q = ad.reshape(self.wq(ad.reshape(f_g, (1, -1))), (cfg.heads, cfg.head_dim))
        k = ad.reshape(self.wk(ad.reshape(f_g2, (1, -1))), (cfg.heads, cfg.head_dim))
        if cfg.content_kind == "dot_product":
            scale = 1.0 / np.sqrt(cfg.head_dim)
            return ad.mul(ad.reduce_sum(ad.mul(q, k), axis=-1), ad.constant(scale))
        cat = ad.concat([q, k], axis=-1)
        if cfg.content_kind == "concat":
            return cat
        return self.w_content(cat)

    def location_attention(self, rel) -> Tensor:
        """Location kernel of relative coordinates; sees only g^{-1}g'."""
        rel_t = rel if isinstance(rel, Tensor) else ad.constant(np.asarray(rel))
        if self.location_mlp is None:
            return rel_t
        scaled = ad.mul(rel_t, ad.constant(1.0 / self.config.location_scale))
        if scaled.ndim == 1:
            return ad.reshape(self.location_mlp(ad.reshape(scaled, (1, -1))), (-1,))
        return self.location_mlp(scaled)

    def combine(self, kc_out: Tensor, kl_out: Tensor) -> Tensor:
        cfg = self.config
        if cfg.combine_kind == "additive":
            return ad.add(kc_out, kl_out)
        if cfg.combine_kind == "multiplicative":
            return ad.mul(kc_out, kl_out)
        cat = ad.concat([kc_out, kl_out], axis=-1)
        return ad.reshape(self.combine_mlp(cat), kc_out.shape[:-1])

    # -- full layer ----------------------------------------------------------

    def _location_pairs(self, rel) -> Tensor:
        """Location kernel over a full pair grid, (B0, L, L, loc_dim).

        The MLP runs on a flattened pair axis (one GEMM instead of a stack
        of tiny ones).
        """
        rel_t = rel if isinstance(rel, Tensor) else ad.constant(np.asarray(rel))
        B0, L = rel_t.shape[0], rel_t.shape[1]
        if self.location_mlp is None:
            return rel_t
        flat = ad.reshape(rel_t, (B0 * L * L, rel_t.shape[-1]))
        out = self.location_mlp(
            ad.mul(flat, ad.constant(1.0 / self.config.location_scale))
        )
        return ad.reshape(out, (B0, L, L, self._loc_dim))

    def _pair_logits(self, feats: Tensor, rel) -> Tensor:
        """Unnormalised weights alpha over all pairs: (B, L, L, M)."""
        cfg = self.config
        B, L, D = feats.shape
        M, hd = cfg.heads, cfg.head_dim

        if cfg.content_kind == "dot_product":
            q = ad.transpose(ad.reshape(self.wq(feats), (B, L, M, hd)), (0, 2, 1, 3))
            k = ad.transpose(ad.reshape(self.wk(feats), (B, L, M, hd)), (0, 2, 3, 1))
            dots = ad.mul(ad.matmul(q, k), ad.constant(1.0 / np.sqrt(hd)))
            kc = ad.transpose(dots, (0, 2, 3, 1))  # (B, L, L, M)
        else:
            q = ad.reshape(self.wq(feats), (B, L, 1, M, hd))
            k = ad.reshape(self.wk(feats), (B, 1, L, M, hd))
            qb = ad.broadcast_to(q, (B, L, L, M, hd))
            kb = ad.broadcast_to(k, (B, L, L, M, hd))
            kc = ad.concat([qb, kb], axis=-1)
            if cfg.content_kind == "linear_concat_linear":
                kc = self.w_content(kc)  # (B, L, L, M, d_s)

        kl = self._location_pairs(rel)  # (B0, L, L, loc_dim)
        if cfg.combine_kind in ("additive", "multiplicative"):
            alpha = self.combine(kc, kl)  # both (B, L, L, M)
        else:
            if kc.ndim == 4:  # scalar content per head -> add trailing axis
                kc = ad.reshape(kc, (B, L, L, M, 1))
            klb = ad.broadcast_to(
                ad.reshape(kl, (kl.shape[0], L, L, 1, self._loc_dim)),
                (B, L, L, M, self._loc_dim),
            )
            cat = ad.concat([kc, klb], axis=-1)
            alpha = ad.reshape(self.combine_mlp(cat), (B, L, L, M))
        return alpha

    def forward(self, feats: Tensor, rel: np.ndarray, mask: np.ndarray | None = None,
                return_weights: bool = False):
        """Apply the layer to features (B, L, D) with relative coords (B, L, L, d).

        ``mask`` is a boolean (B, L, L) (or (L, L)) neighbourhood indicator;
        ``None`` means full attention.
        """
        cfg = self.config
        squeeze = feats.ndim == 2
        if squeeze:
            feats = ad.reshape(feats, (1,) + feats.shape)
            if mask is not None and mask.ndim == 2:
                mask = mask[None]
        B, L, D = feats.shape
        M, hd = cfg.heads, cfg.head_dim
        if isinstance(rel, Tensor):
            if rel.ndim == 3:
                rel = ad.reshape(rel, (1,) + rel.shape)
        else:
            if rel.ndim == 3:
                rel = np.broadcast_to(rel[None], (B,) + rel.shape)
        if mask is None:
            mask = np.ones((B, L, L), dtype=bool)
        elif mask.ndim == 2:
            mask = np.broadcast_to(mask, (B, L, L))

        alpha = self._pair_logits(feats, rel)
        mask4 = mask[..., None]
        if cfg.norm_kind == "softmax":
            w = ad.masked_softmax(alpha, np.broadcast_to(mask4, alpha.shape), axis=2)
        else:
            counts = mask.sum(axis=2, keepdims=True)[..., None]  # (B, L, 1, 1)
            w = ad.mul(alpha, ad.constant(mask4.astype(alpha.dtype) / counts))

        v = ad.transpose(ad.reshape(self.wv(feats), (B, L, M, hd)), (0, 2, 1, 3))
        wt = ad.transpose(w, (0, 3, 1, 2))  # (B, M, L, L)
        heads = ad.matmul(wt, v)  # (B, M, L, hd)
        merged = ad.reshape(ad.transpose(heads, (0, 2, 1, 3)), (B, L, D))
        out = self.wo(merged)
        if squeeze:
            out = ad.reshape(out, (L, D))
        if return_weights:
            return out, w.data
        return out

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def lie_self_attention(
    layer: GroupSelfAttention,
    fmap: LiftedFeatureMap,
    radius: float = np.inf,
    max_size: int | None = None,
    rng_seed: int = 0,
    return_weights: bool = False,
):
    """Run one attention layer on a lifted feature map.

    Neighbourhoods are selected with the left-invariant log-map distance and
    subsampled to ``max_size`` (deterministic per seed); elements pass
    through unchanged.
    """
    if len(fmap) == 0:
        raise EmptyInputError("attention over an empty feature map")
    rel = fmap.pairwise_coords(use_log=layer.config.use_log_map)
    mask = neighbourhood_mask(fmap, radius=radius, max_size=max_size, rng_seed=rng_seed)
    feats = fmap.features
    if not isinstance(feats, Tensor):
        feats = ad.constant(np.asarray(feats, dtype=ad.get_default_dtype()))
    out = layer.forward(feats, rel, mask, return_weights=return_weights)
    if return_weights:
        out, weights = out
        return fmap.with_features(out), weights
    return fmap.with_features(out)


def invariance_error_probe(
    model,
    points: np.ndarray,
    features: np.ndarray,
    group: GroupId,
    num_transforms: int = 10,
    lift_samples: int = 1,
    rng_seed: int = 0,
) -> dict:
    """Max-abs logit deviation between original and transformed inputs.

    ``model`` must expose ``logits(points, features, lift_samples,
    lift_seed)``. Each trial draws a fresh group transform; the lift seed is
    shared between the paired evaluations. Returns median/IQR statistics.
    """
    from .groups import act_many, random_elements

    errors = []
    for trial in range(num_transforms):
        seed = rng_seed + 7919 * trial
        u = random_elements(group, 1, seed + 1)[0]
        base = model.logits(points, features, lift_samples=lift_samples, lift_seed=seed)
        moved_pts = act_many(group, u[None], points)
        moved = model.logits(
            moved_pts, features, lift_samples=lift_samples, lift_seed=seed
        )
        errors.append(float(np.max(np.abs(moved - base))))
    errors = np.asarray(errors)
    return {
        "errors": errors,
        "median": float(np.median(errors)),
        "q25": float(np.percentile(errors, 25)),
        "q75": float(np.percentile(errors, 75)),
    }
