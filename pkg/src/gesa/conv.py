"""Monte Carlo group convolution: naive evaluation and the PointConv trick.

The kernel is matrix-valued: k(g^-1 g') = reshape(H M(g^-1 g'), (d_out, d_v))
where M is the final hidden activation of a small MLP of the relative
coordinates and H is its last linear layer. Outputs average k(g^-1 g') f(g')
over the neighbourhood.

The naive path materialises every kernel matrix:
O(|G_f| * n * d_out * d_v) memory. The PointConv reordering sums Kronecker
products M (x) f across the neighbourhood first and applies H once:
O(|G_f| * n * d_mid + d_out * d_v * d_mid) memory, identical output up to
summation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, EmptyInputError
from .lifting import LiftedFeatureMap, neighbourhood_mask
from .nn import MLP, Linear, ParameterStore


@dataclass
class ConvConfig:
    d_v: int = 8
    d_out: int = 8
    kernel_mlp_widths: tuple = (16, 8)  # last entry is d_mid
    radius: float = np.inf
    max_nbhd: int | None = None
    activation: str = "swish"

    def validate(self) -> None:
        if not self.kernel_mlp_widths or self.kernel_mlp_widths[-1] < 1:
            raise ConfigError("kernel_mlp_widths must end with d_mid >= 1")

    @property
    def d_mid(self) -> int:
        return self.kernel_mlp_widths[-1]


class GroupConvolution:
    """One group-convolution layer; both evaluation orders share parameters."""

    def __init__(self, store: ParameterStore, name: str, config: ConvConfig,
                 algebra_dim: int):
        config.validate()
        self.config = config
        self.activation = {"swish": ad.swish, "relu": ad.relu}[config.activation]
        widths = config.kernel_mlp_widths
        # hidden stack producing M(.) in R^{d_mid} (activation applied to the
        # last hidden layer too: M are activations, H is the final linear map)
        self.m_net = MLP(store, f"{name}.m", algebra_dim, widths[:-1],
                         config.d_mid, activation=config.activation)
        self.h = Linear(store, f"{name}.h", config.d_mid,
                        config.d_out * config.d_v, bias=False)

    def _mid(self, rel: np.ndarray) -> Tensor:
        rel_t = ad.constant(rel.astype(ad.get_default_dtype()))
        return self.activation(self.m_net(rel_t))

    def kernel_matrices(self, rel: np.ndarray) -> Tensor:
        """Dense kernels reshape(H M(rel), (d_out, d_v)) for every pair."""
        cfg = self.config
        flat = self.h(self._mid(rel))
        return ad.reshape(flat, rel.shape[:-1] + (cfg.d_out, cfg.d_v))

    def naive(self, feats: Tensor, rel: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        """Materialise every kernel matrix, then average over the neighbourhood."""
        squeeze = feats.ndim == 2
        if squeeze:
            feats = ad.reshape(feats, (1,) + feats.shape)
            rel = rel[None] if rel.ndim == 3 else rel
            if mask is not None and mask.ndim == 2:
                mask = mask[None]
        B, L, _ = feats.shape
        if mask is None:
            mask = np.ones((B, L, L), dtype=bool)
        k = self.kernel_matrices(rel)  # (B, L, L, d_out, d_v)
        f = ad.reshape(feats, (B, 1, L, 1, self.config.d_v))
        kf = ad.reduce_sum(ad.mul(k, f), axis=-1)  # (B, L, L, d_out)
        counts = mask.sum(axis=2, keepdims=True)
        w = ad.constant((mask / counts)[..., None].astype(feats.dtype))
        out = ad.reduce_sum(ad.mul(kf, w), axis=2)  # (B, L, d_out)
        return ad.reshape(out, (L, self.config.d_out)) if squeeze else out

    def pointconv(self, feats: Tensor, rel: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        """Sum Kronecker products across the neighbourhood, then apply H."""
        cfg = self.config
        squeeze = feats.ndim == 2
        if squeeze:
            feats = ad.reshape(feats, (1,) + feats.shape)
            rel = rel[None] if rel.ndim == 3 else rel
            if mask is not None and mask.ndim == 2:
                mask = mask[None]
        B, L, _ = feats.shape
        if mask is None:
            mask = np.ones((B, L, L), dtype=bool)
        counts = mask.sum(axis=2, keepdims=True)
        m = self._mid(rel)  # (B, L, L, d_mid)
        m = ad.mul(m, ad.constant((mask / counts)[..., None].astype(feats.dtype)))
        me = ad.reshape(m, (B, L, L, cfg.d_mid, 1))
        fe = ad.reshape(feats, (B, 1, L, 1, cfg.d_v))
        s = ad.reduce_sum(ad.mul(me, fe), axis=2)  # (B, L, d_mid, d_v)
        s_flat = ad.reshape(s, (B, L, cfg.d_mid * cfg.d_v))
        # H rows are indexed o*d_v + v; rearrange W (d_mid, d_out*d_v) so the
        # contraction runs over the flattened (m, v) axis
        w = ad.reshape(self.h.W, (cfg.d_mid, cfg.d_out, cfg.d_v))
        w = ad.reshape(ad.transpose(w, (1, 0, 2)), (cfg.d_out, cfg.d_mid * cfg.d_v))
        out = ad.matmul(s_flat, ad.swap_last2(w))
        return ad.reshape(out, (L, cfg.d_out)) if squeeze else out

    def kernel_buffer_elements(self, L: int, nbhd: int, batch: int = 1) -> dict:
        """Analytic allocation counts for the kernel buffers of both paths."""
        cfg = self.config
        return {
            "naive": batch * L * nbhd * cfg.d_out * cfg.d_v,
            "pointconv": batch * L * nbhd * cfg.d_mid + cfg.d_out * cfg.d_v * cfg.d_mid,
        }


def conv_average(kernels: Tensor, feats: Tensor, mask: np.ndarray) -> Tensor:
    """Masked neighbourhood average of kernel-matrix/feature products.

    ``kernels`` is (L, L, d_out, d_v); used directly by tests that replace
    the kernel MLP with hand-built matrices (e.g. delta kernels).
    """
    L = kernels.shape[0]
    f = ad.reshape(feats, (1, L, 1, feats.shape[-1]))
    kf = ad.reduce_sum(ad.mul(kernels, f), axis=-1)  # (L, L, d_out)
    counts = mask.sum(axis=1, keepdims=True)
    w = ad.constant((mask / counts)[..., None].astype(kf.dtype))
    return ad.reduce_sum(ad.mul(kf, w), axis=1)


def _map_forward(layer: GroupConvolution, fmap: LiftedFeatureMap, path: str,
                 radius: float, max_size: int | None, rng_seed: int) -> LiftedFeatureMap:
    if len(fmap) == 0:
        raise EmptyInputError("convolution over an empty feature map")
    rel = fmap.pairwise_coords(use_log=True)
    mask = neighbourhood_mask(fmap, radius=radius, max_size=max_size, rng_seed=rng_seed)
    feats = fmap.features
    if not isinstance(feats, Tensor):
        feats = ad.constant(np.asarray(feats, dtype=ad.get_default_dtype()))
    out = getattr(layer, path)(feats, rel, mask)
    return fmap.with_features(out)


def group_conv_naive(layer: GroupConvolution, fmap: LiftedFeatureMap,
                     radius: float = np.inf, max_size: int | None = None,
                     rng_seed: int = 0) -> LiftedFeatureMap:
    return _map_forward(layer, fmap, "naive", radius, max_size, rng_seed)


def group_conv_pointconv(layer: GroupConvolution, fmap: LiftedFeatureMap,
                         radius: float = np.inf, max_size: int | None = None,
                         rng_seed: int = 0) -> LiftedFeatureMap:
    return _map_forward(layer, fmap, "pointconv", radius, max_size, rng_seed)


class GroupConvNetwork:
    """Baseline stack: lift -> [conv + batch norm + swish] -> pool -> head.

    Mirrors the attention network's interface so the two train identically
    on the dynamics task.
    """

    def __init__(self, group, num_layers: int, d_v: int, d_in: int,
                 num_outputs: int, kernel_mlp_widths=(16, 8), seed: int = 0):
        from .blocks import EquivariantBatchNorm
        from .groups import GroupId

        self.group = group
        self.map_group = GroupId("se2") if group.kind == "cyclic" else group
        self.num_outputs = num_outputs
        self.seed = seed
        self.store = ParameterStore(seed=seed)
        self.embed = Linear(self.store, "embed", d_in, d_v)
        self.blocks = []
        for i in range(num_layers):
            conv = GroupConvolution(
                self.store, f"conv{i}",
                ConvConfig(d_v=d_v, d_out=d_v, kernel_mlp_widths=tuple(kernel_mlp_widths)),
                self.map_group.algebra_dim,
            )
            bn = EquivariantBatchNorm(self.store, f"bn{i}", d_v)
            self.blocks.append((conv, bn))
        self.head = Linear(self.store, "head", d_v, num_outputs)

    def trunk(self, feats: Tensor, rel: np.ndarray, mask=None, training=True) -> Tensor:
        x = self.embed(feats)
        for conv, bn in self.blocks:
            x = ad.add(x, ad.swish(bn(conv.pointconv(x, rel, mask), training=training)))
        return x

    def forward_batch(self, points, features, training: bool = True) -> Tensor:
        from .lifting import batched_lift_coords

        rel, feats = batched_lift_coords(points, features, self.group)
        feats = ad.constant(np.asarray(feats, dtype=ad.get_default_dtype()))
        x = self.trunk(feats, rel.astype(ad.get_default_dtype()), training=training)
        return self.head(ad.reduce_mean(x, axis=1))

    def num_parameters(self) -> int:
        return self.store.num_scalars()
