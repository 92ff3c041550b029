"""Parameter containers, linear/MLP layers, and parameter serialization.

Initialization is uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for all linear
maps, drawn from the store's seeded generator in registration order, so a
seed pins the full parameter trajectory.

The on-disk parameter format is a flat container: an 8-byte magic string,
a little-endian uint64 header length, a JSON header (seed, config hash,
record table) and the raw little-endian buffers in record order.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import MissingGradientError

MAGIC = b"GESAPAR1"


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable configuration object."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class ParameterStore:
    """Named, ordered map of trainable tensors."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def parameter(self, name: str, shape, fan_in: int | None = None, zero=False) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if zero:
            data = np.zeros(shape)
        else:
            fan = fan_in if fan_in is not None else (shape[0] if shape else 1)
            bound = 1.0 / np.sqrt(max(fan, 1))
            data = self._rng.uniform(-bound, bound, size=shape)
        t = Tensor(data.astype(ad.get_default_dtype()), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def num_scalars(self) -> int:
        return sum(t.size for t in self._params.values())

    def gradients(self, loss: Tensor, create_graph=False) -> dict[str, Tensor]:
        """Gradient map name -> Tensor for every parameter in the store."""
        gs = ad.grad(loss, self.tensors(), create_graph=create_graph)
        return dict(zip(self.names(), gs))

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in checkpoint")
            arr = np.asarray(arrays[name])
            if arr.shape != tensor.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {tensor.shape}"
                )
            tensor.data = arr.astype(tensor.dtype)


def save_params(store: ParameterStore, path, config=None, extra=None) -> None:
    records, payload = [], []
    offset = 0
    for name, t in store.items():
        buf = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        records.append(
            {"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(buf)}
        )
        payload.append(buf)
        offset += len(buf)
    header = {
        "format": MAGIC.decode(),
        "seed": store.seed,
        "config_hash": config_hash(config) if config is not None else None,
        "extra": extra or {},
        "records": records,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for buf in payload:
            fh.write(buf)


def load_params(path):
    """Read a parameter container; returns (arrays dict, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"not a parameter container: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        body = fh.read()
    arrays = {}
    for rec in header["records"]:
        raw = body[rec["offset"] : rec["offset"] + rec["nbytes"]]
        arrays[rec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).copy()
    return arrays, header


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

ACTIVATIONS = {
    "swish": ad.swish,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "square": ad.square,
    "identity": lambda x: x,
}


class Linear:
    """Affine map on the trailing axis; weight stored (in, out)."""

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int,
                 bias: bool = True, zero_init: bool = False):
        self.W = store.parameter(f"{name}.W", (d_in, d_out), fan_in=d_in, zero=zero_init)
        self.b = (
            store.parameter(f"{name}.b", (d_out,), fan_in=d_in, zero=zero_init)
            if bias
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.W)
        if self.b is not None:
            out = ad.add(out, self.b)
        return out


class MLP:
    """Feed-forward stack on the trailing axis.

    ``widths`` are the hidden widths; an empty tuple yields a single linear
    map. ``zero_init_last`` zeroes the final layer (output is exactly zero
    at initialization, a useful neutral element for additive kernels).
    """

    def __init__(self, store: ParameterStore, name: str, d_in: int, widths,
                 d_out: int, activation: str = "swish", zero_init_last: bool = False):
        self.activation = ACTIVATIONS[activation]
        self.layers = []
        prev = d_in
        for i, w in enumerate(widths):
            self.layers.append(Linear(store, f"{name}.h{i}", prev, w))
            prev = w
        self.layers.append(
            Linear(store, f"{name}.out", prev, d_out, zero_init=zero_init_last)
        )

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = self.activation(layer(x))
        return self.layers[-1](x)


def check_gradient_map(store: ParameterStore, grads: dict) -> None:
    missing = [n for n in store.names() if n not in grads]
    if missing:
        raise MissingGradientError(f"gradients missing for {missing}")
