"""Synthetic 2-D constellation counting task.

Each example scatters 0-2 instances of four patterns (triangle, square,
pentagon, L) with random size, orientation and position; the labels are the
per-pattern counts, which are invariant to any rigid motion of the whole
point cloud. Point features are constant 1.

Generator conventions (this module owns them): pattern templates have unit
circumradius, sizes are uniform in [0.5, 1.5], centers uniform in [-5, 5]^2
with a minimum center separation of r_i + r_j + 0.5 between placed shapes,
and examples with zero placed shapes are rejected (an empty point cloud
cannot be lifted).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .groups import SE2, act_many, random_elements

PATTERN_ORDER = ("triangle", "square", "pentagon", "L")
MAX_COUNT = 2
WORKSPACE = 5.0
MIN_SEPARATION = 0.5
SIZE_RANGE = (0.5, 1.5)


def _polygon(k: int) -> np.ndarray:
    ang = np.pi / 2 + 2.0 * np.pi * np.arange(k) / k
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _l_shape() -> np.ndarray:
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [1.0, 0.0]])
    pts = pts - pts.mean(axis=0)
    return pts / np.max(np.linalg.norm(pts, axis=1))


TEMPLATES = {
    "triangle": _polygon(3),
    "square": _polygon(4),
    "pentagon": _polygon(5),
    "L": _l_shape(),
}


@dataclass
class ConstellationExample:
    points: np.ndarray  # (K, 2)
    labels: np.ndarray  # (4,) counts per pattern, each in {0, 1, 2}
    seed: int

    @property
    def features(self) -> np.ndarray:
        return np.ones((self.points.shape[0], 1))


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _place_shapes(rng: np.random.Generator):
    counts = rng.integers(0, MAX_COUNT + 1, size=len(PATTERN_ORDER))
    if counts.sum() == 0:
        return None
    placed_pts = []
    centers, radii = [], []
    for name, c in zip(PATTERN_ORDER, counts):
        for _ in range(int(c)):
            size = rng.uniform(*SIZE_RANGE)
            theta = rng.uniform(0.0, 2.0 * np.pi)
            for _attempt in range(200):
                center = rng.uniform(-WORKSPACE, WORKSPACE, size=2)
                ok = all(
                    np.linalg.norm(center - c0) >= size + r0 + MIN_SEPARATION
                    for c0, r0 in zip(centers, radii)
                )
                if ok:
                    break
            else:
                return None  # could not pack; caller resamples
            centers.append(center)
            radii.append(size)
            placed_pts.append(TEMPLATES[name] @ _rot(theta).T * size + center)
    return np.concatenate(placed_pts, axis=0), counts


def generate_constellation(count: int, rng_seed: int = 0, augment: str = "none"):
    """Generate ``count`` examples; ``augment`` applies a fresh random
    transform per example (labels unchanged): 'none', 't2' or 'se2'."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if augment not in ("none", "t2", "se2"):
        raise ValueError(f"unknown augment mode {augment!r}")
    examples = []
    for i in range(count):
        seed_seq = np.random.SeedSequence([rng_seed, i])
        rng = np.random.default_rng(seed_seq)
        placed = None
        while placed is None:
            placed = _place_shapes(rng)
        pts, counts = placed
        if augment == "t2":
            pts = pts + rng.uniform(-WORKSPACE, WORKSPACE, size=2)
        elif augment == "se2":
            u = _rot(rng.uniform(0.0, 2.0 * np.pi))
            pts = pts @ u.T + rng.uniform(-WORKSPACE, WORKSPACE, size=2)
        examples.append(
            ConstellationExample(points=pts, labels=counts.astype(int), seed=int(i))
        )
    return examples


def save_jsonl(examples, path) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "points": ex.points.tolist(),
                        "labels": ex.labels.tolist(),
                        "seed": ex.seed,
                    }
                )
                + "\n"
            )


def load_jsonl(path):
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(
                ConstellationExample(
                    points=np.asarray(rec["points"], dtype=np.float64),
                    labels=np.asarray(rec["labels"], dtype=int),
                    seed=rec["seed"],
                )
            )
    return out


def save_npz(examples, path) -> None:
    """Binary variant of the JSON-lines schema (ragged points flattened)."""
    lengths = np.array([ex.points.shape[0] for ex in examples])
    np.savez_compressed(
        path,
        points=np.concatenate([ex.points for ex in examples], axis=0),
        lengths=lengths,
        labels=np.stack([ex.labels for ex in examples]),
        seeds=np.array([ex.seed for ex in examples]),
    )


def load_npz(path):
    raw = np.load(path)
    offsets = np.concatenate([[0], np.cumsum(raw["lengths"])])
    out = []
    for i in range(len(raw["lengths"])):
        out.append(
            ConstellationExample(
                points=raw["points"][offsets[i] : offsets[i + 1]],
                labels=raw["labels"][i],
                seed=int(raw["seeds"][i]),
            )
        )
    return out
