"""Group-equivariant self-attention toolkit.

Lie group numerics (exp/log/coset lifting), a small reverse-mode autodiff
engine, equivariant attention and network blocks, a Monte Carlo group
convolution baseline, and two desk-scale tasks (constellation counting and
Hamiltonian spring dynamics) with an audit-oriented CLI.
"""

__version__ = "0.1.0"

from . import errors
from .groups import (
    SE2,
    SE3,
    SO2,
    SO3,
    T1,
    T2,
    T3,
    AlgebraVector,
    GroupElement,
    GroupId,
    SpatialPoint,
    act,
    compose,
    cyclic,
    distance,
    exp_map,
    identity,
    inverse,
    log_map,
    parse_group,
    relative_coords,
    rotation,
    sample_stabiliser,
    translation,
)

__all__ = [
    "errors",
    "GroupId",
    "GroupElement",
    "AlgebraVector",
    "SpatialPoint",
    "T1",
    "T2",
    "T3",
    "SO2",
    "SE2",
    "SO3",
    "SE3",
    "cyclic",
    "parse_group",
    "identity",
    "translation",
    "rotation",
    "compose",
    "inverse",
    "act",
    "exp_map",
    "log_map",
    "relative_coords",
    "distance",
    "sample_stabiliser",
]
