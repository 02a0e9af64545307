"""Finite-group equivariant neural networks (FGNN) with a checkers test bed."""

from .groups import (
    FiniteGroup,
    GroupElement,
    SpatialAction,
    close_generators,
    dihedral_group,
    flip_group,
    klein_group,
    trivial_group,
    verify_axioms,
)
from .equivariant import (
    MoveDropSpec,
    StackedTensor,
    WrappedLayer,
    drop_identity,
    drop_sum,
    lift,
    merge,
    move_drop,
    t_apply,
    wrap_forward,
)

__version__ = "0.1.0"

__all__ = [
    "FiniteGroup", "GroupElement", "SpatialAction", "close_generators", "dihedral_group", "flip_group",
    "klein_group", "trivial_group", "verify_axioms", "MoveDropSpec", "StackedTensor", "WrappedLayer",
    "drop_identity", "drop_sum", "lift", "merge", "move_drop", "t_apply", "wrap_forward",
]
