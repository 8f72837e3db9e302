from .tape import (
    OP_KINDS,
    NonFiniteError,
    Node,
    ShapeError,
    Tape,
    Tensor,
    backward,
    forward,
)
from .optim import AdamState, adam_step

__all__ = [
    "OP_KINDS",
    "NonFiniteError",
    "Node",
    "ShapeError",
    "Tape",
    "Tensor",
    "backward",
    "forward",
    "AdamState",
    "adam_step",
]
