"""Attention score quantization against a learnable scalar codebook.

Each continuous attention score snaps to its nearest anchor value
(lowest index on exact ties). The forward pass hands the quantized map
to the encoder; the backward pass treats the snap as identity toward the
continuous map (straight-through), while the anchors learn only through
the quantization objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ContractError, DimensionError
from . import tensor as T
from .tensor import Parameter, Tensor, _record


class AnchorSet:
    """The Q trainable scalar anchors {v_i}."""

    def __init__(self, values: Parameter):
        if values.data.ndim != 1 or values.data.size < 1:
            raise ConfigError("anchor set must be a non-empty vector")
        self.values = values

    @property
    def q(self) -> int:
        return self.values.data.size

    def as_array(self) -> np.ndarray:
        return self.values.data


def init_anchors(q: int, dtype=np.float64) -> AnchorSet:
    """Anchors evenly dividing [0, 1]; a single anchor sits at 0.5."""
    if q < 1:
        raise ConfigError(f"anchor count must be >= 1, got {q}")
    values = np.array([0.5]) if q == 1 else np.linspace(0.0, 1.0, q)
    return AnchorSet(Parameter(values.astype(dtype), name="anchors", decay=False))


@dataclass
class AttentionMaps:
    """Continuous map a, its quantized counterpart a_q, and the anchor index per cell.

    ``quantized`` is the differentiable gather values[assignment]: its
    gradient reaches the anchors (used by the quantization objective). The
    encoder path must NOT use it directly but through ``straight_through``.
    """

    continuous: Tensor
    quantized: Tensor
    assignment: np.ndarray


def quantize(a: Tensor, anchors: AnchorSet) -> AttentionMaps:
    """Nearest-anchor lookup per cell; exact ties break to the lowest index."""
    values = anchors.as_array()
    if values.size < 1:
        raise ConfigError("cannot quantize against an empty anchor set")
    flat = a.data.reshape(-1)
    # argmin over |a - v_j| takes the first minimum, which is the lowest index
    assignment_flat = np.abs(flat[:, None] - values[None, :]).argmin(axis=1)
    assignment = assignment_flat.reshape(a.data.shape)
    quantized = T.reshape(T.take(anchors.values, assignment_flat), a.data.shape)
    return AttentionMaps(continuous=a, quantized=quantized, assignment=assignment)


def straight_through(a: Tensor, a_q_values: Tensor) -> Tensor:
    """Forward the quantized values, backward the identity toward ``a``.

    Anchors receive no gradient through this path; they learn only from
    the quantization objective.
    """
    if a.data.shape != a_q_values.data.shape:
        raise DimensionError(
            f"straight_through: shapes {a.data.shape} and "
            f"{a_q_values.data.shape} differ"
        )
    return _record(a_q_values.data.copy(), (a,), lambda g: (g,))


def quantization_loss(a: Tensor, maps: AttentionMaps, anchors: AnchorSet | None = None) -> Tensor:
    """Mean over cells of (sg[a] - a_q)^2; gradient reaches ONLY the anchors."""
    if anchors is not None:
        expected = anchors.as_array()[maps.assignment]
        if not np.array_equal(expected, maps.quantized.data):
            raise ContractError("assignment is inconsistent with the anchor set")
    target = Tensor(a.data.copy())  # sg[a]: value only, no tape linkage
    return T.mean_all(T.square(T.sub(target, maps.quantized)))


def commitment_loss(a: Tensor, maps: AttentionMaps) -> Tensor:
    """Mean over cells of (a - sg[a_q])^2; gradient reaches ONLY ``a``."""
    if a.data.shape != maps.quantized.data.shape:
        raise DimensionError("commitment_loss: map shapes differ")
    frozen = Tensor(maps.quantized.data.copy())  # sg[a_q]
    return T.mean_all(T.square(T.sub(a, frozen)))
