"""Temporal convolution layers over behavior sequences.

Windows are centered: an output row sees ``(fs - 1) / 2`` rows on each side,
including rows *after* the center (the whole lifelong sequence precedes the
candidate event, so this is not a causal model). Strided layers place their
centers on a grid anchored at the last (most recent) row, so the output for
the newest events does not depend on how much left padding a batch carries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cain import tensor as T
from cain.errors import ConfigError
from cain.tensor import Tensor


@dataclass(frozen=True)
class TcnLayerConfig:
    filter_size: int
    stride: int
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.filter_size <= 0 or self.filter_size % 2 == 0:
            raise ConfigError(f"filter size must be odd and positive, got {self.filter_size}")
        if self.stride <= 0:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ConfigError("layer dims must be positive")

    @property
    def half_width(self) -> int:
        return (self.filter_size - 1) // 2

    @property
    def padding(self) -> int:
        return self.half_width

    def output_length(self, length: int) -> int:
        return -(-length // self.stride)

    def first_center(self, length: int) -> int:
        """Input index of output row 0 (centers end exactly at ``length - 1``)."""
        return (length - 1) % self.stride

    def filter_shape(self) -> tuple[int, int, int]:
        return (self.filter_size, self.in_dim, self.out_dim)


@dataclass(frozen=True)
class TcnStack:
    layers: tuple[TcnLayerConfig, ...]
    # applied to a layer's output before the next layer consumes it
    activation: str = "relu"

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a TCN stack needs at least one layer")
        if self.activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def __len__(self) -> int:
        return len(self.layers)

    def context_lengths(self) -> list[int]:
        return receptive_field(self)

    def output_lengths(self, length: int) -> list[int]:
        out = []
        for cfg in self.layers:
            length = cfg.output_length(length)
            out.append(length)
        return out

    def output_centers(self, length: int) -> list[np.ndarray]:
        """Input-sequence index each output row of each layer is centered on."""
        centers = np.arange(length)
        result = []
        for cfg in self.layers:
            n = len(centers)
            picked = cfg.first_center(n) + cfg.stride * np.arange(cfg.output_length(n))
            centers = centers[picked]
            result.append(centers)
        return result


def build_stack(filter_sizes, strides, dims, in_dim: int, activation: str = "relu") -> TcnStack:
    if not len(filter_sizes) == len(strides) == len(dims):
        raise ConfigError("filter_sizes, strides and dims must have equal length")
    layers = []
    for fs, s, d in zip(filter_sizes, strides, dims):
        layers.append(TcnLayerConfig(fs, s, in_dim, d))
        in_dim = d
    return TcnStack(tuple(layers), activation)


def receptive_field(stack: TcnStack) -> list[int]:
    """Per-side context length of every layer's outputs, in input positions.

    ``cl_1 = (fs_1 - 1)/2`` and ``cl_{n+1} = cl_n + (fs_{n+1} - 1)/2 * J_n`` where
    ``J_n`` is the product of the strides of layers 1..n. With unit strides the
    total width ``2*cl + 1`` grows by ``fs_{n+1} - 1`` per layer.
    """
    cls, cl, jump = [], 0, 1
    for cfg in stack.layers:
        cl += cfg.half_width * jump
        jump *= cfg.stride
        cls.append(cl)
    return cls


def _conv(seq: Tensor, cfg: TcnLayerConfig, filt: Tensor, bias: Tensor) -> Tensor:
    length = seq.shape[-2]
    if length == 0:
        raise ConfigError("empty sequence")
    pad_left = cfg.half_width - cfg.first_center(length)
    return T.conv1d_temporal(seq, filt, bias, stride=cfg.stride, pad=(pad_left, cfg.half_width))


def tcn_forward(seq: Tensor, cfg: TcnLayerConfig, filt: Tensor, bias: Tensor) -> Tensor:
    """One centered convolution layer: ``[.., T, Din] -> [.., ceil(T/stride), Dout]``.

    ``filt``/``bias`` may carry a leading batch axis for per-user filters.
    """
    if seq.shape[-1] != cfg.in_dim:
        raise ConfigError(f"input dim {seq.shape[-1]} != layer in_dim {cfg.in_dim}")
    if tuple(filt.shape[-3:]) != cfg.filter_shape():
        raise ConfigError(f"filter shape {filt.shape} does not match {cfg.filter_shape()}")
    return _conv(seq, cfg, filt, bias)


def downsample_mask(mask: np.ndarray, cfg: TcnLayerConfig) -> np.ndarray:
    """Validity of each output row = validity of its center row."""
    length = mask.shape[-1]
    return mask[..., cfg.first_center(length)::cfg.stride]


def activate(x: Tensor, activation: str) -> Tensor:
    return T.relu(x) if activation == "relu" else x


def stack_forward(seq: Tensor, stack: TcnStack, filters, biases, mask=None, convs=None):
    """Run every layer and return all layer outputs (pre-activation).

    Layer ``n + 1`` consumes ``activation(output_n)`` with padded rows zeroed.
    ``convs`` optionally overrides the conv of layer ``n`` with a callable
    ``(x, cfg) -> Tensor`` (used for generated filters). Returns
    ``(outputs, masks)``; masks are ``None`` when no mask is given.
    """
    outputs, masks = [], []
    x = seq
    for n, cfg in enumerate(stack.layers):
        if x.shape[-1] != cfg.in_dim:
            raise ConfigError(
                f"layer {n + 1}: input dim {x.shape[-1]} does not chain to in_dim {cfg.in_dim}"
            )
        if convs is not None and convs[n] is not None:
            out = convs[n](x, cfg)
        else:
            out = tcn_forward(x, cfg, filters[n], biases[n])
        if mask is not None:
            mask = downsample_mask(mask, cfg)
        outputs.append(out)
        masks.append(mask)
        if n + 1 < len(stack.layers):
            x = activate(out, stack.activation)
            if mask is not None:
                x = T.mul(x, mask[..., None].astype(np.float64))
    return outputs, masks


def filter_size_for(context_length: int) -> int:
    """Filter size giving a per-side context length (``2*cl + 1``)."""
    if context_length < 0:
        raise ConfigError("context length must be >= 0 for a TCN layer")
    return 2 * context_length + 1

