"""Multi-scope interest aggregation: TCN stack + one attention per layer."""

from __future__ import annotations

from dataclasses import dataclass

from cain import tensor as T
from cain.attention import AttnParams, auxiliary_attention, major_attention
from cain.errors import ConfigError
from cain.peg import PegLayer, personalized_conv
from cain.tcn import TcnStack, stack_forward
from cain.tensor import Tensor


@dataclass
class MsiaOutput:
    interests: list[Tensor]  # IR_1 .. IR_L
    integrated: Tensor  # concat of interests, layer order
    lengths: list[int]  # rows each attention actually saw (after top-K clamping for layer 1)


def layer_output_dims(stack: TcnStack, peg_layers: dict[int, PegLayer] | None,
                      peg_mode: str) -> list[int]:
    dims = []
    for n, cfg in enumerate(stack.layers):
        widen = peg_layers is not None and n in peg_layers and peg_mode == "concat"
        dims.append(cfg.out_dim * (2 if widen else 1))
    return dims


def check_config(stack: TcnStack, filters, biases, attn: list[AttnParams],
                 peg_layers: dict[int, PegLayer] | None, peg_mode: str) -> None:
    if len(attn) != len(stack):
        raise ConfigError(f"{len(stack)} TCN layers but {len(attn)} attention modules")
    out_dims = layer_output_dims(stack, peg_layers, peg_mode)
    for n, cfg in enumerate(stack.layers):
        uses_peg = peg_layers is not None and n in peg_layers
        needs_global = not uses_peg or peg_mode != "replace"
        if needs_global and (filters[n] is None or tuple(filters[n].shape) != cfg.filter_shape()):
            raise ConfigError(f"layer {n + 1}: global filter missing or mis-shaped")
        if n > 0 and cfg.in_dim != out_dims[n - 1]:
            raise ConfigError(f"layer {n + 1}: in_dim {cfg.in_dim} != previous width "
                              f"{out_dims[n - 1]}")
        if attn[n].w_k.shape[0] != out_dims[n]:
            raise ConfigError(f"attention {n + 1} expects width {attn[n].w_k.shape[0]}, "
                              f"layer emits {out_dims[n]}")


def msia_forward(lh_reps: Tensor, ve: Tensor, stack: TcnStack, filters, biases,
                 attn: list[AttnParams], top_k: int, mask=None,
                 peg_layers: dict[int, PegLayer] | None = None, profile_repr: Tensor | None = None,
                 peg_mode: str = "replace", normalize: str = "softmax") -> MsiaOutput:
    """Layer 1 feeds the major (retrieve-then-attend) attention, deeper layers
    feed their own auxiliary attention; interests are concatenated in layer order.

    Batched inputs: ``lh_reps [B, N, d_item]``, ``ve [B, d_v]``, ``mask [B, N]``.
    """
    check_config(stack, filters, biases, attn, peg_layers, peg_mode)
    if lh_reps.shape[-2] == 0:
        raise ConfigError("empty lifelong sequence")
    convs = None
    if peg_layers:
        if profile_repr is None:
            raise ConfigError("PEG layers need the profile representation")
        convs = [None] * len(stack)
        for n, net in peg_layers.items():
            convs[n] = (lambda x, cfg, net=net, n=n: personalized_conv(
                x, cfg, profile_repr, net, peg_mode, filters[n], biases[n]))
    outputs, masks = stack_forward(lh_reps, stack, filters, biases, mask, convs)

    interests, lengths = [], []
    for n, (out, m) in enumerate(zip(outputs, masks)):
        if n == 0:
            ir = major_attention(ve, out, attn[0], top_k, m, normalize)
            lengths.append(min(top_k, out.shape[-2]))
        else:
            ir = auxiliary_attention(ve, out, attn[n], m, normalize)
            lengths.append(out.shape[-2])
        interests.append(ir)
    integrated = interests[0] if len(interests) == 1 else T.concat(interests, axis=-1)
    return MsiaOutput(interests, integrated, lengths)
