"""Per-layer floating-point operation counts and cumulative workload curves.

One multiply-accumulate counts as two FLOPs. A convolution additionally
pays one add per output element for its bias and two ops per output element
when batch normalization is enabled; activations are not counted. Route and
softmax layers are costed as element moves (one per output element) and
five ops per class respectively, so cumulative curves stay strictly
increasing across every real topology.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ShapeError
from .netdef import LayerSpec, NetworkDef

__all__ = ["FlopProfile", "layer_flops", "flop_profile", "frontnet_fraction", "profile_tsv"]

SOFTMAX_OPS_PER_CLASS = 5
ROUTE_OPS_PER_ELEMENT = 1


@dataclass(frozen=True)
class FlopProfile:
    kinds: tuple[str, ...]
    per_layer: tuple[int, ...]
    cumulative: tuple[float, ...]  # prefix sums / total, non-decreasing, ends at 1.0
    total: int


def layer_flops(layer: LayerSpec, input_shape: tuple[int, int, int]) -> int:
    """FLOPs for one layer given its input shape (w, h, c)."""
    w, h, c = input_shape
    if layer.kind == "convolutional":
        p = layer.pad_pixels()
        ow = (w + 2 * p - layer.size) // layer.stride + 1
        oh = (h + 2 * p - layer.size) // layer.stride + 1
        if ow < 1 or oh < 1:
            raise ShapeError(
                f"convolution kernel {layer.size} does not fit input {w}x{h} with pad {p}"
            )
        out_elems = ow * oh * layer.filters
        flops = 2 * layer.size * layer.size * c * out_elems
        if layer.bias:
            flops += out_elems
        if layer.batch_normalize:
            flops += 2 * out_elems
        return flops
    if layer.kind == "connected":
        return 2 * (w * h * c) * layer.output
    if layer.kind == "maxpool" or (layer.kind == "avgpool" and layer.size):
        if w < layer.size or h < layer.size:
            raise ShapeError(f"pool window {layer.size} exceeds input {w}x{h}")
        ow = (w - layer.size) // layer.stride + 1
        oh = (h - layer.size) // layer.stride + 1
        return ow * oh * c * layer.size * layer.size
    if layer.kind == "avgpool":  # global: one window covering the input
        return c * w * h
    if layer.kind == "route":
        # output volume equals the concatenated source volumes; cost is the move
        return ROUTE_OPS_PER_ELEMENT * w * h * c
    if layer.kind == "softmax":
        return SOFTMAX_OPS_PER_CLASS * w * h * c
    raise ShapeError(f"unknown layer kind {layer.kind!r}")


def flop_profile(net: NetworkDef) -> FlopProfile:
    """Cost every layer and build the normalized cumulative curve."""
    counts = []
    for layer, in_shape, out_shape in zip(
        net.layers, net.layer_input_shapes, net.layer_output_shapes
    ):
        if layer.kind == "route":
            ow, oh, oc = out_shape
            counts.append(ROUTE_OPS_PER_ELEMENT * ow * oh * oc)
        else:
            counts.append(layer_flops(layer, in_shape))
    total = sum(counts)
    cumulative = []
    running = 0
    for count in counts:
        running += count
        cumulative.append(float(Fraction(running, total)))
    return FlopProfile(
        kinds=tuple(layer.kind for layer in net.layers),
        per_layer=tuple(counts),
        cumulative=tuple(cumulative),
        total=total,
    )


def frontnet_fraction(profile: FlopProfile, cut: int) -> float:
    """Share of the whole workload spent in layers 1..cut."""
    n = len(profile.per_layer)
    if not (1 <= cut < n):
        raise ValueError(f"cut must be in [1, {n - 1}], got {cut}")
    return profile.cumulative[cut - 1]


def profile_tsv(profile: FlopProfile) -> str:
    """Tab-separated rendering: layer, kind, flops, cumulative_fraction."""
    lines = [
        f"{i}\t{kind}\t{flops}\t{repr(cum)}"
        for i, (kind, flops, cum) in enumerate(
            zip(profile.kinds, profile.per_layer, profile.cumulative), start=1
        )
    ]
    return "\n".join(lines) + "\n"
