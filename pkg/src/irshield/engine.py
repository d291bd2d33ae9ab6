"""Deterministic forward passes over a NetworkDef.

Every layer is evaluated as a pure float32 function of its input, one layer
at a time, so running layers ``1..i`` and then ``i+1..n`` reproduces the
full pass bit for bit. Convolution lowers each output position to a column
ordered channel-major then kernel-row-major, matching the filter weight
layout, so the accumulation order never depends on where the range starts.

Conventions fixed here: leaky activation slope is 0.1; batch normalization
folds into a per-filter scale and shift using the stored mean/variance with
epsilon 1e-6; pooling windows never extend past the input edge.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import PartitionError, ShapeError, WeightsError
from .netdef import ConnectedWeights, ConvWeights, LayerSpec, NetworkDef
from .tensor import Tensor

__all__ = ["forward", "forward_range", "top_k", "LEAKY_SLOPE", "BN_EPSILON"]

LEAKY_SLOPE = np.float32(0.1)
BN_EPSILON = np.float32(1e-6)


def _activate(out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(out, np.float32(0))
    if activation == "leaky":
        return np.where(out > 0, out, out * LEAKY_SLOPE)
    return out


def _conv(layer: LayerSpec, lw: ConvWeights, x: np.ndarray) -> np.ndarray:
    c_in, h, w = x.shape
    k, s, p = layer.size, layer.stride, layer.pad_pixels()
    f = layer.filters
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    # (c, oh, ow, k, k) -> columns ordered (c, ky, kx) per output position
    windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    oh, ow = windows.shape[1], windows.shape[2]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c_in * k * k)
    wmat = lw.filters.reshape(f, c_in * k * k)
    out = (cols @ wmat.T).T.reshape(f, oh, ow)

    if layer.batch_normalize:
        denom = np.sqrt(lw.bn_var + BN_EPSILON)
        gamma = lw.bn_scale / denom
        beta = lw.biases - lw.bn_scale * lw.bn_mean / denom
        out = out * gamma[:, None, None] + beta[:, None, None]
    else:
        out = out + lw.biases[:, None, None]
    return _activate(out, layer.activation)


def _maxpool(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    k, s = layer.size, layer.stride
    windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    return windows.max(axis=(3, 4))


def _avgpool(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    if layer.size:
        k, s = layer.size, layer.stride
        windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        return windows.mean(axis=(3, 4), dtype=np.float32)
    c = x.shape[0]
    return x.mean(axis=(1, 2), dtype=np.float32).reshape(c, 1, 1)


def _connected(lw: ConnectedWeights, x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1)
    out = lw.weights @ flat + lw.biases
    return out.reshape(-1, 1, 1)


def _softmax(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1)
    e = np.exp(flat - flat.max())
    return (e / e.sum()).reshape(-1, 1, 1)


def _run_range(net: NetworkDef, from_layer: int, to_layer: int, x: Tensor) -> np.ndarray:
    if net.weights is None:
        raise WeightsError("network carries no weights; load it with parse_network")
    n = net.n_layers
    if not (1 <= from_layer <= to_layer <= n):
        raise ShapeError(
            f"invalid layer range [{from_layer}, {to_layer}] for a {n}-layer network"
        )
    expect = net.layer_input_shapes[from_layer - 1]
    if x.shape != expect:
        w, h, c = expect
        raise ShapeError(
            f"input shape {x.shape[0]}x{x.shape[1]}x{x.shape[2]} does not match "
            f"layer {from_layer}'s expected input {w}x{h}x{c}"
        )

    outputs: dict[int, np.ndarray] = {from_layer - 1: x.array}
    for pos in range(from_layer, to_layer + 1):
        layer = net.layers[pos - 1]
        if layer.kind == "route":
            for src in layer.sources:
                if src < from_layer:
                    raise PartitionError(
                        f"cross-boundary route: layer {pos} routes from layer {src}, "
                        f"before the start of the range at layer {from_layer}"
                    )
            arr = np.concatenate([outputs[src] for src in layer.sources], axis=0)
        elif layer.kind == "convolutional":
            arr = _conv(layer, net.weights[pos - 1], outputs[pos - 1])
        elif layer.kind == "maxpool":
            arr = _maxpool(layer, outputs[pos - 1])
        elif layer.kind == "avgpool":
            arr = _avgpool(layer, outputs[pos - 1])
        elif layer.kind == "connected":
            arr = _connected(net.weights[pos - 1], outputs[pos - 1])
        elif layer.kind == "softmax":
            arr = _softmax(outputs[pos - 1])
        else:
            raise ShapeError(f"layer {pos}: unknown kind {layer.kind!r}")
        # Canonicalize the layout: later layers must see bit-identical inputs
        # in bit-identical memory order whether this output was computed in
        # process or re-entered through a range boundary, or reductions could
        # pick a different summation order.
        outputs[pos] = np.ascontiguousarray(arr)
    return outputs[to_layer]


def forward_range(net: NetworkDef, from_layer: int, to_layer: int, x: Tensor) -> Tensor:
    """Run layers ``from_layer..to_layer`` (1-based, inclusive) on ``x``.

    ``x`` stands in for the output of layer ``from_layer - 1``. Route layers
    inside the range may only reference layers inside the range; a reference
    back past ``from_layer`` raises :class:`PartitionError`.
    """
    return Tensor.from_array(_run_range(net, from_layer, to_layer, x))


def forward(net: NetworkDef, x: Tensor) -> np.ndarray:
    """Full inference; returns the softmax probability vector.

    The network's final layer must be a softmax. The returned vector is the
    flat view of ``forward_range(net, 1, n, x)``, so chaining partial passes
    reproduces it bit for bit.
    """
    if net.layers[-1].kind != "softmax":
        raise ShapeError("forward requires a softmax-terminated network")
    out = _run_range(net, 1, net.n_layers, x)
    probs = out.reshape(-1).copy()
    probs.flags.writeable = False
    return probs


def top_k(p: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (class index, score) pairs, 1-based, descending by score.

    Ties break toward the smaller class index.
    """
    p = np.asarray(p).reshape(-1)
    n = p.size
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")
    order = np.argsort(-p, kind="stable")[:k]
    return [(int(i) + 1, float(p[i])) for i in order]
