"""Layer-by-layer leakage assessment and partition-point selection.

An assessed model (the "generator") runs an input up to some layer; every
feature map of that layer is projected back to an image and classified by a
second, fixed "oracle" network. The base-10 KL divergence between the
oracle's view of the original input and its view of each projected map
scores how much of the input that layer still gives away: the lower the
divergence, the more the map resembles the input. Scores are normalized by
the divergence between the input's own classification and the discrete
uniform distribution, giving a per-layer ratio. Layers are safe to expose
once the ratio stays above 1 from that layer onward.

All divergences use base-10 logarithms, so the uniform-distribution
normalizer for a confidently classified input over N classes is log10(N)
(3.0 at N = 1000).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import forward, forward_range
from .imageio import bilinear_resize, resize_to_shape
from .netdef import NetworkDef
from .tensor import Tensor

__all__ = [
    "kl_divergence",
    "uniform_baseline",
    "project_feature_maps",
    "assess_layer",
    "assess_model",
    "valid_partition_points",
    "choose_partition",
    "epsilon_ratio",
    "IRImageSet",
    "LayerKLStats",
    "AssessmentReport",
    "report_table",
    "report_tsv",
    "PROB_FLOOR",
]

# Probabilities are clamped below at this floor (then renormalized) before a
# divergence is computed, so an exactly-zero class score cannot produce an
# infinite divergence.
PROB_FLOOR = 1e-10


def kl_divergence(p, q) -> float:
    """Base-10 KL divergence sum(p * log10(p / q)) with zero smoothing.

    Both arguments are clamped below at PROB_FLOOR and renormalized, so the
    result is finite for any pair of probability vectors and non-negative up
    to smoothing error.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.size != q.size:
        raise ValueError(f"length mismatch: p has {p.size} entries, q has {q.size}")
    ps = np.maximum(p, PROB_FLOOR)
    qs = np.maximum(q, PROB_FLOOR)
    ps = ps / ps.sum()
    qs = qs / qs.sum()
    return float(np.sum(ps * np.log10(ps / qs)))


def uniform_baseline(p) -> float:
    """Divergence of p from the discrete uniform distribution over its size.

    Computed directly as sum over nonzero entries of p * log10(p * N), the
    exact divergence against uniform(N) with the 0*log(0) = 0 convention;
    algebraically log10(N) minus the base-10 entropy of p. No smoothing is
    applied (the uniform side has no zeros), so a one-hot vector over 1000
    classes scores exactly 3.0.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    n = p.size
    mask = p > 0
    vals = p[mask]
    return float(np.sum(vals * np.log10(vals * n)))


def epsilon_ratio(dist_with_ir: float, dist_background_only: float) -> float:
    """Ratio of reconstruction distances with vs without an exposed tensor.

    Callers compare the ratio against a confidentiality bound in [0, 1]:
    a ratio at or below the bound means the exposure helped an attacker.
    """
    if dist_background_only <= 0:
        raise ValueError(
            f"background-only distance must be positive, got {dist_background_only}"
        )
    if dist_with_ir < 0:
        raise ValueError(f"distances must be non-negative, got {dist_with_ir}")
    return dist_with_ir / dist_background_only


@dataclass(frozen=True)
class IRImageSet:
    """Feature maps of one layer, projected to oracle-input-sized images."""

    layer: int
    images: tuple[Tensor, ...]


@dataclass(frozen=True)
class LayerKLStats:
    """Divergence statistics for one layer of the assessed model."""

    layer: int
    min_kl: float
    max_kl: float
    argmin_j: int  # 1-based feature-map index attaining min_kl
    delta: float  # min_kl / uniform_baseline of the same input


@dataclass(frozen=True)
class AssessmentReport:
    input_id: str
    uniform_baseline: float
    layers: tuple[LayerKLStats, ...]
    valid_points: frozenset[int]
    chosen: int | None


def project_feature_maps(
    ir: Tensor, oracle_input_shape: tuple[int, int, int], layer: int = 0
) -> IRImageSet:
    """Turn each channel of a layer output into an oracle-ready image.

    Each channel is min-max normalized to [0, 1] independently (a constant
    channel becomes all zeros), resized with corner-aligned bilinear
    sampling, and replicated across the oracle's input channels. Positive
    rescaling of a channel therefore leaves its projection unchanged.
    """
    ow, oh, oc = oracle_input_shape
    images = []
    for ci in range(ir.channels):
        channel = ir.array[ci].astype(np.float64)
        lo = channel.min()
        hi = channel.max()
        if hi == lo:
            flat = np.zeros((oh, ow))
        else:
            flat = bilinear_resize((channel - lo) / (hi - lo), oh, ow)
        plane = np.clip(flat, 0.0, 1.0).astype(np.float32)
        images.append(Tensor.from_array(np.repeat(plane[None, :, :], oc, axis=0)))
    return IRImageSet(layer=layer, images=tuple(images))


def _oracle_probs(irval: NetworkDef, image: Tensor) -> np.ndarray:
    if image.shape != irval.input_shape:
        image = resize_to_shape(image, irval.input_shape)
    return forward(irval, image)


def _score_images(
    layer_i: int,
    base_probs: np.ndarray,
    images: tuple[Tensor, ...],
    irval: NetworkDef,
    baseline: float,
) -> LayerKLStats:
    scores = [kl_divergence(base_probs, _oracle_probs(irval, img)) for img in images]
    best = min(range(len(scores)), key=lambda j: (scores[j], j))
    return LayerKLStats(
        layer=layer_i,
        min_kl=scores[best],
        max_kl=max(scores),
        argmin_j=best + 1,
        delta=scores[best] / baseline,
    )


def assess_layer(x: Tensor, irgen: NetworkDef, irval: NetworkDef, layer_i: int) -> LayerKLStats:
    """Score one layer of the generator network for input ``x``."""
    n = irgen.n_layers
    if not (1 <= layer_i < n):
        raise ValueError(f"assessable layers are 1..{n - 1}, got {layer_i}")
    base_probs = _oracle_probs(irval, x)
    baseline = uniform_baseline(base_probs)
    if baseline <= 0:
        raise ValueError(
            "oracle classified the input as exactly uniform; layer ratios are undefined"
        )
    ir = forward_range(irgen, 1, layer_i, x)
    images = project_feature_maps(ir, irval.input_shape, layer=layer_i).images
    return _score_images(layer_i, base_probs, images, irval, baseline)


def valid_partition_points(net: NetworkDef) -> set[int]:
    """Cut indices i where no route layer after i reads a layer at or
    before i. For a plain chain this is every i in [1, n)."""
    n = net.n_layers
    valid = set(range(1, n))
    for layer in net.layers:
        if layer.kind == "route":
            for src in layer.sources:
                for i in range(src, layer.index):
                    valid.discard(i)
    return valid


def choose_partition(deltas, valid) -> int | None:
    """Smallest valid index i whose ratio suffix stays above 1.

    ``deltas[t-1]`` is the ratio for layer t, t in 1..n-1. Returns None when
    no valid index satisfies the suffix condition.
    """
    deltas = list(deltas)
    n_assessable = len(deltas)
    valid = set(valid)
    for i in valid:
        if not (1 <= i <= n_assessable):
            raise ValueError(f"valid cut {i} outside assessable range 1..{n_assessable}")
    suffix_ok = True
    best = None
    for i in range(n_assessable, 0, -1):
        suffix_ok = suffix_ok and deltas[i - 1] > 1
        if suffix_ok and i in valid:
            best = i
    return best


def assess_model(
    x_set,
    irgen: NetworkDef,
    irval: NetworkDef,
    input_ids=None,
) -> AssessmentReport:
    """Assess every layer of ``irgen`` over a set of inputs.

    Per layer, the reported statistics come from the worst-case input: the
    one whose ratio for that layer is smallest. The cut is then chosen from
    the worst-case ratios, restricted to topologically valid points.
    """
    x_set = list(x_set)
    if not x_set:
        raise ValueError("assessment needs at least one input")
    if input_ids is None:
        input_ids = [f"input-{k + 1}" for k in range(len(x_set))]
    input_ids = [str(s) for s in input_ids]
    if len(input_ids) != len(x_set):
        raise ValueError("input_ids must match the number of inputs")

    n = irgen.n_layers
    valid = frozenset(valid_partition_points(irgen))

    baselines = []
    per_input: list[list[LayerKLStats]] = []
    for x in x_set:
        base_probs = _oracle_probs(irval, x)
        baseline = uniform_baseline(base_probs)
        if baseline <= 0:
            raise ValueError(
                "oracle classified an input as exactly uniform; layer ratios are undefined"
            )
        baselines.append(baseline)
        stats = []
        for layer_i in range(1, n):
            ir = forward_range(irgen, 1, layer_i, x)
            images = project_feature_maps(ir, irval.input_shape, layer=layer_i).images
            stats.append(_score_images(layer_i, base_probs, images, irval, baseline))
        per_input.append(stats)

    worst: list[LayerKLStats] = []
    for li in range(n - 1):
        rows = [stats[li] for stats in per_input]
        worst.append(min(rows, key=lambda r: r.delta))

    chosen = choose_partition([r.delta for r in worst], valid) if worst else None
    return AssessmentReport(
        input_id=",".join(input_ids),
        uniform_baseline=min(baselines),
        layers=tuple(worst),
        valid_points=valid,
        chosen=chosen,
    )


# --- report rendering --------------------------------------------------------

_TSV_COLUMNS = ("layer", "min_kl", "max_kl", "argmin_j", "delta", "valid", "chosen")


def report_tsv(report: AssessmentReport) -> str:
    """Machine-readable rendering: one tab-separated record per layer, column
    order layer, min_kl, max_kl, argmin_j, delta, valid, chosen."""
    lines = []
    for row in report.layers:
        lines.append(
            "\t".join(
                (
                    str(row.layer),
                    repr(row.min_kl),
                    repr(row.max_kl),
                    str(row.argmin_j),
                    repr(row.delta),
                    "1" if row.layer in report.valid_points else "0",
                    "1" if row.layer == report.chosen else "0",
                )
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def report_table(report: AssessmentReport) -> str:
    """Human-readable rendering of an assessment report."""
    head = [
        f"input:            {report.input_id}",
        f"uniform baseline: {report.uniform_baseline:.6f}",
        f"chosen cut:       {report.chosen if report.chosen is not None else '(none)'}",
        "",
        f"{'layer':>5}  {'min_kl':>12}  {'max_kl':>12}  {'argmin_j':>8}  {'delta':>10}  {'valid':>5}  {'chosen':>6}",
    ]
    for row in report.layers:
        head.append(
            f"{row.layer:>5}  {row.min_kl:>12.6f}  {row.max_kl:>12.6f}  {row.argmin_j:>8}"
            f"  {row.delta:>10.4f}  {'yes' if row.layer in report.valid_points else 'no':>5}"
            f"  {'<<' if row.layer == report.chosen else '':>6}"
        )
    return "\n".join(head) + "\n"
