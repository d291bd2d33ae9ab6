import json
import math

import numpy as np
import pytest

from irshield.assessment import (
    assess_layer,
    assess_model,
    choose_partition,
    epsilon_ratio,
    kl_divergence,
    project_feature_maps,
    report_table,
    report_tsv,
    uniform_baseline,
    valid_partition_points,
    _score_images,
    _oracle_probs,
)
from irshield.engine import forward_range
from irshield.netdef import parse_config, parse_network
from irshield.tensor import Tensor

from conftest import GOLDEN_DIR, seed_image
from test_netdef import pack_weights


def kl_oneline(p, q, floor=1e-10):
    """Independent summation oracle mirroring the documented smoothing."""
    ps = [max(v, floor) for v in p]
    qs = [max(v, floor) for v in q]
    zp, zq = sum(ps), sum(qs)
    return sum((a / zp) * math.log10((a / zp) / (b / zq)) for a, b in zip(ps, qs))


class TestKLDivergence:
    def test_identical_distributions_zero(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_one_hot_vs_fair_coin(self):
        got = kl_divergence([1.0, 0.0], [0.5, 0.5])
        assert got == pytest.approx(math.log10(2), abs=1e-6)
        assert got == pytest.approx(kl_oneline([1.0, 0.0], [0.5, 0.5]), abs=1e-12)

    def test_near_one_hot_over_1000_vs_uniform(self):
        n = 1000
        p = np.full(n, 1e-7)
        p[3] = 1.0 - p.sum() + p[3]
        q = np.full(n, 1.0 / n)
        assert kl_divergence(p, q) == pytest.approx(3.00, abs=0.01)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            kl_divergence([1.0], [0.5, 0.5])

    def test_self_divergence_and_nonnegativity_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 50))
            p = rng.dirichlet(np.full(n, 0.5))
            q = rng.dirichlet(np.full(n, 0.5))
            assert abs(kl_divergence(p, p)) <= 1e-9
            assert kl_divergence(p, q) >= -1e-9

    def test_matches_oneline_oracle_on_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(2, 20))
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            assert kl_divergence(p, q) == pytest.approx(kl_oneline(p, q), abs=1e-12)


class TestUniformBaseline:
    def test_uniform_scores_zero(self):
        assert uniform_baseline(np.full(8, 1 / 8)) == pytest.approx(0.0, abs=1e-12)

    def test_one_hot_1000_is_three(self):
        p = np.zeros(1000)
        p[17] = 1.0
        assert abs(uniform_baseline(p) - 3.0) < 1e-9

    def test_three_class_identity(self):
        p = [0.5, 0.25, 0.25]
        entropy10 = -sum(v * math.log10(v) for v in p)
        assert abs(uniform_baseline(p) - (math.log10(3) - entropy10)) < 1e-9

    def test_entropy_identity_on_random_vectors(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(2, 200))
            p = rng.dirichlet(np.ones(n))
            entropy10 = -float(np.sum(p * np.log10(p)))
            assert abs(uniform_baseline(p) - (math.log10(n) - entropy10)) < 1e-9

    def test_agrees_with_kl_against_uniform(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 100))
            p = rng.dirichlet(np.ones(n))  # strictly positive entries
            assert abs(uniform_baseline(p) - kl_divergence(p, np.full(n, 1 / n))) < 1e-9


class TestEpsilonRatio:
    def test_no_advantage(self):
        assert epsilon_ratio(0.8, 0.8) == 1.0

    def test_violation_candidate(self):
        assert epsilon_ratio(0.2, 0.8) == pytest.approx(0.25)

    def test_zero_denominator_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            epsilon_ratio(0.1, 0.0)

    def test_negative_numerator_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            epsilon_ratio(-0.1, 0.5)


class TestProjection:
    def test_constant_map_projects_to_zeros(self):
        ir = Tensor(3, 3, 1, np.full(9, 5.0))
        out = project_feature_maps(ir, (3, 3, 1))
        assert np.all(out.images[0].array == 0)

    def test_normalization_only_when_already_at_size(self):
        ir = Tensor(2, 2, 1, [0.0, 10.0, 10.0, 0.0])
        out = project_feature_maps(ir, (2, 2, 1))
        assert out.images[0].data.tolist() == [0.0, 1.0, 1.0, 0.0]

    def test_bilinear_upscale_hand_oracle(self):
        # corner-aligned 2x2 -> 4x4: sample coords are k/3 for k=0..3
        ir = Tensor(2, 2, 1, [0.0, 1.0, 0.0, 0.0])  # top-right corner hot
        out = project_feature_maps(ir, (4, 4, 1)).images[0].array[0]
        xs = np.arange(4) / 3.0
        expected = np.empty((4, 4))
        for yi, fy in enumerate(xs):
            for xi, fx in enumerate(xs):
                # bilinear blend of corners (tl=0, tr=1, bl=0, br=0)
                expected[yi, xi] = (1 - fy) * fx
        np.testing.assert_allclose(out, expected, atol=1e-7)
        assert out[0, 0] == 0.0 and out[0, 3] == 1.0
        assert out[3, 0] == 0.0 and out[3, 3] == 0.0

    def test_image_count_matches_depth_and_range(self):
        rng = np.random.default_rng(4)
        ir = Tensor.from_array(rng.normal(0, 3, (7, 5, 6)).astype(np.float32))
        out = project_feature_maps(ir, (8, 8, 3))
        assert len(out.images) == 7
        for img in out.images:
            assert img.shape == (8, 8, 3)
            assert float(img.array.min()) >= 0.0
            assert float(img.array.max()) <= 1.0

    def test_positive_scaling_invariance_exact_for_pow2(self):
        rng = np.random.default_rng(5)
        arr = rng.normal(0, 2, (4, 6, 6)).astype(np.float32)
        base = project_feature_maps(Tensor.from_array(arr), (6, 6, 3))
        for scale in (4.0, 0.5):
            scaled = project_feature_maps(Tensor.from_array(arr * np.float32(scale)), (6, 6, 3))
            for a, b in zip(base.images, scaled.images):
                assert a.data.tobytes() == b.data.tobytes()

    def test_positive_scaling_invariance_close_for_any_constant(self):
        rng = np.random.default_rng(6)
        arr = rng.normal(0, 2, (3, 5, 5)).astype(np.float32)
        base = project_feature_maps(Tensor.from_array(arr), (5, 5, 1))
        scaled = project_feature_maps(Tensor.from_array(arr * np.float32(3.7)), (5, 5, 1))
        for a, b in zip(base.images, scaled.images):
            np.testing.assert_allclose(a.array, b.array, atol=1e-6)


IDENTITY_GEN_CFG = """\
[net]
width=4
height=4
channels=1

[convolutional]
filters=1
size=1
activation=linear

[avgpool]
"""

ORACLE_CFG = """\
[net]
width=4
height=4
channels=1

[convolutional]
filters=4
size=3
pad=1
activation=leaky

[avgpool]

[softmax]
"""


def _small_oracle(seed=99):
    net = parse_config(ORACLE_CFG)
    rng = np.random.default_rng(seed)
    floats = []
    floats.extend(rng.normal(0, 0.1, 4))      # conv biases
    floats.extend(rng.normal(0, 0.5, 4 * 9))  # conv filters
    return parse_network(ORACLE_CFG, pack_weights(*floats))


def _span_01_image():
    rng = np.random.default_rng(8)
    vals = rng.random(16)
    vals[0], vals[-1] = 0.0, 1.0
    return Tensor(4, 4, 1, vals.astype(np.float32))


class TestAssessLayer:
    def test_identity_layer_scores_zero(self):
        irgen = parse_network(IDENTITY_GEN_CFG, pack_weights(0.0, 1.0))
        irval = _small_oracle()
        x = _span_01_image()
        stats = assess_layer(x, irgen, irval, 1)
        assert stats.min_kl == 0.0
        assert stats.delta == 0.0
        assert stats.argmin_j == 1

    def test_layer_index_validated(self, plain17):
        x = seed_image(plain17.input_shape, 50)
        oracle = plain17
        with pytest.raises(ValueError, match="assessable layers"):
            assess_layer(x, plain17, oracle, 17)
        with pytest.raises(ValueError, match="assessable layers"):
            assess_layer(x, plain17, oracle, 0)

    def test_sixteen_feature_maps_order_statistics(self, plain17):
        x = seed_image(plain17.input_shape, 51)
        stats = assess_layer(x, plain17, plain17, 7)  # layer 7 has 16 filters
        assert 1 <= stats.argmin_j <= 16
        assert stats.min_kl <= stats.max_kl
        assert stats.min_kl >= 0

    def test_golden_layer_stats(self, plain17):
        """Frozen from a scalar-reference assessment pass (see golden file)."""
        golden = json.loads((GOLDEN_DIR / "assess_layer_plain17.json").read_text())
        x = seed_image(plain17.input_shape, golden["image_seed"])
        for want in golden["layers"]:
            stats = assess_layer(x, plain17, plain17, want["layer"])
            assert stats.argmin_j == want["argmin_j"]
            assert stats.min_kl == pytest.approx(want["min_kl"], rel=1e-3, abs=1e-6)
            assert stats.max_kl == pytest.approx(want["max_kl"], rel=1e-3, abs=1e-6)
            assert stats.delta == pytest.approx(want["delta"], rel=1e-3, abs=1e-6)

    def test_stats_invariant_under_feature_map_scaling(self, plain17):
        x = seed_image(plain17.input_shape, 52)
        base_probs = _oracle_probs(plain17, x)
        baseline = uniform_baseline(base_probs)
        ir = forward_range(plain17, 1, 3, x)
        scaled = Tensor.from_array(ir.array * np.float32(4.0))
        a = _score_images(3, base_probs, project_feature_maps(ir, plain17.input_shape).images,
                          plain17, baseline)
        b = _score_images(3, base_probs, project_feature_maps(scaled, plain17.input_shape).images,
                          plain17, baseline)
        assert a == b


class TestValidPartitionPoints:
    def test_plain_chain_all_interior_points(self, plain17):
        assert valid_partition_points(plain17) == set(range(1, 17))

    def test_denseblock_block_boundaries_only(self, denseblock):
        assert valid_partition_points(denseblock) == {5, 11, 12, 13}

    def test_matches_route_span_oracle(self, denseblock, plain17, plain28):
        for net in (denseblock, plain17, plain28):
            spans = [
                (src, layer.index)
                for layer in net.layers
                if layer.kind == "route"
                for src in layer.sources
            ]
            expected = {
                i
                for i in range(1, net.n_layers)
                if not any(src <= i < t for src, t in spans)
            }
            assert valid_partition_points(net) == expected

    def test_single_layer_net_has_no_points(self):
        net = parse_config("[net]\nwidth=2\nheight=2\nchannels=1\n\n[softmax]\n")
        assert valid_partition_points(net) == set()


def brute_force_choice(deltas, valid):
    for i in sorted(valid):
        if all(d > 1 for d in deltas[i - 1 :]):
            return i
    return None


class TestChoosePartition:
    def test_short_mixed_trace(self):
        assert choose_partition([0.9, 1.2, 0.8, 1.5, 2.0], {1, 2, 3, 4, 5}) == 4

    def test_all_above_one_picks_first(self):
        assert choose_partition([1.1, 1.2, 1.3], {1, 2, 3}) == 1

    def test_reference_shaped_trace_picks_layer_four(self):
        # ratios dip below 1 through layer 3 and stay above from layer 4 on
        trace = [0.7, 0.9, 0.8, 1.4, 1.9, 2.5, 3.0, 2.8, 3.5, 4.0, 3.8, 4.2, 4.5, 5.0]
        assert choose_partition(trace, set(range(1, 15))) == 4

    def test_no_qualifying_suffix(self):
        assert choose_partition([2.0, 0.5], {1, 2}) is None

    def test_validity_restriction(self):
        # suffix holds from 2 but only 4 is a valid cut
        assert choose_partition([0.5, 1.5, 1.5, 1.5], {4}) == 4

    def test_out_of_range_valid_rejected(self):
        with pytest.raises(ValueError, match="outside assessable range"):
            choose_partition([1.5, 1.5], {3})

    def test_against_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(10_000):
            n = int(rng.integers(1, 20))
            if trial % 3 == 0:
                # fluctuating block-style trace: rising trend with dips
                trend = np.linspace(0.3, 3.0, n)
                dips = np.where(rng.random(n) < 0.3, rng.uniform(0.1, 0.9, n), 1.0)
                deltas = (trend * dips).tolist()
            else:
                deltas = rng.uniform(0, 2.5, n).tolist()
            valid = {int(i) for i in rng.choice(np.arange(1, n + 1),
                                                size=int(rng.integers(0, n + 1)),
                                                replace=False)}
            assert choose_partition(deltas, valid) == brute_force_choice(deltas, valid)

    def test_suffix_property_of_returned_index(self):
        rng = np.random.default_rng(8)
        for _ in range(2000):
            n = int(rng.integers(1, 15))
            deltas = rng.uniform(0, 2.5, n).tolist()
            valid = set(range(1, n + 1))
            got = choose_partition(deltas, valid)
            if got is None:
                continue
            assert all(d > 1 for d in deltas[got - 1 :])
            if got > 1:
                assert not all(d > 1 for d in deltas[got - 2 :])


class TestAssessModel:
    def test_shallow_identity_golden(self):
        golden = json.loads((GOLDEN_DIR / "assess_model_shallow.json").read_text())
        cfg = golden["irgen_cfg"]
        irgen = parse_network(cfg, bytes.fromhex(golden["irgen_weights_hex"]))
        irval = _small_oracle()
        report = assess_model([_span_01_image()], irgen, irval)
        assert report.layers[0].delta == pytest.approx(0.0, abs=1e-9)
        assert report.chosen != 1
        assert report_tsv(report) == golden["tsv"]

    def test_idempotent_aggregation(self, plain17):
        x = seed_image(plain17.input_shape, 60)
        solo = assess_model([x], plain17, plain17)
        pair = assess_model([x, x], plain17, plain17)
        assert solo.layers == pair.layers
        assert solo.chosen == pair.chosen
        assert solo.uniform_baseline == pair.uniform_baseline

    def test_single_layer_model_empty_report(self):
        irgen = parse_network(
            "[net]\nwidth=4\nheight=4\nchannels=1\n\n[convolutional]\nfilters=2\nsize=1\n",
            pack_weights(*([0.1] * 2), *([0.2] * 2)),
        )
        report = assess_model([_span_01_image()], irgen, _small_oracle())
        assert report.layers == ()
        assert report.chosen is None

    def test_worst_case_aggregation_takes_min_delta(self, plain17):
        x1 = seed_image(plain17.input_shape, 61)
        x2 = seed_image(plain17.input_shape, 62)
        merged = assess_model([x1, x2], plain17, plain17)
        a = assess_model([x1], plain17, plain17)
        b = assess_model([x2], plain17, plain17)
        for row, ra, rb in zip(merged.layers, a.layers, b.layers):
            assert row.delta == min(ra.delta, rb.delta)
            assert row in (ra, rb)
        assert merged.uniform_baseline == min(a.uniform_baseline, b.uniform_baseline)

    def test_chosen_cut_is_valid_and_suffix_holds(self, denseblock):
        xs = [seed_image(denseblock.input_shape, s) for s in (70, 71)]
        report = assess_model(xs, denseblock, denseblock)
        deltas = [row.delta for row in report.layers]
        assert choose_partition(deltas, report.valid_points) == report.chosen
        if report.chosen is not None:
            assert report.chosen in report.valid_points
            assert all(d > 1 for d in deltas[report.chosen - 1 :])

    def test_report_rendering_stable(self, plain17):
        x = seed_image(plain17.input_shape, 63)
        r1 = assess_model([x], plain17, plain17)
        r2 = assess_model([x], plain17, plain17)
        assert report_tsv(r1) == report_tsv(r2)
        assert report_table(r1) == report_table(r2)
        n_rows = len(report_tsv(r1).strip().splitlines())
        assert n_rows == plain17.n_layers - 1

    def test_empty_input_set_rejected(self, plain17):
        with pytest.raises(ValueError, match="at least one input"):
            assess_model([], plain17, plain17)
