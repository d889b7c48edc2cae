import numpy as np
import pytest

from zmask import autodiff as ad
from zmask.calibration import ChannelStats, CalibrationProfile
from zmask.errors import ConfigError, DataError
from zmask.heatmaps import (
    LayerSetConfig,
    PoolCascadeSpec,
    aggregate,
    layer_heatmap,
    layer_heatmap_node,
    set_heatmap_node,
    shallow_deep_heatmaps,
    tone_map,
)
from zmask.scenes import synth_trace
from zmask.tensorops import avg_pool_same, resize_bilinear


def small_spec(m=2, dims=(8, 14)):
    kernels = [(5, 7), (3, 5), (2, 3), (1, 2)][:m]
    return PoolCascadeSpec(tuple(kernels), dims)


class TestPoolCascadeSpec:
    def test_rejects_empty_kernels(self):
        with pytest.raises(ConfigError):
            PoolCascadeSpec((), (8, 8))

    def test_rejects_increasing_kernels(self):
        with pytest.raises(ConfigError, match="non-increasing"):
            PoolCascadeSpec(((2, 2), (3, 3)), (8, 8))

    def test_rejects_kernel_larger_than_dims(self):
        with pytest.raises(ConfigError, match="fit"):
            PoolCascadeSpec(((9, 3),), (8, 8))

    def test_json_round_trip(self):
        spec = small_spec(3)
        again = PoolCascadeSpec.from_json_dict(spec.to_json_dict())
        assert again == spec


class TestLayerHeatmap:
    def test_single_stage_is_channel_mean_abs(self, rng):
        z = rng.standard_normal((3, 8, 14)).astype(np.float32)
        spec = PoolCascadeSpec(((3, 5),), (8, 14))
        got = layer_heatmap(z, spec)
        expected = np.abs(avg_pool_same(z, 3, 5)).mean(axis=0)
        np.testing.assert_allclose(got, expected, atol=1e-6)

    @pytest.mark.parametrize("c", [-3.0, -1.0, 0.5, 2.0])
    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_constant_input_magnitude_identity(self, c, m):
        z = np.full((2, 10, 16), c, dtype=np.float32)
        got = layer_heatmap(z, small_spec(m, (8, 14)))
        np.testing.assert_allclose(got, abs(c), atol=1e-5)

    def test_zero_input_stays_zero(self):
        z = np.zeros((2, 9, 9), dtype=np.float32)
        got = layer_heatmap(z, small_spec(3, (8, 14)))
        np.testing.assert_array_equal(got, 0.0)

    def test_identity_configuration_reduces_to_mean_abs(self, rng):
        z = rng.standard_normal((4, 7, 9)).astype(np.float32)
        spec = PoolCascadeSpec(((1, 1),), (7, 9))
        np.testing.assert_allclose(layer_heatmap(z, spec), np.abs(z).mean(axis=0), atol=1e-7)

    def test_output_shape_and_nonnegativity(self, rng):
        z = rng.standard_normal((5, 20, 11)).astype(np.float32)
        got = layer_heatmap(z, small_spec(2, (8, 14)))
        assert got.shape == (8, 14)
        assert (got >= 0).all()

    def test_matches_stagewise_reference(self, rng):
        # direct transliteration of the cascade recurrence as the oracle
        z = rng.standard_normal((2, 9, 12)).astype(np.float64)
        spec = small_spec(3, (8, 14))
        resized = resize_bilinear(z, 8, 14)
        stage = np.ones_like(resized)
        for kh, kw in spec.kernels:
            pooled = avg_pool_same(resized, kh, kw)
            stage = pooled * (stage / max(np.abs(stage).max(), spec.eps_norm))
        expected = np.abs(stage).mean(axis=0)
        np.testing.assert_allclose(layer_heatmap(z, spec), expected, atol=1e-9)

    def test_rank_check(self):
        with pytest.raises(DataError):
            layer_heatmap(np.zeros((8, 14), dtype=np.float32), small_spec(1, (8, 14)))

    def test_gradient_flows_through_cascade(self, rng):
        z = ad.leaf(rng.standard_normal((2, 9, 12)))
        out = ad.sum_all(layer_heatmap_node(z, small_spec(2, (8, 14))))
        (g,) = ad.backward(out, [z])
        assert g.shape == z.value.shape
        assert np.abs(g).sum() > 0


class TestAggregate:
    def test_single_map_identity(self, rng):
        m = rng.uniform(size=(4, 4)).astype(np.float32)
        np.testing.assert_array_equal(aggregate([m]), m)

    def test_idempotent(self, rng):
        m = rng.uniform(size=(4, 4)).astype(np.float32)
        np.testing.assert_array_equal(aggregate([m, m]), m)

    def test_elementwise_max_example(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        b = np.array([[0.5, 2.0], [0.0, 0.0]], dtype=np.float32)
        np.testing.assert_array_equal(aggregate([a, b]), [[1.0, 2.0], [0.0, 1.0]])

    def test_dominates_every_input(self, rng):
        maps = [rng.uniform(size=(5, 6)).astype(np.float32) for _ in range(4)]
        agg = aggregate(maps)
        for m in maps:
            assert (agg >= m).all()

    def test_empty_list_rejected(self):
        with pytest.raises(DataError):
            aggregate([])

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(DataError):
            aggregate([np.zeros((2, 2)), np.zeros((3, 2))])


def _profile_for(shapes: dict, rng) -> CalibrationProfile:
    layers = {}
    for name, (c, h, w) in shapes.items():
        stats = ChannelStats.empty(c)
        for _ in range(3):
            stats = stats.accumulate(rng.standard_normal((c, h, w)) + 1.0)
        layers[name] = stats
    return CalibrationProfile("toy", "synthetic", 3, layers)


class TestShallowDeep:
    def test_identical_sets_give_identical_maps(self, rng):
        shapes = {"a": (3, 10, 12)}
        profile = _profile_for(shapes, rng)
        cfg = LayerSetConfig(("a",), ("a",), small_spec(2), small_spec(2))
        trace = {"a": rng.standard_normal((3, 10, 12)).astype(np.float32)}
        shallow, deep = shallow_deep_heatmaps(trace, profile, cfg)
        np.testing.assert_array_equal(shallow, deep)

    def test_injected_blob_peaks_inside_box(self, rng):
        shapes = {"s1": (4, 24, 32), "s2": (6, 24, 32), "d1": (4, 24, 32)}
        profile = _profile_for(shapes, rng)
        cfg = LayerSetConfig(
            ("s1", "s2"), ("d1",),
            PoolCascadeSpec(((5, 7), (3, 3)), (24, 32)),
            PoolCascadeSpec(((5, 7),), (24, 32)),
        )
        blob = (6, 14, 10, 22)
        trace = synth_trace(profile, shapes, 1.0, blob, blob_gain=8.0, seed=3)
        shallow, _ = shallow_deep_heatmaps(trace, profile, cfg)
        peak = np.unravel_index(np.argmax(shallow), shallow.shape)
        assert blob[0] <= peak[0] < blob[1] and blob[2] <= peak[1] < blob[3]

    def test_blob_in_shallow_layers_only_suppressed_in_deep(self, rng):
        shapes = {"s1": (4, 24, 32), "d1": (4, 24, 32)}
        profile = _profile_for(shapes, rng)
        cfg = LayerSetConfig(
            ("s1",), ("d1",),
            PoolCascadeSpec(((5, 7), (3, 3)), (24, 32)),
            PoolCascadeSpec(((5, 7),), (24, 32)),
        )
        blob = (8, 16, 12, 20)
        trace = synth_trace(profile, shapes, 0.5, blob, blob_gain=8.0, seed=5,
                            blob_layers=("s1",))
        shallow, deep = shallow_deep_heatmaps(trace, profile, cfg)
        region = np.s_[blob[0]:blob[1], blob[2]:blob[3]]
        assert deep[region].mean() < shallow[region].mean()

    def test_missing_layer_rejected(self, rng):
        shapes = {"a": (2, 8, 8)}
        profile = _profile_for(shapes, rng)
        cfg = LayerSetConfig(("a", "b"), ("a",), small_spec(1, (8, 8)), small_spec(1, (8, 8)))
        nodes = {"a": ad.as_node(rng.standard_normal((2, 8, 8)))}
        with pytest.raises(DataError, match="'b'"):
            set_heatmap_node(nodes, profile, cfg.shallow_layers, cfg.shallow_spec)

    def test_channel_mismatch_rejected(self, rng):
        shapes = {"a": (2, 8, 8)}
        profile = _profile_for(shapes, rng)
        nodes = {"a": ad.as_node(rng.standard_normal((3, 8, 8)))}
        with pytest.raises(DataError, match="channels"):
            set_heatmap_node(nodes, profile, ("a",), small_spec(1, (8, 8)))


def test_layer_set_config_json_round_trip(tmp_path):
    cfg = LayerSetConfig(("x", "y"), ("z",), small_spec(2), small_spec(1))
    path = tmp_path / "layers.json"
    cfg.save(path)
    assert LayerSetConfig.load(path) == cfg


def test_layer_config_rejects_mismatched_dims():
    with pytest.raises(ConfigError, match="share"):
        LayerSetConfig(("a",), ("b",), small_spec(1, (8, 14)), small_spec(1, (9, 14)))


def test_tone_map_range(rng):
    hm = rng.uniform(2.0, 9.0, size=(5, 5)).astype(np.float32)
    mapped = tone_map(hm)
    assert mapped.min() == pytest.approx(0.0) and mapped.max() == pytest.approx(1.0)
    np.testing.assert_array_equal(tone_map(np.full((3, 3), 4.2)), 0.0)
