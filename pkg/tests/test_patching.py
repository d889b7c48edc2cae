import numpy as np
import pytest

from zmask import autodiff as ad
from zmask.defaults import TRANSFORM_RANGES
from zmask.errors import DataError
from zmask.fusion import apply_mask
from zmask.patching import TransformSpec, apply_patch, apply_patch_node, sample_transform
from zmask.scenes import generate_scene


def identity_spec(row=10, col=20, seed=0):
    return TransformSpec(
        brightness_delta=0.0, contrast_factor=1.0, noise_std=0.0,
        scale_factor=1.0, row=row, col=col, noise_seed=seed,
    )


class TestSampleTransform:
    def test_fixed_seed_repeats(self):
        a = sample_transform(99, (96, 192), (24, 48))
        b = sample_transform(99, (96, 192), (24, 48))
        assert a == b

    def test_ranges_respected(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            spec = sample_transform(rng, (96, 192), (24, 48))
            assert TRANSFORM_RANGES["brightness_delta"][0] <= spec.brightness_delta <= TRANSFORM_RANGES["brightness_delta"][1]
            assert TRANSFORM_RANGES["contrast_factor"][0] <= spec.contrast_factor <= TRANSFORM_RANGES["contrast_factor"][1]
            assert TRANSFORM_RANGES["noise_std"][0] <= spec.noise_std <= TRANSFORM_RANGES["noise_std"][1]
            assert TRANSFORM_RANGES["scale_factor"][0] <= spec.scale_factor <= TRANSFORM_RANGES["scale_factor"][1]
            sh, sw = spec.scaled_dims((24, 48))
            assert 0 <= spec.row <= 96 - sh and 0 <= spec.col <= 192 - sw

    def test_brightness_mean_near_zero(self):
        rng = np.random.default_rng(7)
        vals = [sample_transform(rng, (96, 192), (12, 24)).brightness_delta for _ in range(10_000)]
        assert abs(float(np.mean(vals))) < 0.005

    def test_oversized_patch_rejected(self):
        with pytest.raises(DataError):
            sample_transform(0, (20, 20), (40, 40))


class TestApplyPatch:
    def test_identity_transform_pastes_exactly(self, rng):
        image = generate_scene(0).image
        patch = rng.uniform(0.2, 0.8, size=(3, 24, 48)).astype(np.float32)
        spec = identity_spec()
        result = apply_patch(image, patch, spec)
        np.testing.assert_array_equal(result.image[:, 10:34, 20:68], patch)
        assert result.footprint.sum() == 24 * 48

    def test_pixels_outside_footprint_untouched(self, rng):
        image = generate_scene(1).image
        patch = rng.uniform(size=(3, 12, 24)).astype(np.float32)
        spec = sample_transform(3, image.shape[1:], (12, 24))
        result = apply_patch(image, patch, spec)
        outside = result.footprint == 0
        np.testing.assert_array_equal(result.image[:, outside], image[:, outside])

    def test_brightness_clamps(self):
        image = np.zeros((3, 40, 40), dtype=np.float32)
        patch = np.full((3, 8, 8), 0.95, dtype=np.float32)
        spec = TransformSpec(0.1, 1.0, 0.0, 1.0, 5, 5, 0)
        result = apply_patch(image, patch, spec)
        np.testing.assert_allclose(result.image[:, 5:13, 5:13], 1.0)

    def test_scale_shrinks_footprint(self):
        image = np.zeros((3, 100, 100), dtype=np.float32)
        patch = np.ones((3, 40, 40), dtype=np.float32)
        spec = TransformSpec(0.0, 1.0, 0.0, 0.8, 0, 0, 0)
        result = apply_patch(image, patch, spec)
        assert result.footprint.sum() == 32 * 32

    def test_mask_resized_to_heatmap_dims(self, rng):
        image = generate_scene(2).image
        patch = rng.uniform(size=(3, 24, 48)).astype(np.float32)
        result = apply_patch(image, patch, identity_spec(), resize_dims=(48, 96))
        assert result.footprint_resized.shape == (48, 96)
        assert set(np.unique(result.footprint_resized)) <= {0.0, 1.0}

    def test_patch_value_range_enforced(self):
        with pytest.raises(DataError):
            apply_patch(np.zeros((3, 50, 50), dtype=np.float32),
                        np.full((3, 4, 4), 1.5, dtype=np.float32), identity_spec(0, 0))

    def test_out_of_bounds_rejected(self, rng):
        patch = rng.uniform(size=(3, 24, 48)).astype(np.float32)
        with pytest.raises(DataError):
            apply_patch(np.zeros((3, 40, 40), dtype=np.float32), patch, identity_spec(30, 0))

    def test_mask_then_apply_restores_non_patch_pixels(self, rng):
        image = generate_scene(4).image
        patch = rng.uniform(size=(3, 16, 32)).astype(np.float32)
        spec = sample_transform(5, image.shape[1:], (16, 32))
        result = apply_patch(image, patch, spec)
        masked = apply_mask(result.image, 1.0 - result.footprint)
        outside = result.footprint == 0
        np.testing.assert_array_equal(masked[:, outside], image[:, outside])
        assert (masked[:, result.footprint == 1] == 0).all()

    def test_noise_is_seed_deterministic(self, rng):
        image = generate_scene(6).image
        patch = rng.uniform(size=(3, 12, 24)).astype(np.float32)
        spec = TransformSpec(0.02, 1.1, 0.03, 1.0, 4, 7, noise_seed=42)
        a = apply_patch(image, patch, spec)
        b = apply_patch(image, patch, spec)
        np.testing.assert_array_equal(a.image, b.image)


class TestApplyPatchNode:
    def test_node_path_matches_array_path(self, rng):
        image = generate_scene(8).image
        patch = rng.uniform(size=(3, 16, 32)).astype(np.float32)
        spec = sample_transform(11, image.shape[1:], (16, 32))
        plain = apply_patch(image, patch, spec).image
        node = apply_patch_node(image, ad.leaf(patch), spec)
        np.testing.assert_array_equal(node.value, plain)

    def test_gradient_reaches_patch(self, rng):
        image = generate_scene(9).image
        patch = ad.leaf(rng.uniform(0.3, 0.7, size=(3, 12, 24)).astype(np.float32))
        spec = sample_transform(13, image.shape[1:], (12, 24))
        out = ad.sum_all(ad.square(apply_patch_node(image, patch, spec)))
        (g,) = ad.backward(out, [patch])
        assert g.shape == patch.value.shape
        assert np.abs(g).sum() > 0
