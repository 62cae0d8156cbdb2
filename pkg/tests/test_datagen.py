import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saanet.datagen import (
    DecimationError,
    LayerSpec,
    SceneSpec,
    count_training_pairs,
    crop_origins,
    decimate_angular,
    decimate_angular_array,
    gen_synthetic_slice,
    layer_texture,
    make_training_pairs,
    mask_value,
    read_packed_pairs,
    synthetic_pairs,
    two_layer_scene,
    uniform_scene,
    write_packed_pairs,
    CANVAS_MARGIN,
)
from saanet.lightfield import Slice3D, extract_epi, shear_slice


def xcorr_shift(a, b, max_shift=6):
    """Integer k maximizing the normalized correlation of b[x] with a[x - k]."""
    best, best_k = -np.inf, None
    n = len(a)
    for k in range(-max_shift, max_shift + 1):
        lo, hi = max(0, k), min(n, n + k)
        u, v = a[lo - k:hi - k], b[lo:hi]
        u, v = u - u.mean(), v - v.mean()
        score = (u @ v) / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12)
        if score > best:
            best, best_k = score, k
    return best_k


def composite_by_rays(spec: SceneSpec, seed: int) -> np.ndarray:
    """Independent per-ray compositor: walk layers front to back, first opaque hit wins."""
    w, h = spec.spatial_res
    out = np.zeros((w, h, spec.angular_res))
    textures = [layer_texture(ly, w, h, CANVAS_MARGIN, seed) for ly in spec.layers]
    for s in range(spec.angular_res):
        for x in range(w):
            for y in range(h):
                for layer, tex in reversed(list(zip(spec.layers, textures))):
                    u = x - s * layer.disparity
                    if mask_value(layer.mask, np.array([u]))[0]:
                        out[x, y, s] = tex[int(round(u)) + CANVAS_MARGIN, y]
                        break
    return out


class TestSyntheticScenes:
    def test_zero_disparity_views_identical(self):
        slc, disp = gen_synthetic_slice(uniform_scene(0.0, seed=1, angular_res=5))
        for s in range(1, 5):
            np.testing.assert_array_equal(slc.data[..., s], slc.data[..., 0])
        assert np.all(disp == 0)

    def test_integer_translation(self):
        slc, _ = gen_synthetic_slice(uniform_scene(2.0, seed=2, spatial_res=(48, 6), angular_res=6))
        for s in range(6):
            np.testing.assert_array_equal(slc.data[2 * s:, :, s], slc.data[:48 - 2 * s, :, 0])

    def test_two_layers_match_ray_compositor(self):
        spec = SceneSpec(
            [LayerSpec(11, 1.0), LayerSpec(12, 3.0, {"kind": "stripes", "period": 10, "duty": 0.5})],
            (40, 3), 5,
        )
        slc, disp = gen_synthetic_slice(spec, seed=0)
        np.testing.assert_array_equal(slc.data, composite_by_rays(spec, 0))
        assert set(np.unique(disp)) == {1.0, 3.0}
        # the front layer's columns march 3 px per view and hide the back layer
        epi_d = disp[:, 0, :]
        for s in range(4):
            front = np.flatnonzero(epi_d[:, s] == 3.0)
            front = front[front + 3 < 40]
            assert np.all(epi_d[front + 3, s + 1] == 3.0)

    @pytest.mark.parametrize("disparity", [0, 1, 2, 3])
    def test_epi_slope_by_cross_correlation(self, disparity):
        slc, _ = gen_synthetic_slice(uniform_scene(float(disparity), seed=20 + disparity, spatial_res=(64, 8),
                                                   angular_res=5))
        for y in range(8):
            epi = extract_epi(slc, y).data
            for s in range(4):
                assert xcorr_shift(epi[:, s], epi[:, s + 1]) == disparity

    def test_non_lambertian_gain(self):
        base = uniform_scene(0.0, seed=3, angular_res=8, contrast=(0.2, 0.6))
        spec = SceneSpec(base.layers, base.spatial_res, 8, {"layer": 0, "amplitude": 0.3, "period": 8})
        lam, _ = gen_synthetic_slice(base, seed=3)
        nl, _ = gen_synthetic_slice(spec, seed=3)
        for s in range(8):
            gain = 1 + 0.3 * np.sin(2 * np.pi * s / 8)
            np.testing.assert_allclose(nl.data[..., s], np.clip(lam.data[..., s] * gain, 0, 1))

    def test_deterministic(self):
        spec = two_layer_scene(1.0, 2.0, seed=5)
        a, _ = gen_synthetic_slice(spec, seed=9)
        b, _ = gen_synthetic_slice(spec, seed=9)
        np.testing.assert_array_equal(a.data, b.data)

    def test_scene_spec_round_trip(self):
        spec = two_layer_scene(1.0, 2.0, seed=5)
        again = SceneSpec.from_dict(spec.to_dict())
        assert again == spec

    @given(st.sampled_from([-2.0, -1.0, 0.0, 1.0, 2.0]), st.sampled_from([-2, -1, 1, 2]))
    @settings(max_examples=12, deadline=None)
    def test_shear_composition(self, delta, d):
        # content at x + s*delta; after shearing by d it sits at x + s*(delta - d)
        w = 80
        slc, _ = gen_synthetic_slice(uniform_scene(delta, seed=4, spatial_res=(w, 2), angular_res=5))
        sheared = shear_slice(slc, d)
        ref, _ = gen_synthetic_slice(uniform_scene(delta - d, seed=4, spatial_res=(w, 2), angular_res=5))
        shift = -min(0, 4 * d)  # crop origin of the sheared slice in source columns
        n = sheared.shape[0]
        np.testing.assert_array_equal(sheared.data, ref.data[shift:shift + n])


class TestDecimate:
    def test_seventeen_to_five(self):
        slc = Slice3D(np.random.default_rng(0).uniform(size=(4, 2, 17)))
        out = decimate_angular(slc, 4)
        assert out.angular_size == 5
        np.testing.assert_array_equal(out.data, slc.data[..., [0, 4, 8, 12, 16]])

    def test_ninety_seven_to_seven(self):
        assert decimate_angular_array(np.zeros((2, 2, 97)), 16).shape[-1] == 7

    def test_indivisible(self):
        with pytest.raises(DecimationError):
            decimate_angular_array(np.zeros((2, 2, 16)), 4)


def slice_of(w, h, a, seed=0):
    return Slice3D(np.random.default_rng(seed).uniform(size=(w, h, a)))


class TestTrainingPairs:
    def test_seventeen_view_slice(self):
        pairs = list(make_training_pairs([slice_of(64, 24, 17)], alpha_a=4, in_views=5, shear_amounts=()))
        assert len(pairs) == 1
        p = pairs[0]
        assert p.input.shape == (64, 24, 5) and p.target.shape == (64, 24, 17)
        np.testing.assert_array_equal(p.input, p.target[..., [0, 4, 8, 12, 16]])

    def test_decimation_invariant_all_pairs(self):
        slices = [slice_of(150, 70, 19, seed=i) for i in range(3)]
        pairs = list(make_training_pairs(slices, alpha_a=4, in_views=5))
        assert pairs
        for p in pairs:
            np.testing.assert_array_equal(decimate_angular_array(p.target, 4), p.input)

    def test_alpha3_six_to_sixteen(self):
        pairs = list(make_training_pairs([slice_of(70, 30, 17)], alpha_a=3, in_views=6, shear_amounts=()))
        # two angular windows of 16 inside 17 views
        assert len(pairs) == 2
        assert pairs[1].meta["crop"] == (0, 0, 1)
        assert all(p.target.shape[-1] == 16 and p.input.shape[-1] == 6 for p in pairs)

    def test_augmentation_off(self):
        pairs = list(make_training_pairs([slice_of(200, 24, 17)], 4, 5, shear_amounts=()))
        assert {p.meta["shear"] for p in pairs} == {0}

    def test_shears_add_examples(self):
        pairs = list(make_training_pairs([slice_of(200, 24, 17)], 4, 5))
        counts = {d: sum(p.meta["shear"] == d for p in pairs) for d in (-2, 0, 2)}
        # width 200 -> 4 crops; sheared width 200 - 32 = 168 -> 3 crops each
        assert counts == {-2: 3, 0: 4, 2: 3}

    @given(st.integers(64, 260), st.integers(24, 120), st.integers(17, 21))
    @settings(max_examples=25, deadline=None)
    def test_count_formula_matches_enumeration(self, w, h, a):
        slc = slice_of(w, h, a)
        enumerated = sum(1 for _ in make_training_pairs([slc], 4, 5, min_variance=-1))
        assert enumerated == count_training_pairs(w, h, a, 4, 5)

    @given(st.integers(64, 400), st.integers(24, 200))
    @settings(max_examples=30)
    def test_crop_coverage(self, w, h):
        xs, ys = crop_origins(w, 64), crop_origins(h, 24)
        assert all(x + 64 <= w for x in xs) and all(y + 24 <= h for y in ys)
        covered = np.zeros(w, dtype=bool)
        for x in xs:
            covered[x:x + 64] = True
        # every column up to the last lattice window is covered
        assert covered[:xs[-1] + 64].all()
        assert w - (xs[-1] + 64) < 40

    def test_flat_patches_dropped(self):
        flat = Slice3D(np.full((64, 24, 17), 0.5))
        assert list(make_training_pairs([flat], 4, 5, shear_amounts=())) == []

    def test_stanford_scale_count(self):
        # 12 light fields of 17x17 views at a nominal 1024x1024, 17 ROW + 17 COL slices each
        per_slice = count_training_pairs(1024, 1024, 17, alpha_a=4, in_views=5)
        assert per_slice == 25 * 26 + 2 * 24 * 26
        total = 12 * 34 * per_slice
        assert total == 774_384
        assert 3.3e5 < total < 1.4e6  # same order as the ~6.7e5 reported for the real archive

    def test_packed_round_trip(self, tmp_path):
        pairs = synthetic_pairs(3)
        n = write_packed_pairs(pairs, tmp_path / "pairs.bin", alpha_a=4)
        assert n == 3
        x, y, alpha = read_packed_pairs(tmp_path / "pairs.bin")
        assert alpha == 4 and x.shape == (3, 64, 24, 5) and y.shape == (3, 64, 24, 17)
        np.testing.assert_array_equal(x[1], pairs[1].input.astype(np.float32))
        raw = (tmp_path / "pairs.bin").read_bytes()
        assert raw[:8] == b"SAAPAIR1"
        assert np.frombuffer(raw[8:32], dtype="<u4").tolist() == [3, 64, 24, 5, 17, 4]

    def test_synthetic_pairs_decimation(self):
        for p in synthetic_pairs(6, alpha_a=4):
            np.testing.assert_array_equal(p.input, p.target[..., ::4])
