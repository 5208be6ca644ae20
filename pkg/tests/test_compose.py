import json

import numpy as np
import pytest

from artwalk.compose import (
    ForegroundCutout,
    GroundTruthBox,
    SceneManifest,
    apply_perturbation,
    compose_scene,
    inject_art,
    load_manifest,
    materialize,
    save_manifest,
)
from artwalk.errors import PlacementError, ShapeMismatchError
from artwalk.geometry import Polygon, polygon_to_mask
from artwalk.raster import Raster, save_image


def solid(w, h, color):
    arr = np.empty((h, w, 3))
    arr[:, :] = color
    return Raster(arr)


@pytest.fixture
def scene(rng):
    return Raster(rng.random((40, 60, 3)))


RECT_A = Polygon([(5, 5), (25, 5), (25, 15), (5, 15)])
RECT_B = Polygon([(30, 20), (55, 20), (55, 35), (30, 35)])


class TestInjectArt:
    def test_empty_region_list_identity(self, scene):
        out = inject_art(scene, [], solid(8, 8, (1, 0, 0)))
        assert np.array_equal(out.data, scene.data)

    def test_solid_red_confined_to_region(self, scene):
        out = inject_art(scene, [RECT_A], solid(8, 8, (1, 0, 0)))
        mask = polygon_to_mask(RECT_A, (scene.width, scene.height)).bits
        assert np.all(out.data[mask] == (1.0, 0.0, 0.0))
        assert np.array_equal(out.data[~mask], scene.data[~mask])

    def test_outside_pixels_bit_identical(self, scene, rng):
        art = Raster(rng.random((10, 20, 3)))
        out = inject_art(scene, [RECT_A, RECT_B], art)
        union = (
            polygon_to_mask(RECT_A, (60, 40)).bits
            | polygon_to_mask(RECT_B, (60, 40)).bits
        )
        assert np.array_equal(out.data[~union], scene.data[~union])

    def test_disjoint_regions_order_independent(self, scene, rng):
        art = Raster(rng.random((10, 20, 3)))
        both = inject_art(scene, [RECT_A, RECT_B], art)
        ab = inject_art(inject_art(scene, [RECT_A], art), [RECT_B], art)
        ba = inject_art(inject_art(scene, [RECT_B], art), [RECT_A], art)
        assert np.array_equal(both.data, ab.data)
        assert np.array_equal(ab.data, ba.data)

    def test_degenerate_region_collected_others_processed(self, scene):
        thin = Polygon([(0, 0), (10, 0), (20, 0)])  # zero-area: degenerate
        errors = []
        with pytest.warns(UserWarning, match="region 0 skipped"):
            out = inject_art(scene, [thin, RECT_A], solid(8, 8, (0, 1, 0)), errors=errors)
        assert len(errors) == 1 and errors[0][0] == 0
        mask = polygon_to_mask(RECT_A, (60, 40)).bits
        assert np.all(out.data[mask] == (0.0, 1.0, 0.0))

    def test_deterministic(self, scene, rng):
        art = Raster(rng.random((10, 20, 3)))
        a = inject_art(scene, [RECT_A, RECT_B], art)
        b = inject_art(scene, [RECT_A, RECT_B], art)
        assert np.array_equal(a.data, b.data)


def make_cutout(w, h, color, alpha=1.0):
    arr = np.empty((h, w, 4))
    arr[:, :, :3] = color
    arr[:, :, 3] = alpha
    return arr


class TestComposeScene:
    def test_no_art_no_foregrounds(self, scene):
        out = compose_scene(scene, [RECT_A], None, [])
        assert np.array_equal(out.data, scene.data)

    def test_opaque_cutout_copied_exactly(self, scene, rng):
        patch = rng.random((6, 4, 4))
        patch[:, :, 3] = 1.0
        fg = ForegroundCutout(Raster(patch), offset=(10, 20))
        out = compose_scene(scene, [], None, [fg])
        assert np.array_equal(out.data[20:26, 10:14], patch[:, :, :3])

    def test_cutout_wins_over_art(self, scene):
        fg = ForegroundCutout(Raster(make_cutout(4, 6, (0, 0, 1))), offset=(8, 7))
        out = compose_scene(scene, [RECT_A], solid(8, 8, (1, 0, 0)), [fg])
        assert np.all(out.data[7:13, 8:12] == (0.0, 0.0, 1.0))
        mask = polygon_to_mask(RECT_A, (60, 40)).bits.copy()
        mask[7:13, 8:12] = False
        assert np.all(out.data[mask] == (1.0, 0.0, 0.0))

    def test_two_layer_over_composite_oracle(self, scene, rng):
        patch = rng.random((6, 5, 4))  # fractional alpha
        fg = ForegroundCutout(Raster(patch), offset=(6, 6))
        art = solid(8, 8, (1, 0, 0))
        out = compose_scene(scene, [RECT_A], art, [fg])
        base = inject_art(scene, [RECT_A], art).data
        for dy in range(6):
            for dx in range(5):
                a = patch[dy, dx, 3]
                expected = patch[dy, dx, :3] * a + base[6 + dy, 6 + dx] * (1 - a)
                np.testing.assert_allclose(out.data[6 + dy, 6 + dx], expected, atol=1e-12)

    def test_out_of_bounds_cutout_names_index(self, scene):
        good = ForegroundCutout(Raster(make_cutout(2, 2, (0, 0, 0))), offset=(0, 0))
        bad = ForegroundCutout(Raster(make_cutout(10, 10, (0, 0, 0))), offset=(55, 35))
        with pytest.raises(PlacementError, match="cutout 1"):
            compose_scene(scene, [], None, [good, bad])

    def test_opaque_foregrounds_survive_any_art(self, scene, rng):
        patch = rng.random((6, 4, 4))
        patch[:, :, 3] = 1.0
        fg = ForegroundCutout(Raster(patch), offset=(10, 8))
        for color in ((1, 0, 0), (0, 1, 0), (0.3, 0.7, 0.2)):
            out = compose_scene(scene, [RECT_A], solid(5, 5, color), [fg])
            assert np.array_equal(out.data[8:14, 10:14], patch[:, :, :3])

    def test_deterministic(self, scene, rng):
        patch = rng.random((6, 5, 4))
        fg = ForegroundCutout(Raster(patch), offset=(3, 3))
        art = Raster(rng.random((7, 9, 3)))
        a = compose_scene(scene, [RECT_A], art, [fg])
        b = compose_scene(scene, [RECT_A], art, [fg])
        assert np.array_equal(a.data, b.data)


class TestApplyPerturbation:
    def test_zero_delta_identity(self, scene):
        out = apply_perturbation(scene, np.zeros(scene.data.shape))
        assert np.array_equal(out.data, scene.data)

    def test_clamp_at_one(self):
        art = Raster(np.full((2, 2, 3), 0.95))
        out = apply_perturbation(art, np.full((2, 2, 3), 0.10))
        assert np.all(out.data == 1.0)

    def test_elementwise_oracle(self, rng):
        art = Raster(rng.random((5, 6, 3)))
        delta = rng.uniform(-0.3, 0.3, size=(5, 6, 3))
        out = apply_perturbation(art, delta)
        for i in range(5):
            for j in range(6):
                for c in range(3):
                    expected = min(1.0, max(0.0, art.data[i, j, c] + delta[i, j, c]))
                    assert out.data[i, j, c] == expected

    def test_shape_mismatch(self, scene):
        with pytest.raises(ShapeMismatchError):
            apply_perturbation(scene, np.zeros((2, 2, 3)))

    def test_output_stays_in_range(self, rng):
        art = Raster(rng.random((4, 4, 3)))
        delta = rng.uniform(-2, 2, size=(4, 4, 3))
        out = apply_perturbation(art, delta)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0


class TestManifestIO:
    def test_roundtrip(self, tmp_path, rng):
        bg = Raster(rng.random((20, 30, 3)))
        save_image(bg, tmp_path / "bg.png")
        cut = Raster(make_cutout(3, 5, (0.5, 0.5, 0.5)))
        save_image(cut, tmp_path / "cut.png")
        manifest = SceneManifest(
            background="bg.png",
            regions=[("cw", RECT_A)],
            ground_truth=[GroundTruthBox(1, 2, 3, 5)],
            foregrounds=[("cut.png", (4, 6))],
            base_dir=tmp_path,
        )
        save_manifest(manifest, tmp_path / "manifest.json")
        loaded = load_manifest(tmp_path / "manifest.json")
        assert loaded.background == "bg.png"
        assert loaded.regions[0][0] == "cw"
        assert np.array_equal(loaded.regions[0][1].vertices, RECT_A.vertices)
        assert loaded.ground_truth[0] == GroundTruthBox(1, 2, 3, 5)
        scene = materialize(loaded)
        assert scene.background.width == 30
        assert scene.foregrounds[0].offset == (4, 6)

    def test_schema_fields(self, tmp_path):
        manifest = SceneManifest("bg.png", [("r", RECT_A)], [], [], base_dir=tmp_path)
        save_manifest(manifest, tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert set(doc) == {"background", "regions", "ground_truth", "foregrounds"}
        assert doc["regions"][0]["name"] == "r"
        assert doc["regions"][0]["polygon"][0] == [5.0, 5.0]

    def test_malformed_manifest_is_input_error(self, tmp_path):
        from artwalk.errors import InputError

        bad = tmp_path / "bad.json"
        bad.write_text('{"regions": []}')  # no background
        with pytest.raises(InputError):
            load_manifest(bad)
        bad.write_text("not json")
        with pytest.raises(InputError):
            load_manifest(bad)

    def test_out_of_bounds_ground_truth_rejected(self, tmp_path, rng):
        from artwalk.errors import InputError

        bg = Raster(rng.random((20, 30, 3)))
        save_image(bg, tmp_path / "bg.png")
        manifest = SceneManifest(
            "bg.png", [], [GroundTruthBox(25, 15, 10, 10)], [], base_dir=tmp_path
        )
        with pytest.raises(InputError, match="exceeds"):
            materialize(manifest)
