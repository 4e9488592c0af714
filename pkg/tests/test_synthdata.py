import json

import numpy as np
import pytest

from mirrorfield.config import DataConfig
from mirrorfield.geometry import Camera, CameraExtrinsics, CameraIntrinsics, SymmetryTransform
from mirrorfield.synthdata import (
    AMBIENT, Dataset, Primitive, SceneSpec, generate_scene, load_dataset, make_dataset,
    oracle_render, orbit_camera, pose_delta,
)
from mirrorfield.renderer import to_uint8


def test_scene_generation_is_seeded_and_symmetric():
    for seed in range(20):
        a, b = generate_scene(seed), generate_scene(seed)
        assert a.to_record() == b.to_record()
        assert a.is_symmetric()
        sym = a.symmetry
        centers = [np.asarray(p.center) for p in a.primitives]
        for p in a.primitives:
            mc = sym.M[:3, :3] @ np.asarray(p.center)
            assert any(np.array_equal(mc, c) for c in centers)


def test_perturbation_breaks_symmetry():
    broken = [not generate_scene(s, perturbation=0.1).is_symmetric(tol=1e-6) for s in range(10)]
    assert all(broken)


def test_scene_record_round_trip():
    s = generate_scene(3, num_primitives=4)
    assert SceneSpec.from_record(json.loads(json.dumps(s.to_record()))).to_record() == s.to_record()
    with pytest.raises(ValueError):
        generate_scene(0, num_primitives=0)


def test_empty_scene_is_background():
    cam = orbit_camera(30, 20, 3.0, 16, 1.5)
    img = oracle_render(SceneSpec([]), cam, (0.1, 0.2, 0.3))
    assert np.array_equal(img, np.broadcast_to([0.1, 0.2, 0.3], (16, 16, 3)))


def test_centered_sphere_is_a_disk():
    size, f, dist, r = 65, 80.0, 4.0, 0.5
    cam = Camera(CameraIntrinsics.centered(size, size, f),
                 CameraExtrinsics(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, dist])))
    albedo = (0.2, 0.6, 0.9)
    img = oracle_render(SceneSpec([Primitive("sphere", (0.0, 0.0, 0.0), (r,), albedo)]), cam, (0, 0, 0))
    # silhouette radius of a sphere seen in perspective
    radius = f * r / np.sqrt(dist ** 2 - r ** 2)
    v, u = np.mgrid[0:size, 0:size]
    rho = np.hypot(u - 32, v - 32)
    hit = img.sum(-1) > 0
    assert hit[rho < radius - 1].all() and not hit[rho > radius + 1].any()
    # the center faces the headlight directly
    np.testing.assert_allclose(img[32, 32], albedo, atol=1e-12)
    assert img[hit].min() >= AMBIENT * min(albedo) - 1e-12


def test_box_and_capsule_occlusion_order():
    cam = Camera(CameraIntrinsics.centered(9, 9, 10.0), CameraExtrinsics(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, 4.0])))
    near = Primitive("box", (0.0, 0.0, 0.5), (0.2, 0.2, 0.2), (1.0, 0.0, 0.0))
    far = Primitive("capsule", (0.0, 0.0, -0.5), (0.3, 0.2), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0))
    img = oracle_render(SceneSpec([far, near]), cam, (0, 0, 0))
    assert img[4, 4, 0] > 0 and img[4, 4, 1] == 0


def test_mirrored_camera_gives_flipped_render():
    for seed in range(3):
        scene = generate_scene(seed)
        cam = orbit_camera(17.0 + 40 * seed, 25.0, 3.0, 32, 1.5)
        a = to_uint8(oracle_render(scene, cam))
        b = to_uint8(oracle_render(scene, cam.mirrored(SymmetryTransform())))
        assert np.abs(a[:, ::-1].astype(int) - b.astype(int)).max() <= 1


def test_pose_delta():
    a, b = orbit_camera(0, 0, 3, 8, 1), orbit_camera(90, 0, 3, 8, 1)
    assert pose_delta(a, b) == pytest.approx(90.0, abs=1e-9)
    assert pose_delta(a, a) == pytest.approx(0.0, abs=1e-6)


def test_dataset_layout_and_splits(tiny_dataset):
    ds = tiny_dataset
    assert ds.scenes == ["0000", "0001"]
    train, test = ds.split("train"), ds.split("test")
    assert len(train) + len(test) == 2 * 6
    assert not set(train) & set(test)
    for scene, view in test:
        cams = ds.cameras(scene)
        assert pose_delta(cams[ds.reference_view(scene)], cams[view]) >= 90.0
    assert ds.reference_view("0000") == 0
    assert ds.image("0000", 1).shape == (16, 16, 3)


def test_stored_images_match_oracle(tiny_dataset):
    ds = tiny_dataset
    for scene in ds.scenes:
        spec = ds.scene_spec(scene)
        for k, cam in enumerate(ds.cameras(scene)):
            expected = to_uint8(oracle_render(spec, cam, ds.background)) / 255.0
            assert np.array_equal(ds.image(scene, k), expected)


def test_regeneration_is_byte_identical(tmp_path):
    cfg = DataConfig(image_size=16, holdout_scenes=1)
    make_dataset(tmp_path / "a", 2, 4, 16, 11, cfg)
    make_dataset(tmp_path / "b", 2, 4, 16, 11, cfg)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 1 + 2 * (2 + 4)
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    ds = load_dataset(tmp_path / "a")
    assert "0000" not in ds.train_views and "0001" in ds.train_views


def test_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        make_dataset(tmp_path / "missing" / "x", 1, 2, 16, 0)
    with pytest.raises(FileNotFoundError):
        Dataset(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ValueError):
        Dataset(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        Dataset(tmp_path)


def test_missing_and_unknown_entries(tmp_path):
    make_dataset(tmp_path / "d", 1, 3, 16, 0, DataConfig(image_size=16))
    ds = load_dataset(tmp_path / "d")
    with pytest.raises(KeyError):
        ds.cameras("9999")
    with pytest.raises(KeyError):
        ds.view("0000", 7)
    (tmp_path / "d" / "scenes" / "0000" / "views" / "1.png").unlink()
    with pytest.raises(FileNotFoundError):
        ds.image("0000", 1)
    (tmp_path / "d" / "scenes" / "0000" / "cameras.json").write_text("[{\"fx\": 1}]")
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "d").cameras("0000")
