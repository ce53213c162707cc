import numpy as np
import pytest

from octformer.errors import ConfigError, DataError
from octformer.octree import QuantizedCloud
from octformer.pointcloud import (
    AugmentConfig,
    RawCloud,
    augment,
    load_point_cloud,
    normalize_cloud,
    read_points,
    write_points,
)


def test_read_xyz_three_lines(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 2 3\n4 5 6\n")
    raw = read_points(str(p))
    assert raw.positions.shape == (3, 3)
    assert raw.colors is None and raw.normals is None


def test_read_xyz_with_color_and_normals(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0 0.5 0.25 1 0 0 1\n1 1 1 1 0 0 0 1 0\n")
    raw = read_points(str(p))
    assert raw.colors.shape == (2, 3)
    assert raw.normals.shape == (2, 3)
    assert raw.colors[0].tolist() == [0.5, 0.25, 1.0]


def test_read_xyz_errors(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("1 2\n")
    with pytest.raises(DataError):
        read_points(str(p))
    p.write_text("1 2 3\n1 2\n")
    with pytest.raises(DataError):
        read_points(str(p))
    p.write_text("1 2 zebra\n")
    with pytest.raises(DataError):
        read_points(str(p))
    p.write_text("")
    with pytest.raises(DataError):
        read_points(str(p))
    p.write_text("1 2 nan\n")
    with pytest.raises(DataError):
        read_points(str(p))


def test_xyz_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = RawCloud(rng.normal(size=(50, 3)) * 10,
                   colors=rng.random((50, 3)),
                   normals=rng.normal(size=(50, 3)))
    path = tmp_path / "out.xyz"
    write_points(str(path), raw)
    back = read_points(str(path))
    assert np.allclose(back.positions, raw.positions, atol=1e-6)
    assert np.allclose(back.colors, raw.colors, atol=1e-6)
    assert np.allclose(back.normals, raw.normals, atol=1e-6)


def test_ply_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    raw = RawCloud(rng.normal(size=(20, 3)), colors=rng.random((20, 3)))
    path = tmp_path / "out.ply"
    write_points(str(path), raw)
    back = read_points(str(path))
    assert np.allclose(back.positions, raw.positions, atol=1e-6)
    assert np.allclose(back.colors, raw.colors, atol=1e-6)


def test_ply_uchar_colors_scaled(tmp_path):
    p = tmp_path / "c.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
        "0 0 0 255 0 128\n1 1 1 0 255 64\n")
    raw = read_points(str(p))
    assert np.allclose(raw.colors[0], [1.0, 0.0, 128 / 255])
    assert np.allclose(raw.colors[1], [0.0, 1.0, 64 / 255])


def test_ply_errors(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text("not a ply\n")
    with pytest.raises(DataError):
        read_points(str(p))
    p.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(DataError):
        read_points(str(p))


def test_normalize_fit_bounding_box():
    raw = RawCloud(np.array([[0.0, 0.0, 0.0], [10.0, 5.0, 2.0]]))
    cloud = normalize_cloud(raw, depth=4)
    assert cloud.positions.min() >= 0
    assert cloud.positions.max() < 1
    assert np.allclose(cloud.origin, [0, 0, 0])


def test_normalize_with_scale():
    raw = RawCloud(np.array([[0.0, 0.0, 0.0], [1.5, 0.5, 0.5]]))
    cloud = normalize_cloud(raw, depth=4, scale=0.25)  # cube spans 4 units
    assert np.allclose(cloud.positions[1], [1.5 / 4, 0.5 / 4, 0.5 / 4])
    with pytest.raises(DataError):
        normalize_cloud(RawCloud(np.array([[0.0, 0, 0], [5.0, 0, 0]])),
                        depth=4, scale=0.25)


def test_load_point_cloud(tmp_path):
    p = tmp_path / "pts.xyz"
    p.write_text("0 0 0\n1 1 1\n2 0 1\n")
    cloud = load_point_cloud(str(p), depth=5)
    assert isinstance(cloud, QuantizedCloud)
    assert cloud.num_points == 3


def test_augment_identity_ranges():
    rng = np.random.default_rng(2)
    cloud = QuantizedCloud(rng.random((40, 3)) * 0.8 + 0.1, 5)
    ops = AugmentConfig(rotation_deg=(0, 0), scale=(1, 1), translation=(0, 0))
    out = augment(cloud, ops, seed=0)
    assert np.allclose(out.positions, cloud.positions, atol=1e-12)


def test_augment_quarter_turn():
    center = np.full(3, 0.5)
    cloud = QuantizedCloud(np.array([center + [0.3, 0, 0], center]), 5)
    ops = AugmentConfig(rotation_deg=(90, 90), scale=(1, 1), translation=(0, 0))
    out = augment(cloud, ops, seed=1)
    assert np.allclose(out.positions[0] - center, [0, 0.3, 0], atol=1e-6)
    assert np.allclose(out.positions[1], center, atol=1e-12)


def test_augment_rotates_normals_with_positions():
    center = np.full(3, 0.5)
    cloud = QuantizedCloud(np.array([center + [0.2, 0, 0]]), 5,
                           normals=np.array([[1.0, 0.0, 0.0]]))
    ops = AugmentConfig(rotation_deg=(90, 90), scale=(1, 1), translation=(0, 0))
    out = augment(cloud, ops, seed=2)
    assert np.allclose(out.normals[0], [0, 1, 0], atol=1e-6)
    assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0)


def test_augment_scale_preserves_distance_ratios():
    rng = np.random.default_rng(3)
    pos = rng.random((20, 3)) * 0.4 + 0.3
    cloud = QuantizedCloud(pos, 5)
    ops = AugmentConfig(rotation_deg=(-180, 180), scale=(0.75, 1.25),
                        translation=(0, 0))
    out = augment(cloud, ops, seed=4)
    d_in = np.linalg.norm(pos[1:] - pos[0], axis=1)
    d_out = np.linalg.norm(out.positions[1:] - out.positions[0], axis=1)
    ratios = d_out / d_in
    assert ratios.max() - ratios.min() < 1e-9


def test_augment_deterministic_and_clamped():
    rng = np.random.default_rng(5)
    cloud = QuantizedCloud(rng.random((100, 3)), 5)
    ops = AugmentConfig()
    a = augment(cloud, ops, seed=6)
    b = augment(cloud, ops, seed=6)
    assert np.array_equal(a.positions, b.positions)
    assert a.positions.min() >= 0 and a.positions.max() < 1


def test_augment_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(scale=(1.5, 0.5))
    with pytest.raises(ConfigError):
        AugmentConfig(scale=(-1.0, 1.0))
