import math

import numpy as np
import pytest

from reloc_kit.errors import ZeroBaselineError
from reloc_kit.geometry import (
    Pose,
    camera_center,
    relative_pose,
    rotation_angle,
    translation_angle,
)
from reloc_kit.synthetic import (
    COLLINEARITY_TOL,
    MIN_SEPARATION_FRACTION,
    NoiseModel,
    _line_angle,
    _worst_triple,
    generate_scene,
    mix_seed,
    oracle_relative,
    random_rotation,
    random_unit_vector,
)


def all_centers(scene):
    return np.array([camera_center(p) for _, p in scene.database]
                    + [camera_center(p) for _, p in scene.queries])


def test_generate_scene_deterministic():
    a = generate_scene(6, 3, extent=4.0, seed=11)
    b = generate_scene(6, 3, extent=4.0, seed=11)
    for (id_a, pose_a), (id_b, pose_b) in zip(a.database + a.queries,
                                              b.database + b.queries):
        assert id_a == id_b
        assert np.array_equal(pose_a.rotation, pose_b.rotation)
        assert np.array_equal(pose_a.translation, pose_b.translation)
    c = generate_scene(6, 3, extent=4.0, seed=12)
    assert not np.array_equal(all_centers(a), all_centers(c))


def test_generate_scene_ids_and_counts():
    scene = generate_scene(4, 2, seed=0)
    assert [i for i, _ in scene.database] == ["db000", "db001", "db002", "db003"]
    assert [i for i, _ in scene.queries] == ["q000", "q001"]
    assert scene.layout == "general"
    assert scene.seed == 0


def test_general_layout_avoids_degenerate_placement():
    for seed in range(5):
        scene = generate_scene(7, 2, extent=5.0, seed=seed)
        centers = all_centers(scene)
        assert np.all(np.abs(centers) <= 2.5 + 1e-12)
        dists = np.linalg.norm(centers[:, None] - centers[None, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        assert dists.min() >= MIN_SEPARATION_FRACTION * 5.0
        worst, _ = _worst_triple(centers)
        assert worst > COLLINEARITY_TOL


def test_collinear_layout_is_exactly_on_a_line():
    scene = generate_scene(6, 2, extent=5.0, layout="collinear", seed=3)
    centers = all_centers(scene)
    d = centers[1] - centers[0]
    d /= np.linalg.norm(d)
    for c in centers[2:]:
        off = c - centers[0]
        assert np.linalg.norm(off - (off @ d) * d) < 1e-12
    worst, _ = _worst_triple(centers)
    assert worst < 1e-9


def test_planar_layout_is_flat_but_not_collinear():
    scene = generate_scene(8, 2, extent=5.0, layout="planar", seed=4)
    centers = all_centers(scene)
    # all centers lie on one plane: rank of centered matrix is 2
    centered = centers - centers.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    assert s[2] < 1e-10 * s[0]
    worst, _ = _worst_triple(centers)
    assert worst > COLLINEARITY_TOL


def test_generate_scene_validation():
    with pytest.raises(ValueError):
        generate_scene(1, 1)
    with pytest.raises(ValueError):
        generate_scene(3, 0)
    with pytest.raises(ValueError):
        generate_scene(3, 1, extent=-1.0)
    with pytest.raises(ValueError):
        generate_scene(3, 1, layout="spherical")


def test_mix_seed_properties():
    assert mix_seed(0, "a", "b") == mix_seed(0, "a", "b")
    assert mix_seed(0, "a", "b") != mix_seed(0, "b", "a")
    assert mix_seed(0, "a") != mix_seed(1, "a")
    values = [mix_seed(0, "q", str(i)) for i in range(100)]
    assert len(set(values)) == 100
    assert all(0 <= v < 2 ** 64 for v in values)


def test_oracle_zero_noise_is_exact():
    rng = np.random.default_rng(5)
    for _ in range(20):
        scene = generate_scene(2, 1, seed=int(rng.integers(1 << 31)))
        query = scene.queries[0][1]
        db_pose = scene.database[0][1]
        rel = oracle_relative(query, db_pose)
        truth = relative_pose(query, db_pose)
        np.testing.assert_array_equal(rel.rotation, truth.rotation)
        expected_dir = truth.translation / np.linalg.norm(truth.translation)
        np.testing.assert_array_equal(rel.direction, expected_dir)


def test_oracle_is_deterministic_in_seed():
    scene = generate_scene(2, 1, seed=0)
    query, db_pose = scene.queries[0][1], scene.database[0][1]
    noise = NoiseModel(rotation_sigma=5.0, direction_sigma=5.0)
    a = oracle_relative(query, db_pose, noise, seed=123)
    b = oracle_relative(query, db_pose, noise, seed=123)
    assert np.array_equal(a.rotation, b.rotation)
    assert np.array_equal(a.direction, b.direction)
    c = oracle_relative(query, db_pose, noise, seed=124)
    assert not np.array_equal(a.rotation, c.rotation)


def test_oracle_noise_is_half_normal():
    # |N(0, sigma)| has mean sigma * sqrt(2/pi); check both channels
    scene = generate_scene(2, 1, seed=1)
    query, db_pose = scene.queries[0][1], scene.database[0][1]
    truth = relative_pose(query, db_pose)
    true_dir = truth.translation / np.linalg.norm(truth.translation)
    sigma = 5.0
    noise = NoiseModel(rotation_sigma=sigma, direction_sigma=sigma)
    n = 10_000
    rot_errs = np.empty(n)
    dir_errs = np.empty(n)
    for i in range(n):
        rel = oracle_relative(query, db_pose, noise, seed=mix_seed(7, "s", str(i)))
        rot_errs[i] = math.degrees(rotation_angle(rel.rotation, truth.rotation))
        dir_errs[i] = math.degrees(translation_angle(rel.direction, true_dir))
    expected = sigma * math.sqrt(2 / math.pi)  # 3.989 degrees
    assert abs(rot_errs.mean() - expected) < 0.5
    assert abs(dir_errs.mean() - expected) < 0.5
    assert rot_errs.min() >= 0.0


def test_oracle_outliers():
    scene = generate_scene(2, 1, seed=2)
    query, db_pose = scene.queries[0][1], scene.database[0][1]
    truth = relative_pose(query, db_pose)
    noise = NoiseModel(outlier_fraction=1.0, outlier_rotation=90.0)
    for i in range(20):
        rel = oracle_relative(query, db_pose, noise, seed=i)
        err = math.degrees(rotation_angle(rel.rotation, truth.rotation))
        assert err == pytest.approx(90.0, abs=1e-9)
    # fraction 0 never perturbs
    rel = oracle_relative(query, db_pose, NoiseModel(outlier_fraction=0.0), seed=0)
    assert np.array_equal(rel.rotation, truth.rotation)


def test_oracle_zero_baseline():
    rng = np.random.default_rng(6)
    rotation = random_rotation(rng)
    center = rng.normal(size=3)
    a = Pose(rotation, -rotation @ center)
    other = random_rotation(rng)
    b = Pose(other, -other @ center)  # same center, different orientation
    with pytest.raises(ZeroBaselineError):
        oracle_relative(a, b)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(rotation_sigma=-1.0)
    with pytest.raises(ValueError):
        NoiseModel(outlier_fraction=1.5)


def test_random_helpers():
    rng = np.random.default_rng(7)
    for _ in range(50):
        v = random_unit_vector(rng)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12
        r = random_rotation(rng)
        assert np.linalg.norm(r.T @ r - np.eye(3)) < 1e-12
    # line angle: right angle vs collinear
    p = np.zeros(3)
    assert _line_angle(p, np.array([1.0, 0, 0]), np.array([0, 1.0, 0])) == pytest.approx(math.pi / 2)
    assert _line_angle(p, np.array([1.0, 0, 0]), np.array([2.0, 0, 0])) == pytest.approx(0.0)
