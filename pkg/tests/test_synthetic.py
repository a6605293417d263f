import json

import numpy as np
import pytest

from sram.errors import DataError
from sram.synthetic import (CLASS_NAMES, DatasetSpec, NearestCentroidOracle,
                            build_split, clip_statistics, featurize,
                            generate_dataset, kinematic_descriptors,
                            load_dataset, save_dataset, simulate_clip)

SMALL = DatasetSpec(n_train=24, n_test=12, n_agents=4, n_frames=12, seed=11)


class TestSimulateClip:
    def test_converge_distances_non_increasing(self):
        spec = DatasetSpec(position_noise=0.0, n_agents=5, n_frames=20, seed=3)
        pos = simulate_clip("converge", spec, np.random.default_rng(3))
        start = spec.ambiguity_frames()
        for t in range(start, spec.n_frames - 1):
            d_now = np.linalg.norm(pos[t][:, None] - pos[t][None, :], axis=-1)
            d_next = np.linalg.norm(pos[t + 1][:, None] - pos[t + 1][None, :], axis=-1)
            assert np.all(d_next <= d_now + 1e-9)

    def test_orbit_radius_constant_without_noise(self):
        spec = DatasetSpec(position_noise=0.0, n_agents=5, n_frames=20, seed=4)
        pos = simulate_clip("orbit", spec, np.random.default_rng(4))
        start = spec.ambiguity_frames()
        radii = []
        for t in range(start, spec.n_frames):
            center = pos[t].mean(axis=0)
            radii.append(np.linalg.norm(pos[t] - center, axis=1))
        for r in radii[1:]:
            assert np.abs(r - radii[0]).max() < 1e-6

    def test_same_seed_bitwise_identical(self):
        spec = DatasetSpec(seed=5)
        a = simulate_clip("follow", spec, np.random.default_rng(9))
        b = simulate_clip("follow", spec, np.random.default_rng(9))
        assert a.tobytes() == b.tobytes()

    def test_positions_stay_in_arena(self):
        spec = DatasetSpec(speed=2.0, seed=6)
        for name in CLASS_NAMES:
            pos = simulate_clip(name, spec, np.random.default_rng(1))
            assert pos.min() >= 0.0 and pos.max() <= spec.arena

    def test_unknown_class_rejected(self):
        with pytest.raises(DataError):
            simulate_clip("lurk", DatasetSpec(), np.random.default_rng(0))

    def test_warmup_frames_identical_across_classes(self):
        # the ambiguity window must carry no class information at all
        spec = DatasetSpec(seed=8)
        w = spec.ambiguity_frames()
        reference = simulate_clip("mill", spec, np.random.default_rng(21))
        for name in ("converge", "disperse", "orbit", "queue"):
            pos = simulate_clip(name, spec, np.random.default_rng(21))
            assert np.array_equal(pos[:w], reference[:w])


class TestFeaturize:
    def test_stationary_agents_have_zero_velocity_features(self):
        pos = np.tile(np.array([[1.0, 2.0], [3.0, 4.0]]), (6, 1, 1))
        desc = kinematic_descriptors(pos)
        assert np.array_equal(desc[..., 0:3], np.zeros((6, 2, 3)))
        assert np.array_equal(desc[..., 3:5], np.zeros((6, 2, 2)))  # headings zeroed

    def test_identical_kinematics_identical_features(self):
        spec = DatasetSpec(feature_noise=0.0, seed=12)
        pos = simulate_clip("mill", spec, np.random.default_rng(2))
        a = featurize(pos, spec, np.random.default_rng(0))
        b = featurize(pos, spec, np.random.default_rng(1))
        assert np.array_equal(a, b)

    def test_default_shape(self):
        spec = DatasetSpec(seed=13)
        pos = simulate_clip("queue", spec, np.random.default_rng(5))
        feats = featurize(pos, spec, np.random.default_rng(5))
        assert feats.shape == (spec.n_frames, spec.n_agents, 16)

    def test_absolute_position_does_not_enter_features(self):
        # translating the whole trajectory leaves the descriptors unchanged
        spec = DatasetSpec(feature_noise=0.0, seed=14)
        pos = np.random.default_rng(7).uniform(2.0, 6.0, (8, 3, 2))
        a = featurize(pos, spec, np.random.default_rng(0))
        b = featurize(pos + 1.5, spec, np.random.default_rng(0))
        assert np.allclose(a, b, atol=1e-9)

    def test_velocity_zero_at_first_frame(self):
        desc = kinematic_descriptors(np.random.default_rng(0).uniform(0, 10, (5, 3, 2)))
        assert np.array_equal(desc[0, :, 0:3], np.zeros((3, 3)))


class TestDatasetFiles:
    def test_balanced_classes_and_counts(self):
        ds = build_split(SMALL, "train")
        assert len(ds.clips) == 24
        labels = [c.label for c in ds.clips]
        for lab in range(len(SMALL.classes)):
            assert labels.count(lab) == 4

    def test_regeneration_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        generate_dataset(SMALL, str(p1))
        generate_dataset(SMALL, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_round_trip_within_serialization_tolerance(self, tmp_path):
        path = tmp_path / "ds.json"
        ds = build_split(SMALL, "train")
        save_dataset(ds, str(path))
        loaded = load_dataset(str(path))
        assert loaded.classes == ds.classes
        for a, b in zip(ds.clips, loaded.clips):
            assert a.label == b.label
            assert np.abs(a.positions - b.positions).max() < 1e-6
            assert np.abs(a.features - b.features).max() < 1e-6

    def test_train_test_disjoint_streams(self):
        train = build_split(SMALL, "train")
        test = build_split(SMALL, "test")
        assert not np.array_equal(train.clips[0].positions, test.clips[0].positions)
        assert np.array_equal(train.projection, test.projection)

    def test_loader_normalizes_positions(self, tmp_path):
        path = tmp_path / "ds.json"
        save_dataset(build_split(SMALL, "train"), str(path))
        loaded = load_dataset(str(path))
        clip = loaded.clips[0]
        assert np.allclose(clip.positions_norm, clip.positions / loaded.arena)
        assert clip.positions_norm.max() <= 1.0 + 1e-9

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "ds.json"
        save_dataset(build_split(SMALL, "train"), str(path))
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(DataError):
            load_dataset(str(path))

    def test_label_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "ds.json"
        save_dataset(build_split(SMALL, "train"), str(path))
        doc = json.loads(path.read_text())
        doc["clips"][0]["label"] = len(SMALL.classes)
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError) as err:
            load_dataset(str(path))
        assert "label" in str(err.value)

    def test_bad_tensor_shape_rejected(self, tmp_path):
        path = tmp_path / "ds.json"
        save_dataset(build_split(SMALL, "train"), str(path))
        doc = json.loads(path.read_text())
        doc["clips"][2]["positions"][0] = doc["clips"][2]["positions"][0][:2]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError) as err:
            load_dataset(str(path))
        assert "clips[2]" in str(err.value)

    def test_missing_file(self):
        with pytest.raises(DataError):
            load_dataset("/nonexistent/path.json")


class TestSpecValidation:
    def test_ambiguity_range(self):
        with pytest.raises(DataError):
            DatasetSpec(ambiguity=1.0)

    def test_feat_dim_floor(self):
        with pytest.raises(DataError):
            DatasetSpec(feat_dim=4)

    def test_unknown_class(self):
        with pytest.raises(DataError):
            DatasetSpec(classes=("converge", "wander"))


@pytest.fixture(scope="module")
def four_class():
    spec = DatasetSpec(classes=("converge", "disperse", "orbit", "mill"),
                       n_train=240, n_test=160, seed=7)
    return spec, build_split(spec, "train"), build_split(spec, "test")


class TestOracle:
    """Dataset sanity: separable at full observation, ambiguous in the window."""

    def test_full_observation_identifiable(self, four_class):
        spec, train, test = four_class
        oracle = NearestCentroidOracle.fit(train, 1, spec.n_frames)
        assert oracle.accuracy(test, 1, spec.n_frames) > 0.9

    def test_ambiguity_window_at_chance(self, four_class):
        spec, train, test = four_class
        w = spec.ambiguity_frames()
        oracle = NearestCentroidOracle.fit(train, 1, w)
        acc = oracle.accuracy(test, 1, w)
        assert abs(acc - 0.25) <= 0.10

    def test_statistics_shapes(self):
        stats = clip_statistics(np.random.default_rng(0).uniform(0, 10, (12, 4, 2)), 1, 12)
        assert stats.shape == (2,)
