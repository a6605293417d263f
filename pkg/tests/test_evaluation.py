import math

import numpy as np
import pytest

from sram import autodiff as ad
from sram.errors import DataError
from sram.evaluation import (PositionMetrics, RatioSweepResult, evaluate,
                             position_metrics, spearman)
from sram.model import ModelConfig, RecognitionModel, SramModel
from sram.synthetic import Clip, Dataset, DatasetSpec, build_split

CONFIG = ModelConfig(n_classes=6, feat_dim=16, hidden=24, pos_hidden=8,
                     k_stages=3, d2_hidden=16, seed=3)


@pytest.fixture(scope="module")
def test_ds():
    spec = DatasetSpec(n_train=12, n_test=60, n_agents=4, n_frames=10, seed=6)
    return build_split(spec, "test")


@pytest.fixture(scope="module")
def model():
    return SramModel(CONFIG)


class TestEvaluate:
    def test_rows_ascend_and_bound(self, model, test_ds):
        sweep = evaluate(model, test_ds, (0.5, 0.1, 1.0))
        assert [r for r, _ in sweep.rows] == [0.1, 0.5, 1.0]
        assert all(0.0 <= acc <= 1.0 for _, acc in sweep.rows)

    def test_deterministic(self, model, test_ds):
        a = evaluate(model, test_ds, (0.3, 0.7))
        b = evaluate(model, test_ds, (0.3, 0.7))
        assert a == b

    def test_full_ratio_uses_whole_clip(self, model, test_ds):
        # identical by construction: t0 == total frames
        sweep = evaluate(model, test_ds, (1.0,))
        clip = test_ds.clips[0]
        with ad.no_grad():
            logits = model.logits_for_prefix(clip.features, clip.positions_norm,
                                             test_ds.n_frames)
        assert sweep.rows[0][0] == 1.0
        assert logits.shape == (1, 6)

    def test_untrained_model_near_chance(self):
        spec = DatasetSpec(n_train=12, n_test=600, seed=7)
        big_test = build_split(spec, "test")
        fresh = SramModel(ModelConfig(n_classes=6, feat_dim=16, hidden=32, seed=7))
        sweep = evaluate(fresh, big_test, (0.5,))
        assert abs(sweep.rows[0][1] - 1.0 / 6.0) <= 0.05

    def test_ratio_out_of_range(self, model, test_ds):
        with pytest.raises(DataError):
            evaluate(model, test_ds, (0.0,))

    def test_empty_dataset(self, model, test_ds):
        empty = Dataset(test_ds.classes, test_ds.n_agents, test_ds.n_frames,
                        test_ds.feat_dim, test_ds.arena, test_ds.projection,
                        test_ds.bias, [])
        with pytest.raises(DataError):
            evaluate(model, empty)

    def test_mean_over_rows(self):
        sweep = RatioSweepResult(rows=((0.1, 0.2), (0.2, 0.4)))
        assert sweep.mean == pytest.approx(0.3)
        assert sweep.accuracy_at(0.2) == 0.4


class TestPositionMetrics:
    def test_persistence_matches_hand_computation(self, model):
        # one clip, one agent pinned by hand
        t, n = 10, 2
        positions = np.zeros((t, n, 2))
        positions[:, 0, 0] = np.linspace(1.0, 4.0, t)   # agent 0 drifts right
        positions[:, 1, 1] = np.linspace(2.0, 8.0, t)   # agent 1 drifts up
        clip = Clip(label=0, positions=positions,
                    features=np.random.default_rng(0).uniform(0, 1, (t, n, 16)),
                    positions_norm=positions / 10.0)
        ds = Dataset(("converge",) * 6, n, t, 16, 10.0, np.zeros((16, 8)),
                     np.zeros(16), [clip])
        metrics = position_metrics(model, ds, 0.5, method="persistence")
        t0 = 5
        times = (6, 7, 8, 9, 10) if model.config.k_stages == 5 else None
        from sram.decoder import stage_times
        times = stage_times(t0, t, model.config.k_stages)
        held = positions[t0 - 1]
        stage_errs = [np.linalg.norm(held - positions[tau - 1], axis=1).mean()
                      for tau in times]
        fde = np.linalg.norm(held - positions[-1], axis=1).mean()
        assert metrics.ade == pytest.approx(float(np.mean(stage_errs)), abs=1e-12)
        assert metrics.fde == pytest.approx(float(fde), abs=1e-12)

    def test_perfect_prediction_would_be_zero(self, model, test_ds):
        # persistence on frozen clips: zero displacement everywhere
        frozen_clips = []
        for clip in test_ds.clips[:4]:
            still = np.tile(clip.positions[:1], (test_ds.n_frames, 1, 1))
            frozen_clips.append(Clip(label=clip.label, positions=still,
                                     features=clip.features,
                                     positions_norm=still / test_ds.arena))
        ds = Dataset(test_ds.classes, test_ds.n_agents, test_ds.n_frames,
                     test_ds.feat_dim, test_ds.arena, test_ds.projection,
                     test_ds.bias, frozen_clips)
        metrics = position_metrics(model, ds, 0.5, method="persistence")
        assert metrics.fde == 0.0
        assert metrics.ade == 0.0

    def test_single_agent_distance(self):
        # prediction (1,1) vs truth (4,5) gives distance 5
        assert math.hypot(4.0 - 1.0, 5.0 - 1.0) == pytest.approx(5.0)

    def test_unknown_method(self, model, test_ds):
        with pytest.raises(DataError):
            position_metrics(model, test_ds, 0.5, method="oracle")

    def test_metrics_nonnegative(self, model, test_ds):
        m = position_metrics(model, test_ds, 0.3)
        assert m.fde >= 0.0 and m.ade >= 0.0


class TestSpearman:
    def test_perfect_monotone(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_perfect_inverse(self):
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_matches_scipy(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.normal(size=12)
            y = rng.normal(size=12)
            ours = spearman(x, y)
            ref = scipy_stats.spearmanr(x, y).statistic
            assert ours == pytest.approx(ref, abs=1e-12)

    def test_with_ties(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        x = [1, 2, 3, 4, 5, 6]
        y = [1, 1, 2, 2, 3, 3]
        assert spearman(x, y) == pytest.approx(
            scipy_stats.spearmanr(x, y).statistic, abs=1e-12)
