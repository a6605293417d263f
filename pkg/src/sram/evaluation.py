"""Evaluation harness: ratio sweeps, ablations, and displacement metrics."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from .decoder import stage_times
from .errors import DataError
from .model import ModelConfig, SramModel, variant_config
from .synthetic import Dataset
from .training import (RATIO_GRID, TrainConfig, fit, ratio_to_t0,
                       train_recognition)

ABLATION_VARIANTS = ("full", "no-reg", "no-gan", "no-rec")
ABLATION_REPORT_RATIOS = (0.1, 0.4, 0.7)


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("SRAM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class RatioSweepResult:
    rows: tuple[tuple[float, float], ...]  # (observation ratio, accuracy), ascending

    @property
    def mean(self) -> float:
        return float(np.mean([acc for _, acc in self.rows]))

    def accuracy_at(self, ratio: float) -> float:
        for r, acc in self.rows:
            if abs(r - ratio) < 1e-9:
                return acc
        raise DataError(f"no row for ratio {ratio}")


@dataclass(frozen=True)
class PositionMetrics:
    fde: float
    ade: float


_EVAL_CHUNK = 128


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield range(start, min(start + size, n))


def _batch_rollout(model: SramModel, clips, t0: int):
    """No-grad batched rollout of equal-length prefixes."""
    from .encoder import encode_batch

    feats = np.stack([c.features[:t0] for c in clips])
    poss = np.stack([c.positions_norm[:t0] for c in clips])
    encoded = encode_batch(feats, poss, model.encoder_params(), model.config.epsilon)
    return dec.unroll_steps(
        encoded.z0, encoded.seed_features, encoded.seed_positions,
        model.config.k_stages, model.activity_params(), model.position_params(),
        epsilon=model.config.epsilon,
        freeze_positions=model.config.freeze_positions,
        relu_head=model.config.relu_position_head,
    )


def _predict_chunk(model: SramModel, clips, t0: int) -> list[int]:
    feats, _, _ = _batch_rollout(model, clips, t0)
    pooled = ad.amax(feats[-1], axis=-2)
    logits = model.classify(pooled)
    # argmax takes the lowest index on ties
    return [int(p) for p in np.argmax(logits.data[:, 0, :], axis=-1)]


def evaluate(model: SramModel, dataset: Dataset, ratios=RATIO_GRID) -> RatioSweepResult:
    """Prediction accuracy per observation ratio over the whole dataset."""
    if not dataset.clips:
        raise DataError("cannot evaluate on an empty dataset")
    total_frames = dataset.n_frames
    clips = dataset.clips
    rows = []
    threads = max_threads()
    for ratio in sorted(ratios):
        t0 = ratio_to_t0(ratio, total_frames)
        with ad.no_grad():
            chunk_list = [[clips[i] for i in chunk] for chunk in _chunks(len(clips), _EVAL_CHUNK)]
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    chunk_preds = list(pool.map(
                        lambda group: _predict_chunk(model, group, t0), chunk_list))
            else:
                chunk_preds = [_predict_chunk(model, group, t0) for group in chunk_list]
        preds = [p for chunk in chunk_preds for p in chunk]
        hits = sum(int(p == c.label) for p, c in zip(preds, clips))
        rows.append((ratio, hits / len(clips)))
    return RatioSweepResult(rows=tuple(rows))


def position_metrics(model: SramModel, dataset: Dataset, ratio: float,
                     method: str = "model") -> PositionMetrics:
    """Displacement errors in raw arena units at one observation ratio.

    ``method='persistence'`` replaces every predicted stage position with
    the last observed one, through the same measurement path.
    """
    if method not in ("model", "persistence"):
        raise DataError(f"unknown position method {method!r}")
    total_frames = dataset.n_frames
    t0 = ratio_to_t0(ratio, total_frames)
    times = stage_times(t0, total_frames, model.config.k_stages)
    final_err = []
    stage_err = []
    with ad.no_grad():
        for chunk in _chunks(len(dataset.clips), _EVAL_CHUNK):
            clips = [dataset.clips[i] for i in chunk]
            _, poss, _ = _batch_rollout(model, clips, t0)
            if method == "persistence":
                predicted = [np.stack([c.positions[t0 - 1] for c in clips])] * len(times)
            else:
                predicted = [p.data * dataset.arena for p in poss]
            for pred, tau in zip(predicted, times):
                truth = np.stack([c.positions[tau - 1] for c in clips])
                stage_err.extend(np.linalg.norm(pred - truth, axis=-1).mean(axis=-1))
            truth = np.stack([c.positions[-1] for c in clips])
            final_err.extend(np.linalg.norm(predicted[-1] - truth, axis=-1).mean(axis=-1))
    return PositionMetrics(fde=float(np.mean(final_err)), ade=float(np.mean(stage_err)))


def train_variant(train_ds: Dataset, test_ds: Dataset, variant: str,
                  base_model: ModelConfig, base_train: TrainConfig,
                  recognition=None) -> SramModel:
    """Train one ablation variant from the shared seed."""
    from dataclasses import replace

    model_cfg = variant_config(base_model, variant)
    train_cfg = base_train
    if variant == "no-gan":
        train_cfg = replace(base_train, use_gan=False)
    elif variant == "no-rec":
        train_cfg = replace(base_train, use_rec=False)
    elif variant == "no-reg":
        train_cfg = replace(base_train, use_reg=False)
    model = SramModel(model_cfg)
    if recognition is not None:
        model.recognition = recognition
    else:
        model.recognition = train_recognition(train_ds, model_cfg, train_cfg)
    fit(model, train_ds, test_ds, train_cfg)
    return model


def ablate(train_ds: Dataset, test_ds: Dataset, variants,
           base_model: ModelConfig, base_train: TrainConfig) -> list[tuple[str, RatioSweepResult]]:
    """Train each variant from the same seed and sweep the full ratio grid.

    The recognition network is trained once and shared: it is identical
    across variants by construction (same seed, unaffected by the ablated
    terms), so comparisons isolate the ablation.
    """
    variants = list(variants)
    if not variants:
        raise DataError("no ablation variants given")
    for v in variants:
        variant_config(base_model, v)  # validates names early
    recognition = train_recognition(train_ds, base_model, base_train)
    results = []
    for variant in variants:
        model = train_variant(train_ds, test_ds, variant, base_model, base_train,
                              recognition=recognition)
        results.append((variant, evaluate(model, test_ds, RATIO_GRID)))
    return results


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties."""

    def ranks(values):
        order = np.argsort(values, kind="stable")
        r = np.empty(len(values))
        i = 0
        sorted_vals = np.asarray(values)[order]
        while i < len(values):
            j = i
            while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
                j += 1
            r[order[i:j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    rx, ry = ranks(list(xs)), ranks(list(ys))
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)
