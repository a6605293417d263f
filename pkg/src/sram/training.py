"""Losses and the alternating training loop.

The objective is the unweighted sum of four terms: stage-wise feature
reconstruction against a frozen recognition network, a non-saturating
adversarial term, softmax classification, and position regression.  Each
step first updates the adversarial regularizer on detached rollouts, then
updates the encoder, decoder, and classifier together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from .autodiff import ParamStore, Tensor, backward
from .decoder import AnticipationRollout, stage_times
from .errors import DataError, NumericError, ShapeError
from .model import RecognitionModel, SramModel
from .synthetic import Clip, Dataset

PROB_FLOOR = 1e-7  # probabilities are clamped to [floor, 1 - floor] before logs
RATIO_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


def ratio_to_t0(ratio: float, total_frames: int) -> int:
    if not 0.0 < ratio <= 1.0:
        raise DataError(f"observation ratio must be in (0, 1], got {ratio}")
    return max(1, int(math.floor(ratio * total_frames + 0.5)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    recognition_epochs: int = 10
    lr: float = 0.01
    d2_lr: float = 0.001   # the regularizer collapses the game at the main rate
    momentum: float = 0.9
    max_grad_norm: float = 5.0
    batch_size: int = 32
    seed: int = 7
    use_rec: bool = True
    use_gan: bool = True
    use_reg: bool = True
    history_eval_clips: int = 100   # test subset for per-epoch accuracy rows


@dataclass
class LossBundle:
    l_rec: float
    l_gan: float
    l_cls: float
    l_reg: float
    d2_loss: float = 0.0

    @property
    def total(self) -> float:
        return self.l_rec + self.l_gan + self.l_cls + self.l_reg


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBundle
    accuracy: dict[float, float] = field(default_factory=dict)


@dataclass
class FitHistory:
    epochs: list[EpochRecord] = field(default_factory=list)


class SgdMomentum:
    """Momentum SGD with global-norm gradient clipping.

    Clipping keeps the unrolled decoder stable: its reconstruction term
    produces transient gradient norms in the thousands at initialization.
    """

    def __init__(self, params: ParamStore, lr: float, momentum: float = 0.9,
                 clip_norm: float | None = 5.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity: dict[str, np.ndarray] = {}

    def update(self, grads: dict[str, np.ndarray], names, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr == 0.0:
            return
        names = sorted(names)
        scale = 1.0
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float((grads[n] * grads[n]).sum()) for n in names))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for name in names:
            g = grads[name] if scale == 1.0 else grads[name] * scale
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            self.params.set_value(name, self.params[name].data - lr * v)


# ---------------------------------------------------------------------------
# loss terms

def _stacked_features(rollout: AnticipationRollout) -> Tensor:
    return ad.stack0(rollout.features)


def loss_rec(rollout: AnticipationRollout, targets: np.ndarray) -> Tensor:
    """Mean squared feature error across stages and agents."""
    k = rollout.k_stages
    if targets.shape[0] != k:
        raise ShapeError(f"expected {k} target stages, got {targets.shape[0]}")
    n = targets.shape[1]
    return ad.mul(ad.mse(_stacked_features(rollout), targets), 1.0 / (k * n))


def loss_reg(rollout: AnticipationRollout, clip: Clip) -> Tensor:
    """Mean squared position error across stages and agents (normalized units)."""
    k = rollout.k_stages
    n = clip.positions_norm.shape[1]
    truth = np.stack([clip.positions_norm[tau - 1] for tau in rollout.stage_times])
    return ad.mul(ad.mse(ad.stack0(rollout.positions), truth), 1.0 / (k * n))


def _score_mean(model: SramModel, stacked) -> Tensor:
    """Stage-averaged realness score; scores average before the log.

    ``stacked`` is [K, N, hidden] for one clip or [K, B, N, hidden] for a
    batch; agents max-pool away and stages average to one score per clip.
    """
    pooled = ad.amax(stacked, axis=-2)
    hidden = ad.affine(pooled, model.params["d2.w1"], model.params["d2.b1"], activation=True)
    scores = ad.sigmoid(ad.affine(hidden, model.params["d2.w2"], model.params["d2.b2"]))
    return ad.clip(ad.mean_axis(scores, 0), PROB_FLOOR, 1.0 - PROB_FLOOR)


def gan_generator_loss(model: SramModel, stacked_features: Tensor,
                       batch_size: int = 1) -> Tensor:
    """Non-saturating generator objective -log s(fake), averaged over the batch."""
    scores = _score_mean(model, stacked_features)
    return ad.mul(ad.sum_all(ad.log(scores)), -1.0 / batch_size)


def gan_d2_loss(model: SramModel, fake_stages: np.ndarray, real_stages: np.ndarray,
                batch_size: int = 1) -> Tensor:
    """Regularizer objective -[log s(real) + log(1 - s(fake))] on detached stages."""
    fake = _score_mean(model, Tensor(fake_stages))
    real = _score_mean(model, Tensor(real_stages))
    inner = ad.add(ad.log(real), ad.log(ad.add(1.0, ad.mul(fake, -1.0))))
    return ad.mul(ad.sum_all(inner), -1.0 / batch_size)


def loss_gan(model: SramModel, fake_stage_features, real_targets: np.ndarray) -> tuple[Tensor, Tensor]:
    """(regularizer loss, generator loss) for one clip.

    ``fake_stage_features`` is a list of per-stage [N, hidden] tensors;
    ``real_targets`` is the recognition features [K, N, hidden].  The
    regularizer sees detached fakes, the generator keeps the tape.
    """
    stacked = ad.stack0(list(fake_stage_features))
    gen_loss = gan_generator_loss(model, stacked)
    d2_loss = gan_d2_loss(model, stacked.data, np.asarray(real_targets))
    return d2_loss, gen_loss


def loss_cls(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy at the true class."""
    n_classes = logits.shape[-1]
    if not 0 <= label < n_classes:
        raise DataError(f"label {label} outside [0, {n_classes})")
    probs = ad.clip(ad.softmax_rows(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)
    onehot = np.zeros((1, n_classes))
    onehot[0, label] = 1.0
    return ad.mul(ad.sum_all(ad.mul(ad.log(probs), onehot)), -1.0)


# ---------------------------------------------------------------------------
# recognition model

def train_recognition(dataset: Dataset, model_config, config: TrainConfig) -> RecognitionModel:
    """Train the full-video recognition network, then freeze it."""
    if not dataset.clips:
        raise DataError("cannot train a recognition model on an empty dataset")
    rec = RecognitionModel(model_config)
    opt = SgdMomentum(rec.params, config.lr, config.momentum, config.max_grad_norm)
    names = rec.params.names()
    rng = np.random.default_rng(config.seed + 1)
    n = len(dataset.clips)
    for _ in range(config.recognition_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            feats = np.stack([dataset.clips[i].features for i in batch])
            poss = np.stack([dataset.clips[i].positions_norm for i in batch])
            labels = np.array([dataset.clips[i].label for i in batch])
            logits = rec.logits_batch(feats, poss)
            probs = ad.clip(ad.softmax_rows(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)
            onehot = np.zeros(logits.shape)
            onehot[np.arange(len(batch)), 0, labels] = 1.0
            loss = ad.mul(ad.sum_all(ad.mul(ad.log(probs), onehot)), -1.0 / len(batch))
            grads = backward(loss, rec.params)
            opt.update({name: grads[name].data for name in names}, names)
    rec.freeze()
    return rec


def recognition_accuracy(rec: RecognitionModel, dataset: Dataset) -> float:
    hits = 0
    with ad.no_grad():
        for start in range(0, len(dataset.clips), 128):
            clips = dataset.clips[start:start + 128]
            feats = np.stack([c.features for c in clips])
            poss = np.stack([c.positions_norm for c in clips])
            logits = rec.logits_batch(feats, poss)
            preds = np.argmax(logits.data[:, 0, :], axis=-1)
            hits += int(sum(p == c.label for p, c in zip(preds, clips)))
    return hits / len(dataset.clips)


def recognition_targets(rec: RecognitionModel, clip: Clip,
                        times, cached: np.ndarray | None = None) -> np.ndarray:
    """Frozen per-agent features of the full clip at the stage frames [K, N, h]."""
    if not rec.frozen:
        raise DataError("recognition model must be frozen before use as a target source")
    total = clip.features.shape[0]
    for tau in times:
        if not 1 <= tau <= total:
            raise ShapeError(f"stage frame {tau} outside [1, {total}]")
    feats = cached if cached is not None else rec.frame_features(clip.features, clip.positions_norm)
    return np.stack([feats[tau - 1] for tau in times])


# ---------------------------------------------------------------------------
# alternating training

def _batched_rollout(model: SramModel, clips: list[Clip], t0s: list[int]):
    """Encode per prefix-length group, concatenate, and unroll once.

    Returns the per-stage feature and position tensors (batched over the
    reordered examples) plus the permutation that maps batch slots back to
    the original clip order.
    """
    from .encoder import encode_batch

    groups: dict[int, list[int]] = {}
    for i, t0 in enumerate(t0s):
        groups.setdefault(t0, []).append(i)
    order: list[int] = []
    z0s, seed_fs, seed_ps = [], [], []
    params = model.encoder_params()
    for t0 in sorted(groups):
        idx = groups[t0]
        order.extend(idx)
        feats = np.stack([clips[i].features[:t0] for i in idx])
        poss = np.stack([clips[i].positions_norm[:t0] for i in idx])
        encoded = encode_batch(feats, poss, params, model.config.epsilon)
        z0s.append(encoded.z0)
        seed_fs.append(encoded.seed_features)
        seed_ps.append(encoded.seed_positions)
    z0 = ad.concat0(z0s) if len(z0s) > 1 else z0s[0]
    seed_f = ad.concat0(seed_fs) if len(seed_fs) > 1 else seed_fs[0]
    seed_p = ad.concat0(seed_ps) if len(seed_ps) > 1 else seed_ps[0]
    feats, poss, _ = dec.unroll_steps(
        z0, seed_f, seed_p, model.config.k_stages,
        model.activity_params(), model.position_params(),
        epsilon=model.config.epsilon,
        freeze_positions=model.config.freeze_positions,
        relu_head=model.config.relu_position_head,
    )
    return feats, poss, order


def _batched_cls(model: SramModel, final_features: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over a batched final stage [B, N, hidden]."""
    pooled = ad.amax(final_features, axis=-2)
    logits = model.classify(pooled)
    n_classes = logits.shape[-1]
    probs = ad.clip(ad.softmax_rows(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), 0, labels] = 1.0
    return ad.mul(ad.sum_all(ad.mul(ad.log(probs), onehot)), -1.0 / len(labels))


def train_step(model: SramModel, clips: list[Clip], optimizer: SgdMomentum,
               rng: np.random.Generator, config: TrainConfig,
               ratios: list[float] | None = None,
               cached_features: list[np.ndarray] | None = None) -> LossBundle:
    """One alternating update on a batch of clips.

    One phase updates encoder, decoder, and classifier on the summed
    objective; the other updates the adversarial regularizer on the same
    rollouts, detached.  Each example anticipates from its own observation
    ratio, drawn uniformly from the ratio grid unless ``ratios`` pins them.
    """
    if model.recognition is None or not model.recognition.frozen:
        raise DataError("train_step requires a frozen recognition model")
    if ratios is None:
        ratios = [RATIO_GRID[rng.integers(len(RATIO_GRID))] for _ in clips]
    total_frames = clips[0].features.shape[0]
    batch = len(clips)
    k = model.config.k_stages
    t0s = [ratio_to_t0(r, total_frames) for r in ratios]
    times = [stage_times(t0, total_frames, k) for t0 in t0s]
    targets = [
        recognition_targets(model.recognition, clips[i], times[i],
                            cached_features[i] if cached_features is not None else None)
        for i in range(batch)
    ]

    feats, poss, order = _batched_rollout(model, clips, t0s)
    labels = np.array([clips[i].label for i in order])
    target_stack = np.stack([targets[i] for i in order], axis=1)  # [K, B, N, hidden]

    bundle = {"rec": 0.0, "gan": 0.0, "reg": 0.0}
    objective = _batched_cls(model, feats[-1], labels)
    cls_value = objective.item()
    stacked = ad.stack0(feats)
    if config.use_rec:
        n = target_stack.shape[2]
        term = ad.mul(ad.mse(stacked, target_stack), 1.0 / (k * n * batch))
        bundle["rec"] = term.item()
        objective = ad.add(objective, term)
    if config.use_reg and not model.config.freeze_positions:
        truth = np.stack(
            [np.stack([clips[i].positions_norm[times[i][s] - 1] for i in order]) for s in range(k)]
        )  # [K, B, N, 2]
        n = truth.shape[2]
        term = ad.mul(ad.mse(ad.stack0(poss), truth), 1.0 / (k * n * batch))
        bundle["reg"] = term.item()
        objective = ad.add(objective, term)
    if config.use_gan:
        term = gan_generator_loss(model, stacked, batch_size=batch)
        bundle["gan"] = term.item()
        objective = ad.add(objective, term)
    if not np.isfinite(objective.data):
        raise NumericError(
            f"non-finite training objective (rec={bundle['rec']}, gan={bundle['gan']}, "
            f"cls={cls_value}, reg={bundle['reg']})"
        )
    main_names = model.main_params().names()
    grads = backward(objective, model.main_params())
    optimizer.update({name: grads[name].data for name in main_names}, main_names)

    d2_total = 0.0
    if config.use_gan:
        d2_loss = gan_d2_loss(model, stacked.data, target_stack, batch_size=batch)
        d2_total = d2_loss.item()
        d2_names = model.d2_params().names()
        d2_grads = backward(d2_loss, model.d2_params())
        optimizer.update({name: d2_grads[name].data for name in d2_names}, d2_names,
                         lr=config.d2_lr if config.lr != 0.0 else 0.0)

    return LossBundle(
        l_rec=bundle["rec"],
        l_gan=bundle["gan"],
        l_cls=cls_value,
        l_reg=bundle["reg"],
        d2_loss=d2_total,
    )


def eval_losses(model: SramModel, clips: list[Clip], ratios: list[float],
                config: TrainConfig) -> LossBundle:
    """Phase-B objective on a batch without updating anything."""
    total_frames = clips[0].features.shape[0]
    sums = {"rec": 0.0, "gan": 0.0, "cls": 0.0, "reg": 0.0}
    with ad.no_grad():
        for clip, ratio in zip(clips, ratios):
            t0 = ratio_to_t0(ratio, total_frames)
            times = stage_times(t0, total_frames, model.config.k_stages)
            targets = recognition_targets(model.recognition, clip, times)
            encoded = model.encode_prefix(clip.features[:t0], clip.positions_norm[:t0])
            roll = model.rollout(encoded, total_frames)
            logits = model.classify(dec.aggregate(roll))
            sums["cls"] += loss_cls(logits, clip.label).item()
            if config.use_rec:
                sums["rec"] += loss_rec(roll, targets).item()
            if config.use_reg and not model.config.freeze_positions:
                sums["reg"] += loss_reg(roll, clip).item()
            if config.use_gan:
                gen = gan_generator_loss(model, ad.stack0(roll.features))
                sums["gan"] += gen.item()
    n = len(clips)
    return LossBundle(sums["rec"] / n, sums["gan"] / n, sums["cls"] / n, sums["reg"] / n)


def fit(model: SramModel, train_ds: Dataset, test_ds: Dataset,
        config: TrainConfig) -> FitHistory:
    """Epochs of shuffled mini-batches with per-epoch loss and accuracy rows.

    Per-epoch accuracy is measured on a fixed leading subset of the test
    split to keep the budget flat; final-quality numbers come from the
    evaluation harness on the full split.
    """
    from .evaluation import evaluate

    if not train_ds.clips:
        raise DataError("cannot fit on an empty dataset")
    if model.recognition is None:
        model.recognition = train_recognition(train_ds, model.config, config)
    cache: list[np.ndarray] = []
    for start in range(0, len(train_ds.clips), 128):
        chunk = train_ds.clips[start:start + 128]
        cache.extend(model.recognition.frame_features(
            np.stack([c.features for c in chunk]),
            np.stack([c.positions_norm for c in chunk])))
    optimizer = SgdMomentum(model.params, config.lr, config.momentum, config.max_grad_norm)
    rng = np.random.default_rng(config.seed)
    history = FitHistory()
    n = len(train_ds.clips)
    eval_subset = Dataset(test_ds.classes, test_ds.n_agents, test_ds.n_frames,
                          test_ds.feat_dim, test_ds.arena, test_ds.projection, test_ds.bias,
                          test_ds.clips[:config.history_eval_clips])
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        bundles = []
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            clips = [train_ds.clips[i] for i in batch_idx]
            caches = [cache[i] for i in batch_idx]
            bundles.append(train_step(model, clips, optimizer, rng, config,
                                      cached_features=caches))
        mean = LossBundle(
            l_rec=float(np.mean([b.l_rec for b in bundles])),
            l_gan=float(np.mean([b.l_gan for b in bundles])),
            l_cls=float(np.mean([b.l_cls for b in bundles])),
            l_reg=float(np.mean([b.l_reg for b in bundles])),
            d2_loss=float(np.mean([b.d2_loss for b in bundles])),
        )
        record = EpochRecord(epoch=epoch, losses=mean)
        if eval_subset.clips:
            sweep = evaluate(model, eval_subset, RATIO_GRID)
            record.accuracy = dict(sweep.rows)
        history.epochs.append(record)
    return history


# ---------------------------------------------------------------------------
# gradient check of the full phase-B objective

def full_objective_gradcheck(seed: int = 3, n_agents: int = 3, t0: int = 4,
                             k_stages: int = 2, feat_dim: int = 8, hidden: int = 16,
                             total_frames: int = 8, n_classes: int = 6,
                             h: float = 1e-5) -> float:
    """Finite-difference error of the whole phase-B objective on a tiny instance."""
    from .model import ModelConfig

    rng = np.random.default_rng(seed)
    config = ModelConfig(n_classes=n_classes, feat_dim=feat_dim, hidden=hidden,
                         pos_hidden=8, k_stages=k_stages, d2_hidden=16, seed=seed)
    model = SramModel(config)
    rec = RecognitionModel(config)
    rec.freeze()
    model.recognition = rec

    features = rng.normal(0.5, 0.5, (total_frames, n_agents, feat_dim))
    positions = rng.uniform(0.1, 0.9, (total_frames, n_agents, 2))
    label = int(rng.integers(n_classes))
    clip = Clip(label=label, positions=positions * 10.0, features=features,
                positions_norm=positions)
    times = stage_times(t0, total_frames, k_stages)
    targets = recognition_targets(rec, clip, times)

    def objective(_: ParamStore) -> Tensor:
        encoded = model.encode_prefix(clip.features[:t0], clip.positions_norm[:t0])
        roll = model.rollout(encoded, total_frames)
        logits = model.classify(dec.aggregate(roll))
        total = loss_cls(logits, clip.label)
        total = ad.add(total, loss_rec(roll, targets))
        total = ad.add(total, loss_reg(roll, clip))
        return ad.add(total, gan_generator_loss(model, ad.stack0(roll.features)))

    return ad.finite_diff_check(objective, model.main_params(), h=h, seed=seed)
