"""Model assembly: parameters, discriminators, recognition network, and I/O.

``SramModel`` owns every learnable tensor (encoder, the two auto-encoders,
classifier head, adversarial regularizer) plus the separately trained
recognition network that supplies stage targets.  The JSON model file
round-trips float64 values exactly, so loaded models reproduce forward
outputs bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from . import encoder as enc
from .autodiff import ParamStore, Tensor
from .errors import DataError
from .graphs import DEFAULT_EPSILON

MODEL_FILE_VERSION = 1

MAIN_PREFIXES = ("enc.", "act.", "pos.", "d1.")
D2_PREFIX = "d2."


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    feat_dim: int
    hidden: int = 256
    pos_hidden: int = 64
    k_stages: int = 5
    d2_hidden: int = 128
    epsilon: float = DEFAULT_EPSILON
    relu_position_head: bool = False
    freeze_positions: bool = False
    seed: int = 0


class RecognitionModel:
    """Two ST-GCN layers plus a linear head, trained on full clips.

    Once frozen it only supplies per-frame, per-agent features as targets
    for the anticipation losses; no gradient ever flows into it.
    """

    def __init__(self, config: ModelConfig, params: ParamStore | None = None,
                 frozen: bool = False):
        self.config = config
        self.frozen = frozen
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(config.seed + 1)
            self.params = ParamStore()
            enc.register_encoder(self.params, "stgcn", config.feat_dim, config.hidden, rng)
            self.params.add("head.w", ad.xavier_uniform(
                rng, (config.hidden, config.n_classes), config.hidden, config.n_classes))
            self.params.add("head.b", np.zeros(config.n_classes))

    def freeze(self) -> None:
        self.frozen = True

    def _trunk(self, features, positions) -> Tensor:
        h = Tensor(np.asarray(features, dtype=np.float64))
        from .graphs import observation_graphs
        ga, gp = observation_graphs(features, positions, self.config.epsilon)
        for layer_prefix in ("stgcn.layer1", "stgcn.layer2"):
            h = enc._stgcn_forward(h, ga, gp, enc.stgcn_layer_params(self.params, layer_prefix))
        return h

    def frame_features(self, features, positions) -> np.ndarray:
        """Per-frame per-agent features [T, N, hidden] of a full clip, no tape."""
        with ad.no_grad():
            return self._trunk(features, positions).data

    def logits(self, features, positions) -> Tensor:
        """Classification logits from the max-pooled final frame (taped)."""
        h = self._trunk(features, positions)
        pooled = ad.col_max(ad.frame(h, np.asarray(features).shape[0] - 1))
        return ad.affine(pooled, self.params["head.w"], self.params["head.b"])

    def logits_batch(self, features: np.ndarray, positions: np.ndarray) -> Tensor:
        """Logits [B, 1, classes] for a stack of full clips [B, T, N, D]."""
        h = self._trunk(features, positions)
        pooled = ad.amax(ad.frame(h, features.shape[1] - 1), axis=-2)
        return ad.affine(pooled, self.params["head.w"], self.params["head.b"])


class SramModel:
    """All learnable state for the anticipation pipeline."""

    def __init__(self, config: ModelConfig, params: ParamStore | None = None,
                 recognition: RecognitionModel | None = None):
        self.config = config
        self.recognition = recognition
        if params is not None:
            self.params = params
            return
        rng = np.random.default_rng(config.seed)
        store = ParamStore()
        enc.register_encoder(store, "enc", config.feat_dim, config.hidden, rng)
        dec.register_activity_ae(store, "act", config.hidden, rng)
        dec.register_position_ae(store, "pos", config.hidden, config.pos_hidden, rng)
        store.add("d1.w", ad.xavier_uniform(
            rng, (config.hidden, config.n_classes), config.hidden, config.n_classes))
        store.add("d1.b", np.zeros(config.n_classes))
        store.add("d2.w1", ad.xavier_uniform(
            rng, (config.hidden, config.d2_hidden), config.hidden, config.d2_hidden))
        store.add("d2.b1", np.zeros(config.d2_hidden))
        store.add("d2.w2", ad.xavier_uniform(rng, (config.d2_hidden, 1), config.d2_hidden, 1))
        store.add("d2.b2", np.zeros(1))
        self.params = store

    # parameter views -------------------------------------------------------
    def encoder_params(self) -> enc.EncoderParams:
        return enc.encoder_params(self.params, "enc")

    def activity_params(self) -> dec.ActivityAEParams:
        return dec.activity_ae_params(self.params, "act")

    def position_params(self) -> dec.PositionAEParams:
        return dec.position_ae_params(self.params, "pos")

    def main_params(self) -> ParamStore:
        """Everything the anticipation phase updates (not the regularizer)."""
        return self.params.subset(MAIN_PREFIXES)

    def d2_params(self) -> ParamStore:
        return self.params.subset(D2_PREFIX)

    # forward passes --------------------------------------------------------
    def encode_prefix(self, features, positions) -> enc.EncodedObservation:
        return enc.encode(features, positions, self.encoder_params(), self.config.epsilon)

    def rollout(self, encoded: enc.EncodedObservation, total_frames: int,
                k_stages: int | None = None) -> dec.AnticipationRollout:
        return dec.unroll(
            encoded,
            self.config.k_stages if k_stages is None else k_stages,
            self.activity_params(),
            self.position_params(),
            total_frames,
            epsilon=self.config.epsilon,
            freeze_positions=self.config.freeze_positions,
            relu_head=self.config.relu_position_head,
        )

    def classify(self, aggregated: Tensor) -> Tensor:
        return ad.affine(aggregated, self.params["d1.w"], self.params["d1.b"])

    def logits_for_prefix(self, features, positions, total_frames: int) -> Tensor:
        encoded = self.encode_prefix(features, positions)
        roll = self.rollout(encoded, total_frames)
        return self.classify(dec.aggregate(roll))

    def d2_score(self, pooled: Tensor) -> Tensor:
        """Realness score in (0, 1) for one max-pooled stage feature [1, hidden]."""
        hidden = ad.affine(pooled, self.params["d2.w1"], self.params["d2.b1"], activation=True)
        return ad.sigmoid(ad.affine(hidden, self.params["d2.w2"], self.params["d2.b2"]))

    # serialization ----------------------------------------------------------
    def save(self, path: str) -> None:
        params = {
            name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
            for name, t in self.params.items()
        }
        recognition = None
        if self.recognition is not None:
            recognition = {
                "frozen": self.recognition.frozen,
                "params": {
                    name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
                    for name, t in self.recognition.params.items()
                },
            }
        doc = {
            "version": MODEL_FILE_VERSION,
            "config": asdict(self.config),
            "params": params,
            "recognition": recognition,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "SramModel":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read model {path!r}: {exc}") from exc
        if doc.get("version") != MODEL_FILE_VERSION:
            raise DataError(f"unsupported model version {doc.get('version')!r}")
        try:
            config = ModelConfig(**doc["config"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"bad model config: {exc}") from exc
        model = cls(config)
        _load_store(model.params, doc["params"], "params")
        rec_doc = doc.get("recognition")
        if rec_doc is not None:
            rec = RecognitionModel(config)
            _load_store(rec.params, rec_doc["params"], "recognition.params")
            rec.frozen = bool(rec_doc.get("frozen", False))
            model.recognition = rec
        return model


def _load_store(store: ParamStore, entries: dict, where: str) -> None:
    expected = set(store.names())
    found = set(entries)
    if expected != found:
        missing = sorted(expected - found)
        extra = sorted(found - expected)
        raise DataError(f"{where}: parameter names mismatch (missing {missing}, extra {extra})")
    for name, rec in entries.items():
        values = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        store.set_value(name, values)


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    """Model-side configuration for an ablation variant name."""
    if variant in ("full", "no-gan", "no-rec"):
        return base
    if variant == "no-reg":
        return replace(base, freeze_positions=True)
    if variant.startswith("K="):
        try:
            k = int(variant[2:])
        except ValueError as exc:
            raise DataError(f"bad variant {variant!r}") from exc
        if k < 1:
            raise DataError(f"bad variant {variant!r}")
        return replace(base, k_stages=k)
    raise DataError(f"unknown variant {variant!r}")
