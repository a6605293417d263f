"""Observation encoder: two spatio-temporal graph convolution layers.

Each layer mixes agents through the frame's relation graphs, then runs a
length-3 temporal convolution across frames.  The encoder summarizes an
observed prefix into a per-agent latent that conditions every decoder
stage, and seeds the decoder with the last observed frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor, xavier_uniform
from .errors import ShapeError
from .graphs import DEFAULT_EPSILON, RelationGraphs, observation_graphs


@dataclass(frozen=True)
class StgcnLayerParams:
    w_position: Tensor
    w_action: Tensor
    b_position: Tensor
    b_action: Tensor
    temporal_kernel: Tensor  # [3, hidden, hidden]
    temporal_bias: Tensor


@dataclass(frozen=True)
class EncoderParams:
    layers: tuple[StgcnLayerParams, ...]

    @property
    def hidden(self) -> int:
        return self.layers[0].temporal_bias.shape[0]


@dataclass(frozen=True)
class EncodedObservation:
    """Summary of an observed prefix.

    ``z0`` is the per-agent temporal mean of the top layer, ``seed_features``
    and ``seed_positions`` are the decoder inputs at the first unrolling
    stage (the last observed frame).
    """

    z0: Tensor               # [N, hidden]
    seed_features: Tensor    # [N, hidden]
    seed_positions: Tensor   # [N, 2], normalized coordinates
    t0: int                  # number of observed frames


def register_stgcn_layer(store: ParamStore, prefix: str, d_in: int, hidden: int,
                         rng: np.random.Generator) -> None:
    store.add(f"{prefix}.w_position", xavier_uniform(rng, (d_in, hidden), d_in, hidden))
    store.add(f"{prefix}.w_action", xavier_uniform(rng, (d_in, hidden), d_in, hidden))
    store.add(f"{prefix}.b_position", np.zeros(hidden))
    store.add(f"{prefix}.b_action", np.zeros(hidden))
    store.add(f"{prefix}.temporal_kernel",
              xavier_uniform(rng, (3, hidden, hidden), 3 * hidden, hidden))
    store.add(f"{prefix}.temporal_bias", np.zeros(hidden))


def register_encoder(store: ParamStore, prefix: str, d_in: int, hidden: int,
                     rng: np.random.Generator) -> None:
    register_stgcn_layer(store, f"{prefix}.layer1", d_in, hidden, rng)
    register_stgcn_layer(store, f"{prefix}.layer2", hidden, hidden, rng)


def stgcn_layer_params(store: ParamStore, prefix: str) -> StgcnLayerParams:
    return StgcnLayerParams(
        w_position=store[f"{prefix}.w_position"],
        w_action=store[f"{prefix}.w_action"],
        b_position=store[f"{prefix}.b_position"],
        b_action=store[f"{prefix}.b_action"],
        temporal_kernel=store[f"{prefix}.temporal_kernel"],
        temporal_bias=store[f"{prefix}.temporal_bias"],
    )


def encoder_params(store: ParamStore, prefix: str) -> EncoderParams:
    return EncoderParams(layers=(
        stgcn_layer_params(store, f"{prefix}.layer1"),
        stgcn_layer_params(store, f"{prefix}.layer2"),
    ))


def _stgcn_forward(x_seq: Tensor, ga: Tensor, gp: Tensor, p: StgcnLayerParams) -> Tensor:
    spatial = ad.dual_graph_affine(ga, gp, x_seq, p.w_action, p.w_position,
                                   p.b_action, p.b_position, activation=True)
    return ad.temporal_conv3(spatial, p.temporal_kernel, p.temporal_bias)


def stgcn_layer(x_seq, graphs_seq: list[RelationGraphs], params: StgcnLayerParams) -> Tensor:
    """One ST-GCN layer over an observed [t, N, d_in] sequence.

    The per-frame graphs come from raw observed inputs and are treated as
    constants.
    """
    x_seq = x_seq if isinstance(x_seq, Tensor) else Tensor(x_seq)
    if x_seq.ndim != 3 or x_seq.shape[0] < 1:
        raise ShapeError(f"stgcn_layer expects [t, N, d_in] with t >= 1, got {x_seq.shape}")
    if len(graphs_seq) != x_seq.shape[0]:
        raise ShapeError(f"got {len(graphs_seq)} graphs for {x_seq.shape[0]} frames")
    ga = Tensor(np.stack([g.g_action.data for g in graphs_seq]))
    gp = Tensor(np.stack([g.g_position.data for g in graphs_seq]))
    return _stgcn_forward(x_seq, ga, gp, params)


def encode(features, positions, params: EncoderParams,
           epsilon: float = DEFAULT_EPSILON) -> EncodedObservation:
    """Encode an observed prefix into a latent summary plus decoder seeds.

    ``features`` is [t0, N, D], ``positions`` is [t0, N, 2] in normalized
    coordinates; per-frame graphs are built from these raw inputs.
    """
    feats = np.asarray(features, dtype=np.float64)
    poss = np.asarray(positions, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[0] < 1:
        raise ShapeError(f"encode expects a non-empty [t0, N, D] prefix, got {feats.shape}")
    if poss.shape != feats.shape[:2] + (2,):
        raise ShapeError(f"positions {poss.shape} do not match features {feats.shape}")
    ga, gp = observation_graphs(feats, poss, epsilon)
    h = Tensor(feats)
    for layer in params.layers:
        h = _stgcn_forward(h, ga, gp, layer)
    t0 = feats.shape[0]
    return EncodedObservation(
        z0=ad.mean_frames(h),
        seed_features=ad.frame(h, t0 - 1),
        seed_positions=Tensor(poss[t0 - 1]),
        t0=t0,
    )


def encode_batch(features: np.ndarray, positions: np.ndarray, params: EncoderParams,
                 epsilon: float = DEFAULT_EPSILON) -> EncodedObservation:
    """Encode a stack of equal-length prefixes [B, t0, N, D] in one pass.

    Same math as ``encode`` clip by clip, vectorized over the batch.
    """
    feats = np.asarray(features, dtype=np.float64)
    poss = np.asarray(positions, dtype=np.float64)
    if feats.ndim != 4 or feats.shape[1] < 1:
        raise ShapeError(f"encode_batch expects [B, t0, N, D], got {feats.shape}")
    ga, gp = observation_graphs(feats, poss, epsilon)
    h = Tensor(feats)
    for layer in params.layers:
        h = _stgcn_forward(h, ga, gp, layer)
    t0 = feats.shape[1]
    return EncodedObservation(
        z0=ad.mean_frames(h),
        seed_features=ad.frame(h, t0 - 1),
        seed_positions=Tensor(poss[:, t0 - 1]),
        t0=t0,
    )
