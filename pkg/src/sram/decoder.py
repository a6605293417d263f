"""Sequential decoder: K unrolling stages of two coupled graph auto-encoders.

At each stage the current anticipated features and positions define fresh
relation graphs; the activity auto-encoder advances the group features and
the position auto-encoder advances agent positions.  Both are conditioned
on the encoder summary.  The final stage's features, max-pooled over
agents, feed the classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor, xavier_uniform
from .errors import ShapeError
from .graphs import DEFAULT_EPSILON, RelationGraphs, build_graphs


@dataclass(frozen=True)
class ActivityAEParams:
    u_ep: Tensor
    u_ea: Tensor
    u_dp: Tensor
    u_da: Tensor
    b_ep: Tensor
    b_ea: Tensor
    b_dp: Tensor
    b_da: Tensor


@dataclass(frozen=True)
class PositionAEParams:
    v_e1: Tensor  # [2, pos_hidden]
    v_e2: Tensor  # [pos_hidden, hidden]
    v_dp: Tensor  # [hidden, 2]
    v_da: Tensor  # [hidden, 2]
    b_e1: Tensor
    b_e2: Tensor
    b_dp: Tensor
    b_da: Tensor


@dataclass(frozen=True)
class AnticipationRollout:
    """Per-stage anticipated features and positions, oldest stage first."""

    features: tuple[Tensor, ...]        # K tensors [N, hidden]
    positions: tuple[Tensor, ...]       # K tensors [N, 2]
    stage_graphs: tuple[RelationGraphs, ...]
    stage_times: tuple[int, ...]        # 1-based frame index per stage

    @property
    def k_stages(self) -> int:
        return len(self.features)


def register_activity_ae(store: ParamStore, prefix: str, hidden: int,
                         rng: np.random.Generator) -> None:
    for name in ("u_ep", "u_ea", "u_dp", "u_da"):
        store.add(f"{prefix}.{name}", xavier_uniform(rng, (hidden, hidden), hidden, hidden))
    for name in ("b_ep", "b_ea", "b_dp", "b_da"):
        store.add(f"{prefix}.{name}", np.zeros(hidden))


def register_position_ae(store: ParamStore, prefix: str, hidden: int, pos_hidden: int,
                         rng: np.random.Generator) -> None:
    store.add(f"{prefix}.v_e1", xavier_uniform(rng, (2, pos_hidden), 2, pos_hidden))
    store.add(f"{prefix}.v_e2", xavier_uniform(rng, (pos_hidden, hidden), pos_hidden, hidden))
    store.add(f"{prefix}.v_dp", xavier_uniform(rng, (hidden, 2), hidden, 2))
    store.add(f"{prefix}.v_da", xavier_uniform(rng, (hidden, 2), hidden, 2))
    store.add(f"{prefix}.b_e1", np.zeros(pos_hidden))
    store.add(f"{prefix}.b_e2", np.zeros(hidden))
    store.add(f"{prefix}.b_dp", np.zeros(2))
    store.add(f"{prefix}.b_da", np.zeros(2))


def activity_ae_params(store: ParamStore, prefix: str) -> ActivityAEParams:
    return ActivityAEParams(**{
        name: store[f"{prefix}.{name}"]
        for name in ("u_ep", "u_ea", "u_dp", "u_da", "b_ep", "b_ea", "b_dp", "b_da")
    })


def position_ae_params(store: ParamStore, prefix: str) -> PositionAEParams:
    return PositionAEParams(**{
        name: store[f"{prefix}.{name}"]
        for name in ("v_e1", "v_e2", "v_dp", "v_da", "b_e1", "b_e2", "b_dp", "b_da")
    })


def activity_step(x_hat: Tensor, graphs: RelationGraphs, z0: Tensor,
                  params: ActivityAEParams) -> tuple[Tensor, Tensor]:
    """One activity auto-encoder stage: returns (stage latent, next features).

    The encoder pairs the position graph with u_ep and the action graph
    with u_ea; the decoder pairs them the other way around.
    """
    ga, gp = graphs.g_action, graphs.g_position
    z_a = ad.dual_graph_affine(ga, gp, x_hat, params.u_ea, params.u_ep,
                               params.b_ea, params.b_ep, activation=True)
    state = ad.add(z0, z_a)
    x_next = ad.dual_graph_affine(ga, gp, state, params.u_da, params.u_dp,
                                  params.b_da, params.b_dp, activation=True)
    return z_a, x_next


def position_step(b_hat: Tensor, graphs: RelationGraphs, z0: Tensor,
                  params: PositionAEParams, relu_head: bool = False) -> tuple[Tensor, Tensor]:
    """One position auto-encoder stage: returns (stage latent, next positions).

    The encoder is two graph convolutions (2 -> pos_hidden -> hidden), each
    keeping the two-branch sum over both graphs.  The output head is linear
    by default: a ReLU head would clamp coordinates at zero and forbid
    motion toward the origin.  ``relu_head=True`` restores the clamped
    variant for comparison.
    """
    ga, gp = graphs.g_action, graphs.g_position
    h = ad.dual_graph_affine(ga, gp, b_hat, params.v_e1, params.v_e1,
                             params.b_e1, params.b_e1, activation=True)
    z_p = ad.dual_graph_affine(ga, gp, h, params.v_e2, params.v_e2,
                               params.b_e2, params.b_e2, activation=True)
    state = ad.add(z0, z_p)
    b_next = ad.dual_graph_affine(ga, gp, state, params.v_da, params.v_dp,
                                  params.b_da, params.b_dp, activation=relu_head)
    return z_p, b_next


def stage_times(t0: int, total_frames: int, k_stages: int) -> tuple[int, ...]:
    """Stage-to-frame mapping: linear interpolation from t0 to the clip end.

    The final stage always lands on the last frame.
    """
    span = total_frames - t0
    return tuple(
        int(math.floor(t0 + j * span / k_stages + 0.5)) for j in range(1, k_stages + 1)
    )


def unroll_steps(z0: Tensor, seed_features: Tensor, seed_positions: Tensor,
                 k_stages: int, act: ActivityAEParams, pos: PositionAEParams,
                 epsilon: float = DEFAULT_EPSILON, freeze_positions: bool = False,
                 relu_head: bool = False):
    """The stage loop shared by per-clip and batched rollouts."""
    if k_stages < 1:
        raise ShapeError(f"k_stages must be >= 1, got {k_stages}")
    x_hat = seed_features
    b_hat = seed_positions
    feats: list[Tensor] = []
    poss: list[Tensor] = []
    stage_gs: list[RelationGraphs] = []
    for _ in range(k_stages):
        graphs = build_graphs(x_hat, b_hat, epsilon)
        _, x_hat = activity_step(x_hat, graphs, z0, act)
        if not freeze_positions:
            _, b_hat = position_step(b_hat, graphs, z0, pos, relu_head)
        feats.append(x_hat)
        poss.append(b_hat)
        stage_gs.append(graphs)
    return tuple(feats), tuple(poss), tuple(stage_gs)


def unroll(enc, k_stages: int, act: ActivityAEParams, pos: PositionAEParams,
           total_frames: int, epsilon: float = DEFAULT_EPSILON,
           freeze_positions: bool = False, relu_head: bool = False) -> AnticipationRollout:
    """Run K unrolling stages from the encoded observation.

    Stage k builds its graphs from the current features and positions; both
    auto-encoders share those graphs and the encoder summary.  With
    ``freeze_positions`` the position auto-encoder is bypassed and every
    stage keeps the last observed positions (the no-regression ablation).
    """
    feats, poss, stage_gs = unroll_steps(
        enc.z0, enc.seed_features, enc.seed_positions, k_stages, act, pos,
        epsilon=epsilon, freeze_positions=freeze_positions, relu_head=relu_head)
    return AnticipationRollout(
        features=feats,
        positions=poss,
        stage_graphs=stage_gs,
        stage_times=stage_times(enc.t0, total_frames, k_stages),
    )


def aggregate(rollout: AnticipationRollout) -> Tensor:
    """Group feature for classification: column max of the final stage."""
    if rollout.k_stages < 1:
        raise ShapeError("empty rollout")
    return ad.col_max(rollout.features[-1])
