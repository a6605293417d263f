"""Pairwise relation graphs over agents: feature affinity and inverse distance.

Both builders return row-stochastic N x N matrices and are differentiable,
so the decoder can refine its graphs from generated features and positions
at every unrolling stage.  Each builder is a single fused tape node; the
compositional helpers used by the oracle tests live alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class RelationGraphs:
    """The graph pair for one frame or unrolling stage."""

    g_action: Tensor
    g_position: Tensor
    n_agents: int


def action_graph(x) -> Tensor:
    """Row softmax over pairwise feature dot products (self term included).

    ``x`` is [N, D] (or stacked [t, N, D]); row i holds the normalized
    affinity of agent i to every agent j.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"action_graph expects [N, D] features, got {x.shape}")
    xd = x.data
    logits = np.matmul(xd, np.swapaxes(xd, -1, -2))
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    if not ad._tracing(x):
        return ad._const(out)

    def bw(g, x=x, out=out):
        ds = (g - (g * out).sum(axis=-1, keepdims=True)) * out
        dx = np.matmul(ds, x.data) + np.matmul(np.swapaxes(ds, -1, -2), x.data)
        ad._acc(x, dx)

    return ad._node(out, (x,), bw)


def _offdiag_mask(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def position_weights(b, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    """Pre-normalization inverse-distance weights: symmetric, zero diagonal."""
    b = b if isinstance(b, Tensor) else Tensor(b)
    if b.ndim < 2 or b.shape[-1] != 2:
        raise ShapeError(f"position_weights expects [N, 2] points, got {b.shape}")
    dist = ad.pairwise_dist(b)
    return ad.mul(ad.reciprocal(ad.add(dist, epsilon)), _offdiag_mask(b.shape[-2]))


def position_graph(b, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    """Row-normalized inverse-distance graph with a zeroed diagonal.

    The self edge is excluded (1/d(i,i) is undefined); self information
    reaches the decoder through the action graph and the encoder summary.
    A single agent degenerates to [[1]].
    """
    b = b if isinstance(b, Tensor) else Tensor(b)
    if b.ndim < 2 or b.shape[-1] != 2:
        raise ShapeError(f"position_graph expects [N, 2] points, got {b.shape}")
    n = b.shape[-2]
    if n == 1:
        return Tensor(np.ones(b.shape[:-2] + (1, 1)))
    bd = b.data
    diff = bd[..., :, None, :] - bd[..., None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    inv = _offdiag_mask(n) / (dist + epsilon)
    sums = inv.sum(axis=-1, keepdims=True)
    out = inv / sums
    if not ad._tracing(b):
        return ad._const(out)

    def bw(g, b=b, diff=diff, dist=dist, inv=inv, sums=sums, out=out, epsilon=epsilon):
        dw = (g - (g * out).sum(axis=-1, keepdims=True)) / sums
        dd = -dw * inv / (dist + epsilon)
        unit = diff / np.maximum(dist, 1e-12)[..., None]
        dsym = dd + np.swapaxes(dd, -1, -2)
        ad._acc(b, (dsym[..., None] * unit).sum(axis=-2))

    return ad._node(out, (b,), bw)


def build_graphs(features, positions, epsilon: float = DEFAULT_EPSILON) -> RelationGraphs:
    """Graph pair for one frame or stage from its features and positions."""
    ga = action_graph(features)
    gp = position_graph(positions, epsilon)
    return RelationGraphs(g_action=ga, g_position=gp, n_agents=ga.shape[-1])


def observation_graphs(features: np.ndarray, positions: np.ndarray,
                       epsilon: float = DEFAULT_EPSILON) -> tuple[Tensor, Tensor]:
    """Stacked constant graphs [t, N, N] for a sequence of observed frames.

    Observed frames are raw inputs, so no gradient flows through these.
    """
    with ad.no_grad():
        ga = action_graph(np.asarray(features, dtype=np.float64))
        gp = position_graph(np.asarray(positions, dtype=np.float64), epsilon)
    return ga, gp
