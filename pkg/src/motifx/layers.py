"""Differentiable building blocks: time encoding, edge-aware message passing, Concrete masks."""
from __future__ import annotations

import math

import numpy as np

from . import nn
from .errors import ShapeError
from .nn import Var

PROB_EPS = 1e-6


def time_encode(delta_t, w) -> Var:
    """Map non-negative intervals to interleaved cos/sin features.

    Returns a (K, 2d) matrix scaled by sqrt(1/d); differentiable in the
    frequency vector w. An interval of zero encodes to
    sqrt(1/d) * [1, 0, 1, 0, ...].
    """
    w = nn._v(w)
    d = w.value.shape[0]
    dt = np.asarray(delta_t, dtype=np.float64).reshape(-1, 1)
    angles = nn.matmul(nn.const(dt), nn.reshape(w, (1, d)))
    enc = nn.interleave_cols(nn.cos(angles), nn.sin(angles))
    return nn.scale(enc, math.sqrt(1.0 / d))


def gine_layer(tape, prefix: str, x: Var, src, dst, edge_feats: Var) -> Var:
    """One edge-featured GIN convolution.

    x'_i = h1((1 + eps) * x_i + sum_j ReLU(x_j + h2(E_ji))) where h2
    projects edge features to the node width and h1 is a two-layer MLP.
    Callers pass directed edge lists; undirected graphs list each event
    twice. Aggregation order is fixed by the caller's edge ordering.
    """
    proj = tape.affine(edge_feats, f"{prefix}.edge")
    if proj.value.shape[1] != x.value.shape[1]:
        raise ShapeError(f"gine: edge projection {proj.value.shape} vs nodes {x.value.shape}")
    msgs = nn.relu(nn.add(nn.gather_rows(x, src), proj))
    agg = nn.segment_sum(msgs, dst, x.value.shape[0])
    eps = tape.param(f"{prefix}.eps")
    pre = nn.add(nn.mul(x, nn.add(nn.const(1.0), eps)), agg)
    hid = nn.relu(tape.affine(pre, f"{prefix}.h1a"))
    return tape.affine(hid, f"{prefix}.h1b")


def add_gine_params(store, prefix: str, node_dim: int, edge_dim: int,
                    rng: np.random.Generator) -> None:
    store.add_affine(f"{prefix}.edge", edge_dim, node_dim, rng)
    store.add(f"{prefix}.eps", np.zeros(1))
    store.add_affine(f"{prefix}.h1a", node_dim, node_dim, rng)
    store.add_affine(f"{prefix}.h1b", node_dim, node_dim, rng)


def concrete_sample(p, lam: float, u) -> Var:
    """Relaxed Bernoulli draw sigma((logit(p) + logit(u)) / lam).

    p is clamped to [1e-6, 1-1e-6] before the logit; u is a fixed uniform
    draw so the output is differentiable in p only.
    """
    if lam <= 0:
        raise ValueError("temperature must be positive")
    p = nn.clip(nn._v(p), PROB_EPS, 1.0 - PROB_EPS)
    uu = np.asarray(u, dtype=np.float64)
    noise = np.log(uu) - np.log1p(-uu)
    logit = nn.sub(nn.log(p), nn.log(nn.sub(nn.const(1.0), p)))
    return nn.sigmoid(nn.scale(nn.add(logit, nn.const(noise)), 1.0 / lam))


def bernoulli_hard(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unrelaxed mask draw used at inference time."""
    return (rng.random(len(p)) < p).astype(np.float64)


def masked_attention(query: Var, keys: Var, values: Var, mask: Var) -> Var:
    """Dot-product attention where weights renormalize over masked-in keys only.

    weights_i = mask_i * exp(s_i) / sum_j mask_j * exp(s_j). With a hard
    0/1 mask this equals attention restricted to the retained keys; there
    are no phantom keys.
    """
    dim = keys.value.shape[1]
    scores = nn.scale(nn.matmul(keys, nn.reshape(query, (dim, 1))), 1.0 / math.sqrt(dim))
    scores = nn.reshape(scores, (-1,))
    shifted = nn.exp(nn.sub(scores, nn.const(float(np.max(scores.value)))))
    weighted = nn.mul(nn.reshape(mask, (-1,)), shifted)
    denom = nn.vsum(weighted)
    w = nn.div(weighted, denom)
    return nn.reshape(nn.matmul(nn.reshape(w, (1, -1)), values), (-1,))
