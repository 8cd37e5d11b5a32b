"""Finite-difference verification of every differentiable component.

Each check perturbs the relevant parameter store at seeded random points
and compares tape gradients against central differences. Shared by the
`grad-check` CLI command and the acceptance suite.
"""
from __future__ import annotations

import numpy as np

from . import nn
from .basemodel import BaseConfig, InternalPredictor, build_base_store
from .explainer import (ExplainerConfig, build_explainer_store, encode_and_score,
                        prepare_query, query_objective)
from .graph import generate_synthetic
from .layers import concrete_sample, gine_layer, time_encode
from .nn import ParameterStore, Tape, grad_check


def _perturb(store: ParameterStore, rng: np.random.Generator, scale: float = 0.2) -> None:
    for name in store.arrays:
        store.arrays[name] = store.arrays[name] + rng.uniform(-scale, scale,
                                                              store.arrays[name].shape)


def _check_over_points(build_loss, store: ParameterStore, points: int, seed: int,
                       eps: float = 1e-5, max_coords: int = 4) -> float:
    worst = 0.0
    for k in range(points):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xC4EC, k])))
        trial = store.copy()
        _perturb(trial, rng)
        worst = max(worst, grad_check(build_loss, trial, eps=eps, rng=rng,
                                      max_coords=max_coords))
    return worst


def time_encoder_check(points: int = 1, seed: int = 0) -> float:
    store = ParameterStore()
    store.add("time_w", nn.log_spaced_freqs(100.0, 5))
    dts = np.array([0.0, 1.5, 7.0, 42.0])
    probe = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1]))) \
        .normal(size=(4, 10))

    def loss(tape: Tape):
        return nn.vsum(nn.mul(time_encode(dts, tape.param("time_w")), nn.const(probe)))
    return _check_over_points(loss, store, points, seed)


def gine_check(points: int = 1, seed: int = 0) -> float:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    store = ParameterStore()
    from .layers import add_gine_params
    add_gine_params(store, "gine0", 6, 9, rng)
    x = rng.normal(size=(4, 6))
    edge_feats = rng.normal(size=(6, 9))
    src = np.array([0, 1, 1, 2, 2, 3])
    dst = np.array([1, 0, 2, 1, 3, 2])
    probe = rng.normal(size=(4, 6))

    def loss(tape: Tape):
        out = gine_layer(tape, "gine0", nn.const(x), src, dst, nn.const(edge_feats))
        return nn.vsum(nn.mul(out, nn.const(probe)))
    return _check_over_points(loss, store, points, seed)


def concrete_check(points: int = 1, seed: int = 0) -> float:
    store = ParameterStore()
    store.add("p", np.array([0.2, 0.5, 0.7, 0.9]))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))
    draws = rng.uniform(0.05, 0.95, size=4)
    probe = rng.normal(size=4)

    def loss(tape: Tape):
        return nn.vsum(nn.mul(concrete_sample(tape.param("p"), 0.5, draws), nn.const(probe)))

    # keep probabilities inside (0, 1) when perturbing
    worst = 0.0
    for k in range(points):
        prng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xC4EC, k])))
        trial = store.copy()
        trial.arrays["p"] = np.clip(trial.arrays["p"] + prng.uniform(-0.1, 0.1, 4), 0.02, 0.98)
        worst = max(worst, grad_check(loss, trial, eps=1e-6, rng=prng))
    return worst


def _toy_pipeline(seed: int = 0):
    g = generate_synthetic("triadic-closure", 12, 80, seed=seed + 5)
    bcfg = BaseConfig(h=8, d_time=4, k_nb=8, seed=seed)
    base_store = build_base_store(g, bcfg)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 4])))
    _perturb(base_store, rng)  # nonzero head so gradients reach every layer
    ecfg = ExplainerConfig(c=4, n=3, l=3, d_time=4, h=8, seed=seed, per_hop_cap=8)
    expl_store = build_explainer_store(g, base_store.meta, ecfg)
    base = InternalPredictor(base_store)
    query = g.event(g.n_events - 1)
    prep = prepare_query(g, base, query, ecfg, seed=seed)
    assert prep is not None, "toy pipeline produced no motifs"
    return g, base_store, expl_store, ecfg, prep


def motif_encoder_check(points: int = 1, seed: int = 0) -> float:
    _, _, expl_store, _, prep = _toy_pipeline(seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 6])))
    n_motifs = len(prep.instances)
    probe = rng.normal(size=(n_motifs, expl_store.meta["h"]))

    def loss(tape: Tape):
        _, emb, _ = encode_and_score(tape, [prep])
        return nn.vsum(nn.mul(emb, nn.const(probe)))
    return _check_over_points(loss, expl_store, points, seed)


def scorer_check(points: int = 1, seed: int = 0) -> float:
    _, _, expl_store, _, prep = _toy_pipeline(seed)

    def loss(tape: Tape):
        scores, _, _ = encode_and_score(tape, [prep])
        return nn.vsum(scores)
    return _check_over_points(loss, expl_store, points, seed)


def objective_check(points: int = 1, seed: int = 0) -> float:
    g, base_store, expl_store, ecfg, prep = _toy_pipeline(seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    draws = rng.uniform(0.1, 0.9, size=len(prep.instances))
    null_probs = None
    if ecfg.prior == "empirical":
        from .motifs import null_class_probs
        null_probs = null_class_probs(g, ecfg.n, ecfg.l, c_per_node=4, seed=seed)

    def loss(tape: Tape):
        scores, _, _ = encode_and_score(tape, [prep])
        return query_objective(base_store, g, prep, scores, draws, ecfg, null_probs)
    return _check_over_points(loss, expl_store, points, seed)


def substrate_grad_checks(seed: int = 0, points: int = 1) -> dict:
    """Max relative gradient error for every differentiable component."""
    return {
        "time_encoder": time_encoder_check(points, seed),
        "gine_layer": gine_check(points, seed),
        "concrete_sample": concrete_check(points, seed),
        "motif_encoder": motif_encoder_check(points, seed),
        "importance_scorer": scorer_check(points, seed),
        "full_objective": objective_check(points, seed),
    }
