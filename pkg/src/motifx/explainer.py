"""Motif-level explanation generator trained with an information-bottleneck objective.

For each query the generator samples retrospective motifs around both
endpoints, embeds them with an edge-featured graph convolution, scores
each instance in [0, 1], and is trained so that soft-masking the base
model's visible events by those scores preserves the original prediction
(cross-entropy term) while the score distribution stays close to a prior
(KL term, either uniform or referenced to the null model's class
frequencies).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

import numpy as np

from . import nn
from .basemodel import (InternalPredictor, QueryCache, build_query_cache,
                        negative_partner, soft_predict, split_event_ids)
from .errors import InvariantError, NonFiniteError
from .features import anonymize, event_feature_block, feature_width
from .graph import Event, TemporalGraph, computational_graph, query_event
from .layers import PROB_EPS, add_gine_params, concrete_sample, gine_layer
from .metrics import SPARSITY_LEVELS, retained_size
from .motifs import MotifInstance, motif_code, null_class_probs, sample_motifs
from .nn import ConstTape, ParameterStore, Tape, Var


@dataclass
class ExplainerConfig:
    c: int = 40              # motifs sampled per endpoint
    n: int = 3
    l: int = 3
    delta: float | None = None
    d_time: int = 50
    h: int = 64              # motif embedding width
    gine_depth: int = 1
    prior: str = "empirical"
    p: float = 0.3
    beta: float = 0.5
    lam: float = 0.5
    lr: float = 1e-3
    epochs: int = 10
    batch: int = 64
    hops: int = 1
    per_hop_cap: int = 20
    seed: int = 0
    smoothing: float = 1e-6
    max_train_queries: int | None = None


def build_explainer_store(g: TemporalGraph, base_meta: dict, cfg: ExplainerConfig) -> ParameterStore:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xEC5])))
    edge_width = feature_width(g.attr_width, cfg.d_time, cfg.l)
    ctx_dim = 2 * base_meta["h"]
    store = ParameterStore()
    store.add("time_w", nn.log_spaced_freqs(max(g.time_span, 1.0), cfg.d_time))
    store.add_affine("nodein", 1, cfg.h, rng)
    for depth in range(cfg.gine_depth):
        add_gine_params(store, f"gine{depth}", cfg.h, edge_width, rng)
    store.add_affine("score1", cfg.h + ctx_dim, cfg.h, rng)
    store.add_affine("score2", cfg.h, 1, rng, zero=True)  # fresh scorer says 0.5 for everything
    store.meta = {"kind": "explainer", "h": cfg.h, "d_time": cfg.d_time,
                  "n": cfg.n, "l": cfg.l, "gine_depth": cfg.gine_depth,
                  "edge_width": edge_width, "ctx_dim": ctx_dim,
                  "attr_width": g.attr_width, "config": asdict(cfg)}
    return store


def query_seed(seed: int, qidx: int) -> int:
    return int(np.random.SeedSequence([seed, 0x51, qidx]).generate_state(1)[0])


def sample_query_motifs(g: TemporalGraph, u: int, v: int, t: float,
                        cfg: ExplainerConfig, seed: int) -> list[MotifInstance]:
    """C motifs around each endpoint; single-event trajectories are dropped
    (they carry no order information and sit outside the class vocabulary)."""
    insts = sample_motifs(g, u, t, cfg.n, cfg.l, cfg.c, cfg.delta, seed)
    insts += sample_motifs(g, v, t, cfg.n, cfg.l, cfg.c, cfg.delta, seed)
    return [inst for inst in insts if len(inst) >= 2]


@dataclass
class QueryPrep:
    """Everything reusable across epochs for one training/eval query."""
    query: Event
    label: int
    qc: QueryCache
    comp_ids: np.ndarray
    instances: list
    codes: list
    ctx: np.ndarray
    covered_ids: np.ndarray
    pair_cov: np.ndarray      # aligned (covered-event slot, motif index) pairs
    pair_motif: np.ndarray
    # flattened encoder inputs
    node_seg: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_event: np.ndarray
    attrs_block: np.ndarray
    h_block: np.ndarray
    dts: np.ndarray
    n_nodes: int
    n_events: int


def prepare_query(g: TemporalGraph, base: InternalPredictor, query: Event, cfg: ExplainerConfig,
                  seed: int) -> QueryPrep | None:
    comp = computational_graph(g, query, cfg.hops, cfg.per_hop_cap)
    if len(comp) == 0:
        return None
    instances = sample_query_motifs(g, query.u, query.v, query.t, cfg, seed)
    if not instances:
        return None
    struct = anonymize(instances, cfg.l)
    codes = [motif_code(inst) for inst in instances]

    node_seg, edge_src, edge_dst, edge_event = [], [], [], []
    attrs_rows, h_rows, dts = [], [], []
    node_off = 0
    ev_off = 0
    for m_idx, inst in enumerate(instances):
        local: dict[int, int] = {}
        order: list[int] = []
        for a, b in inst.pairs:
            for x in (a, b):
                if x not in local:
                    local[x] = len(order)
                    order.append(x)
        for k, (a, b) in enumerate(inst.pairs):
            ia, ib = local[a] + node_off, local[b] + node_off
            # undirected: both directions, fixed order
            edge_src.extend((ia, ib))
            edge_dst.extend((ib, ia))
            edge_event.extend((ev_off + k, ev_off + k))
            key = (a, b) if a <= b else (b, a)
            h = struct.get(key)
            if h is None:
                raise InvariantError(f"pair {key} missing from structural map")
            h_rows.append(h)
            dts.append(query.t - inst.times[k])
        attrs_rows.append(g.attrs[list(inst.event_ids)])
        node_seg.extend([m_idx] * len(order))
        node_off += len(order)
        ev_off += len(inst)

    comp_set = set(int(e) for e in comp.member_ids)
    covered = sorted({eid for inst in instances for eid in inst.event_ids if eid in comp_set})
    cov_pos = {e: i for i, e in enumerate(covered)}
    pair_cov, pair_motif = [], []
    for m_idx, inst in enumerate(instances):
        for eid in inst.event_ids:
            if eid in cov_pos:
                pair_cov.append(cov_pos[eid])
                pair_motif.append(m_idx)

    return QueryPrep(
        query=query, label=base.label(g, query),
        qc=build_query_cache(g, query, base.k_nb),
        comp_ids=comp.member_ids, instances=instances, codes=codes,
        ctx=base.query_context(g, query),
        covered_ids=np.array(covered, dtype=np.int64),
        pair_cov=np.array(pair_cov, dtype=np.int64),
        pair_motif=np.array(pair_motif, dtype=np.int64),
        node_seg=np.array(node_seg, dtype=np.int64),
        edge_src=np.array(edge_src, dtype=np.int64),
        edge_dst=np.array(edge_dst, dtype=np.int64),
        edge_event=np.array(edge_event, dtype=np.int64),
        attrs_block=np.concatenate(attrs_rows, axis=0) if attrs_rows else np.zeros((0, g.attr_width)),
        h_block=np.array(h_rows, dtype=np.float64),
        dts=np.array(dts, dtype=np.float64),
        n_nodes=node_off, n_events=ev_off)


def encode_and_score(tape, preps: list[QueryPrep]) -> tuple[Var, Var, list[int]]:
    """Batched motif embeddings and importance scores for several queries.

    Returns (scores, embeddings, per-query motif counts); scores are
    sigmoid outputs clamped away from 0 and 1.
    """
    node_seg, src, dst, eev = [], [], [], []
    attrs, hb, dts, ctx_rows = [], [], [], []
    n_off = e_off = m_off = 0
    counts = []
    for prep in preps:
        node_seg.append(prep.node_seg + m_off)
        src.append(prep.edge_src + n_off)
        dst.append(prep.edge_dst + n_off)
        eev.append(prep.edge_event + e_off)
        attrs.append(prep.attrs_block)
        hb.append(prep.h_block)
        dts.append(prep.dts)
        m = len(prep.instances)
        ctx_rows.append(np.repeat(prep.ctx.reshape(1, -1), m, axis=0))
        counts.append(m)
        n_off += prep.n_nodes
        e_off += prep.n_events
        m_off += m
    node_seg = np.concatenate(node_seg)
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    eev = np.concatenate(eev)
    order = np.lexsort((src, dst))  # fixed aggregation order: by target then source
    src, dst, eev = src[order], dst[order], eev[order]

    feat = event_feature_block(np.concatenate(attrs, axis=0), np.concatenate(dts),
                               np.concatenate(hb, axis=0), tape.param("time_w"))
    x = tape.affine(nn.const(np.ones((n_off, 1))), "nodein")
    depth = 0
    while f"gine{depth}.eps" in tape.store.arrays:
        x = gine_layer(tape, f"gine{depth}", x, src, dst, nn.gather_rows(feat, eev))
        depth += 1
    emb = nn.segment_mean(x, node_seg, m_off)
    score_in = nn.concat([emb, nn.const(np.concatenate(ctx_rows, axis=0))], axis=1)
    hidden = nn.relu(tape.affine(score_in, "score1"))
    raw = nn.sigmoid(nn.reshape(tape.affine(hidden, "score2"), (-1,)))
    scores = nn.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    return scores, emb, counts


def importance_scores(tape, embeddings: Var, ctx: np.ndarray) -> Var:
    """Score a block of motif embeddings against one query context."""
    rows = np.repeat(ctx.reshape(1, -1), embeddings.value.shape[0], axis=0)
    hidden = nn.relu(tape.affine(nn.concat([embeddings, nn.const(rows)], axis=1), "score1"))
    raw = nn.sigmoid(nn.reshape(tape.affine(hidden, "score2"), (-1,)))
    return nn.clip(raw, PROB_EPS, 1.0 - PROB_EPS)


# -- losses ---------------------------------------------------------------------

def _wrap(scores):
    if isinstance(scores, Var):
        return scores, True
    return nn.const(np.asarray(scores, dtype=np.float64)), False


def kl_uniform(scores, prior_p: float):
    """KL of independent Bernoulli scores against a shared prior probability.

    Sum over motifs of p_I log(p_I / p) + (1 - p_I) log((1 - p_I) / (1 - p)).
    Zero when every score equals the prior; never negative.
    """
    s, is_var = _wrap(scores)
    one = nn.const(1.0)
    pos = nn.mul(s, nn.log(nn.scale(s, 1.0 / prior_p)))
    neg = nn.mul(nn.sub(one, s), nn.log(nn.scale(nn.sub(one, s), 1.0 / (1.0 - prior_p))))
    out = nn.vsum(nn.add(pos, neg))
    return out if is_var else float(out.value)


def kl_empirical(scores, codes, prior_p: float, null_probs: dict):
    """Closed-form KL against the null-model reference.

    (1 - s) log((1 - s)/(1 - p)) + s * sum_i q_i log(s q_i / (p m_i)),
    where s is the mean score, q_i the score-weighted class shares and
    m_i the null model's class probabilities (all positive after
    smoothing). Classes absent from the sample contribute nothing.
    """
    s_vec, is_var = _wrap(scores)
    m_count = s_vec.value.shape[0]
    if len(codes) != m_count:
        raise InvariantError(f"{len(codes)} codes for {m_count} scores")
    groups: dict[str, list] = {}
    for i, code in enumerate(codes):
        groups.setdefault(code, []).append(i)
    s = nn.vmean(s_vec)
    one = nn.const(1.0)
    out = nn.mul(nn.sub(one, s), nn.log(nn.scale(nn.sub(one, s), 1.0 / (1.0 - prior_p))))
    for code in sorted(groups):
        m_i = null_probs.get(code)
        if m_i is None:
            raise InvariantError(f"class {code!r} missing from the null probabilities")
        # s * q_i reduces to (sum of class scores) / |M|
        r = nn.scale(nn.vsum(nn.gather_rows(s_vec, np.array(groups[code]))), 1.0 / m_count)
        out = nn.add(out, nn.mul(r, nn.log(nn.scale(r, 1.0 / (prior_p * m_i)))))
    return out if is_var else float(out.value)


def ib_loss(masked_pred, original_label: int, kl_value, beta: float):
    """Cross-entropy of the masked prediction against the unmasked label, plus beta * KL."""
    pred, is_var = (masked_pred, True) if isinstance(masked_pred, Var) \
        else (nn.const(float(masked_pred)), False)
    p = nn.clip(pred, 1e-7, 1.0 - 1e-7)
    ce = nn.neg(nn.log(p)) if original_label == 1 else nn.neg(nn.log(nn.sub(nn.const(1.0), p)))
    kl = kl_value if isinstance(kl_value, Var) else nn.const(float(kl_value))
    out = nn.add(ce, nn.scale(kl, beta))
    if not np.isfinite(out.value):
        raise NonFiniteError(f"objective became {out.value!r}")
    return out if is_var else float(out.value)


def _kl_term(scores_q: Var, prep: QueryPrep, cfg: ExplainerConfig, null_probs: dict | None) -> Var:
    if cfg.prior == "uniform":
        return kl_uniform(scores_q, cfg.p)
    if null_probs is None:
        raise InvariantError("empirical prior needs null-model class probabilities")
    return kl_empirical(scores_q, prep.codes, cfg.p, null_probs)


def query_objective(base_store: ParameterStore, g: TemporalGraph, prep: QueryPrep,
                    scores_q: Var, draws: np.ndarray, cfg: ExplainerConfig,
                    null_probs: dict | None) -> Var:
    """Relaxed-mask objective for one query given its motif scores and uniform draws."""
    alpha = concrete_sample(scores_q, cfg.lam, draws)
    ev_mask = nn.segment_max(nn.gather_rows(alpha, prep.pair_motif), prep.pair_cov,
                             len(prep.covered_ids), floor=0.0)
    pred = soft_predict(ConstTape(base_store), base_store, g, prep.qc,
                        prep.covered_ids, ev_mask)
    return ib_loss(pred, prep.label, _kl_term(scores_q, prep, cfg, null_probs), cfg.beta)


@dataclass
class ExplainerReport:
    epoch_losses: list = field(default_factory=list)
    n_queries: int = 0
    n_skipped: int = 0
    mean_score: float = 0.0


def _training_preps(g: TemporalGraph, base: InternalPredictor, cfg: ExplainerConfig,
                    train_ids: np.ndarray) -> tuple[list[QueryPrep], int]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0x9E6])))
    ids = list(int(e) for e in train_ids)
    if cfg.max_train_queries is not None and len(ids) > cfg.max_train_queries:
        pick = rng.choice(len(ids), size=cfg.max_train_queries, replace=False)
        ids = [ids[i] for i in sorted(pick)]
    preps: list[QueryPrep] = []
    skipped = 0
    for qidx, eid in enumerate(ids):
        ev = g.event(eid)
        neg = query_event(ev.u, negative_partner(rng, g.node_count, ev.u), ev.t, g.attr_width)
        for query in (ev, neg):
            prep = prepare_query(g, base, query, cfg, query_seed(cfg.seed, qidx * 2 + (query is neg)))
            if prep is None:
                skipped += 1
            else:
                preps.append(prep)
    return preps, skipped


def train_explainer(g: TemporalGraph, base_store: ParameterStore, cfg: ExplainerConfig,
                    null_probs: dict | None = None) -> tuple[ParameterStore, ExplainerReport]:
    """Fit the generator on the training split (events and 1:1 negatives).

    Motif samples, structural features and base-model contexts are
    prepared once per query and reused across epochs; only the mask draws
    are resampled. Deterministic given cfg.seed.
    """
    base = InternalPredictor(base_store)
    store = build_explainer_store(g, base_store.meta, cfg)
    if cfg.prior == "empirical" and null_probs is None:
        null_probs = null_class_probs(g, cfg.n, cfg.l, c_per_node=cfg.c,
                                      delta=cfg.delta, seed=cfg.seed,
                                      smoothing=cfg.smoothing)
    train_ids, _, _ = split_event_ids(g)
    preps, skipped = _training_preps(g, base, cfg, train_ids)
    report = ExplainerReport(n_queries=len(preps), n_skipped=skipped)
    if not preps:
        return store, report
    state = nn.adam_init(store)
    for epoch in range(cfg.epochs):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xD4A5, epoch])))
        order = rng.permutation(len(preps))
        total = 0.0
        n_batches = 0
        for lo in range(0, len(order), cfg.batch):
            chunk = [preps[i] for i in order[lo:lo + cfg.batch]]
            tape = Tape(store)
            scores, _, counts = encode_and_score(tape, chunk)
            offsets = np.cumsum([0] + counts)
            terms = []
            for prep, a, b in zip(chunk, offsets[:-1], offsets[1:]):
                scores_q = nn.gather_rows(scores, np.arange(a, b))
                draws = rng.uniform(1e-9, 1.0 - 1e-9, size=b - a)
                terms.append(query_objective(base_store, g, prep, scores_q, draws, cfg, null_probs))
            loss = nn.vmean(nn.concat([nn.reshape(t, (1,)) for t in terms], axis=0))
            grads = tape.gradients(loss)
            nn.optimizer_step(store, grads, state, lr=cfg.lr)
            total += float(loss.value)
            n_batches += 1
        report.epoch_losses.append(total / n_batches)
    # mean trained score over the training queries, for the prior-drift report
    tape = ConstTape(store)
    all_scores = []
    for lo in range(0, len(preps), cfg.batch):
        sc, _, _ = encode_and_score(tape, preps[lo:lo + cfg.batch])
        all_scores.append(sc.value)
    report.mean_score = float(np.concatenate(all_scores).mean())
    store.meta["train_report"] = {"epoch_losses": report.epoch_losses,
                                  "mean_score": report.mean_score,
                                  "n_queries": report.n_queries,
                                  "n_skipped": report.n_skipped}
    return store, report


# -- explanation ----------------------------------------------------------------

@dataclass
class ExplanationResult:
    query: dict
    empty: bool
    motifs: list            # {code, events, score}
    event_ranking: list     # (event id, score) best first
    retained: dict          # level -> sorted event ids
    comp_ids: list

    def to_json(self) -> str:
        payload = {"query": self.query, "empty": self.empty,
                   "computational_graph": [int(e) for e in self.comp_ids],
                   "motifs": self.motifs,
                   "event_ranking": [[int(e), float(s)] for e, s in self.event_ranking],
                   "retained": {f"{lv:.2f}": [int(e) for e in ids]
                                for lv, ids in sorted(self.retained.items())}}
        return json.dumps(payload, separators=(",", ":"), sort_keys=True)


def explain(g: TemporalGraph, base_store: ParameterStore, expl_store: ParameterStore,
            query: Event, levels=SPARSITY_LEVELS, cfg: ExplainerConfig | None = None,
            seed: int = 0) -> ExplanationResult:
    """Hard importance scores, event ranking, and retained sets per sparsity level.

    An event's score is the maximum score over the sampled motifs that
    contain it (zero if none do); ties rank more recent events first,
    then higher ids. Deterministic given the seed and parameters.
    """
    if cfg is None:
        cfg = ExplainerConfig(**expl_store.meta["config"])
    base = InternalPredictor(base_store)
    qdict = {"u": int(query.u), "v": int(query.v), "t": float(query.t), "id": int(query.id)}
    prep = prepare_query(g, base, query, cfg, seed)
    if prep is None:
        comp = computational_graph(g, query, cfg.hops, cfg.per_hop_cap)
        return ExplanationResult(query=qdict, empty=True, motifs=[], event_ranking=[],
                                 retained={lv: [] for lv in levels},
                                 comp_ids=[int(e) for e in comp.member_ids])
    scores, _, _ = encode_and_score(ConstTape(expl_store), [prep])
    sc = scores.value
    ev_score = {int(e): 0.0 for e in prep.comp_ids}
    for pos, m_idx in zip(prep.pair_cov, prep.pair_motif):
        eid = int(prep.covered_ids[pos])
        ev_score[eid] = max(ev_score[eid], float(sc[m_idx]))
    ranking = sorted(ev_score.items(), key=lambda kv: (-kv[1], -g.t[kv[0]], -kv[0]))
    retained = {}
    for lv in levels:
        size = retained_size(lv, len(prep.comp_ids))
        retained[lv] = sorted(e for e, _ in ranking[:size])
    motifs = [{"code": code, "events": [int(e) for e in inst.event_ids],
               "score": float(s), "truncated": inst.truncated}
              for inst, code, s in zip(prep.instances, prep.codes, sc)]
    return ExplanationResult(query=qdict, empty=False, motifs=motifs,
                             event_ranking=ranking, retained=retained,
                             comp_ids=[int(e) for e in prep.comp_ids])


def motif_embeddings(g: TemporalGraph, base_store: ParameterStore,
                     expl_store: ParameterStore, query: Event,
                     cfg: ExplainerConfig | None = None, seed: int = 0) -> np.ndarray:
    """Frozen-encoder embeddings of the motifs around one query (possibly empty)."""
    if cfg is None:
        cfg = ExplainerConfig(**expl_store.meta["config"])
    base = InternalPredictor(base_store)
    prep = prepare_query(g, base, query, cfg, seed)
    if prep is None:
        return np.zeros((0, expl_store.meta["h"]))
    _, emb, _ = encode_and_score(ConstTape(expl_store), [prep])
    return emb.value
