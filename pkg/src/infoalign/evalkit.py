"""Downstream evaluation: frozen-embedding probing and zero-shot matching.

AUC follows the pairwise definition (probability a random positive outranks a
random negative, ties counting one half), computed via rank statistics. The
matcher scores each morphology candidate by the decoder log-likelihood of the
candidate vector given the query molecule's mean embedding; with a single
relevant item per query, NDCG@k is 1/log2(1+rank).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import diffcore as dc
from .ctxgraph import NodeKind
from .errors import (
    DimensionMismatchError,
    LengthMismatchError,
    SingleClassError,
    TooFewError,
)
from .model import DecoderRegistry, gin_encode
from .molparse import MolecularGraph

CLASSIFICATION = "classification"
REGRESSION = "regression"


def auc(scores, labels) -> float:
    """Rank-based AUC; raises SingleClassError unless both classes appear."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatchError(f"{scores.shape} scores vs {labels.shape} labels")
    pos = labels == 1
    npos = int(pos.sum())
    nneg = len(labels) - npos
    if npos == 0 or nneg == 0:
        raise SingleClassError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks give ties 1/2 credit
    return float((ranks[pos].sum() - npos * (npos + 1) / 2) / (npos * nneg))


def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise LengthMismatchError(f"{pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def split_random(n_items: int, ratios=(0.6, 0.15, 0.25), seed: int = 0):
    """Disjoint, exhaustive train/valid/test index arrays, deterministic per seed."""
    if n_items < 3:
        raise TooFewError(f"need >= 3 items to split, got {n_items}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    rng = np.random.Generator(np.random.Philox(key=[seed & ((1 << 64) - 1), 0]))
    perm = rng.permutation(n_items)
    n_train = int(round(ratios[0] * n_items))
    n_valid = int(round(ratios[1] * n_items))
    n_train = max(1, min(n_train, n_items - 2))
    n_valid = max(1, min(n_valid, n_items - n_train - 1))
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_valid]),
        np.sort(perm[n_train + n_valid :]),
    )


@dataclass
class LabeledSet:
    embeddings: np.ndarray           # (N, D)
    labels: np.ndarray               # (N, T)
    task_types: List[str]            # per task, "classification" or "regression"
    mask: Optional[np.ndarray] = None  # (N, T) availability; default all observed

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=np.float64))
        if self.labels.shape[0] != self.embeddings.shape[0]:
            self.labels = self.labels.T
        if self.mask is None:
            self.mask = np.ones(self.labels.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
        if self.labels.shape != self.mask.shape:
            raise LengthMismatchError("labels and mask shapes differ")
        if len(self.task_types) != self.labels.shape[1]:
            raise LengthMismatchError("task_types length != task count")


@dataclass
class ProbeConfig:
    hidden: int = 0        # 0 = linear probe
    epochs: int = 200
    lr: float = 0.05
    seed: int = 0


@dataclass
class ProbeHead:
    store: dc.ParamStore
    task_types: List[str]
    input_dim: int

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        bound = self.store.bind()
        out = dc.mlp_forward(bound, "probe", dc.constant(np.asarray(embeddings, dtype=np.float64)))
        pred = out.data.copy()
        for t, kind in enumerate(self.task_types):
            if kind == CLASSIFICATION:
                pred[:, t] = 1.0 / (1.0 + np.exp(-np.clip(pred[:, t], -36.7, 36.7)))
        return pred

    def save(self, path):
        dc.save_params(path, self.store, {
            "task_types": self.task_types, "input_dim": self.input_dim,
        })

    @classmethod
    def load(cls, path) -> "ProbeHead":
        store, manifest = dc.load_params(path)
        return cls(store, manifest["task_types"], manifest["input_dim"])


def probe_train(train: LabeledSet, cfg: ProbeConfig = ProbeConfig()) -> ProbeHead:
    """Fit a small MLP head on frozen embeddings (full-batch Adam).

    Classification tasks use BCE on logits, regression squared error; masked
    entries contribute nothing.
    """
    n, d = train.embeddings.shape
    t = train.labels.shape[1]
    store = dc.ParamStore(seed=cfg.seed)
    sizes = [d, t] if cfg.hidden == 0 else [d, cfg.hidden, t]
    dc.init_mlp(store, "probe", sizes)

    x = train.embeddings
    y = np.where(train.mask, train.labels, 0.0)
    m = train.mask.astype(np.float64)
    denom = max(m.sum(), 1.0)
    is_cls = np.array([k == CLASSIFICATION for k in train.task_types], dtype=np.float64)

    for _ in range(cfg.epochs):
        bound = store.bind()
        out = dc.mlp_forward(bound, "probe", dc.constant(x))
        bce = dc.bce_with_logits(out, y)
        diff = dc.add(out, dc.constant(-y))
        sq = dc.mul(dc.mul(diff, diff), dc.constant(0.5))
        per_entry = dc.add(
            dc.mul(bce, dc.constant(is_cls[None, :])),
            dc.mul(sq, dc.constant(1.0 - is_cls[None, :])),
        )
        loss = dc.mul(dc.tsum(dc.mul(per_entry, dc.constant(m))), dc.constant(1.0 / denom))
        loss.backward()
        store.accumulate(bound)
        dc.adam_step(store, lr=cfg.lr)
    return ProbeHead(store, list(train.task_types), d)


def probe_eval(head: ProbeHead, test: LabeledSet,
               thresholds=(0.80, 0.85, 0.90)) -> Dict:
    """Per-task AUC/MAE plus threshold aggregates.

    Classification tasks with a single observed class are skipped with a
    warning and excluded from the aggregates.
    """
    pred = head.predict(test.embeddings)
    per_task = []
    aucs, maes = [], []
    for t, kind in enumerate(test.task_types):
        obs = test.mask[:, t]
        entry: Dict = {"task": t, "type": kind, "n": int(obs.sum())}
        if kind == CLASSIFICATION:
            try:
                entry["auc"] = auc(pred[obs, t], test.labels[obs, t])
                aucs.append(entry["auc"])
            except SingleClassError:
                warnings.warn(f"task {t}: single class in test set, skipped")
                entry["auc"] = None
        else:
            entry["mae"] = mae(pred[obs, t], test.labels[obs, t])
            maes.append(entry["mae"])
        per_task.append(entry)
    aggregates: Dict = {}
    if aucs:
        aggregates["mean_auc"] = float(np.mean(aucs))
        for thr in thresholds:
            aggregates[f"frac_auc_above_{thr:.2f}"] = float(
                np.mean([a > thr for a in aucs]))
    if maes:
        aggregates["mean_mae"] = float(np.mean(maes))
    return {"per_task": per_task, "aggregates": aggregates}


# --- ranking metrics -----------------------------------------------------------

def ndcg_at_k(rank: int, k: int) -> float:
    """Single-relevant-item NDCG (ideal DCG is 1)."""
    return 1.0 / np.log2(1.0 + rank) if rank <= k else 0.0


def hit_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


@dataclass
class RankingResult:
    query_index: int
    ranked_ids: List[str]
    scores: List[float]
    true_rank: int  # 1-based


def match_zero_shot(store: dc.ParamStore, registry: DecoderRegistry,
                    queries: Sequence[MolecularGraph],
                    candidates: np.ndarray,
                    candidate_ids: Sequence[str],
                    true_ids: Sequence[str],
                    k_list: Sequence[int] = (1, 10)) -> Dict:
    """Rank morphology candidates for each query molecule.

    Each candidate is scored by the morphology decoder's Bernoulli
    log-likelihood of the candidate vector given the query's mean embedding
    (no sampling, so retrieval is deterministic); ties break by candidate id.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2:
        raise DimensionMismatchError("candidates must be a 2-D matrix")
    if len(candidate_ids) != candidates.shape[0]:
        raise DimensionMismatchError("candidate_ids length != candidate rows")
    dim = candidates.shape[1]
    prefix = registry.prefix(NodeKind.CELL_MORPHOLOGY, dim)  # NoDecoderError if absent

    bound = store.bind()
    id_order = np.argsort(np.asarray(candidate_ids, dtype=object))
    results: List[RankingResult] = []
    ndcg_sums = {k: 0.0 for k in k_list}
    hit_sums = {k: 0.0 for k in k_list}
    for qi, mol in enumerate(queries):
        mu = gin_encode(mol, bound).mu
        logits = dc.mlp_forward(bound, prefix, mu).data[0]
        # log-likelihood = -(sum softplus(l) - l . y); the first term is per-query constant
        scores = candidates @ logits - np.logaddexp(0.0, logits).sum()
        # stable sort: candidate-id order first, then descending score
        order = id_order[np.argsort(-scores[id_order], kind="stable")]
        ranked_ids = [candidate_ids[i] for i in order]
        true_rank = ranked_ids.index(true_ids[qi]) + 1
        results.append(RankingResult(qi, ranked_ids, [float(scores[i]) for i in order], true_rank))
        for k in k_list:
            ndcg_sums[k] += ndcg_at_k(true_rank, k)
            hit_sums[k] += hit_at_k(true_rank, k)
    nq = max(len(queries), 1)
    return {
        "results": results,
        "ndcg": {k: ndcg_sums[k] / nq for k in k_list},
        "hit": {k: hit_sums[k] / nq for k in k_list},
    }
