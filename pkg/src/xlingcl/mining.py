"""Margin-based bitext mining: kNN neighborhoods, margin scoring,
threshold calibration, and F1 evaluation.

The margin score divides the cosine similarity of a candidate pair by the
average similarity of each member to its k nearest cross-lingual
neighbors, which suppresses hub sentences.  A threshold is tuned on a
training split by exhaustive sweep and applied unchanged to the test
split.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import sim_matrix
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class MiningConfig:
    k: int = 4
    candidate_depth: int = 16
    direction: str = "union"  # forward | backward | union

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.candidate_depth < self.k:
            raise ConfigError("candidate_depth must be >= k")
        if self.direction not in ("forward", "backward", "union"):
            raise ConfigError(f"bad direction {self.direction!r}")


@dataclass
class MiningResult:
    pairs: list  # (id_a, id_b, score) with degenerate scores as nan
    threshold: float
    predictions: set  # (id_a, id_b) with score > threshold
    precision: float
    recall: float
    f1: float
    degenerate_count: int = 0
    extra: dict = field(default_factory=dict)


def knn(embs_a, embs_b, k: int):
    """For each row of A its k nearest rows of B by cosine, ties by ascending id.

    Returns (indices nA x k, sims nA x k).
    """
    embs_b = np.asarray(embs_b)
    if embs_b.shape[0] < k:
        raise DataError(f"need at least {k} candidates, have {embs_b.shape[0]}")
    S = sim_matrix(embs_a, embs_b)
    nb = S.shape[1]
    ids = np.arange(nb)
    idx = np.empty((S.shape[0], k), dtype=np.int64)
    for i in range(S.shape[0]):
        idx[i] = np.lexsort((ids, -S[i]))[:k]
    sims = np.take_along_axis(S, idx, axis=1)
    return idx, sims


def margin_score(sim_uv: float, nn_sims_u, nn_sims_v):
    """Eq-style margin score: sim(u,v) over the mean neighborhood similarity.

    Returns (score, degenerate).  A non-positive denominator flags the pair
    as degenerate; the score is nan and the pair never enters predictions.
    """
    nn_sims_u = np.asarray(nn_sims_u, dtype=np.float64)
    nn_sims_v = np.asarray(nn_sims_v, dtype=np.float64)
    if nn_sims_u.size != nn_sims_v.size:
        raise DataError("neighborhoods must have equal size")
    k = nn_sims_u.size
    denom = nn_sims_u.sum() / (2 * k) + nn_sims_v.sum() / (2 * k)
    if denom <= 0.0:
        return float("nan"), True
    return float(sim_uv / denom), False


def mine_pairs(model, texts_a, texts_b, config: MiningConfig):
    """Score candidate translation pairs between two monolingual sides.

    Both sides are encoded with the passage tower (the tower that carries
    the contrastive alignment).  Candidates are each sentence's
    candidate_depth nearest cross-lingual neighbors, unioned over the
    configured directions and scored once.

    Returns (scored, degenerate_count) where scored maps (i, j) index pairs
    to (margin_score, cosine).
    """
    if not texts_a or not texts_b:
        raise DataError("both sides must be nonempty")
    ea = model.embed_texts(texts_a, "passage")
    eb = model.embed_texts(texts_b, "passage")
    depth_f = min(config.candidate_depth, len(texts_b))
    depth_b = min(config.candidate_depth, len(texts_a))
    if depth_f < config.k or depth_b < config.k:
        raise DataError("sides too small for the configured k")
    idx_f, sims_f = knn(ea, eb, depth_f)
    idx_b, sims_b = knn(eb, ea, depth_b)
    denom_a = sims_f[:, : config.k].mean(axis=1)
    denom_b = sims_b[:, : config.k].mean(axis=1)

    candidates = set()
    if config.direction in ("forward", "union"):
        for i in range(len(texts_a)):
            for j in idx_f[i]:
                candidates.add((i, int(j)))
    if config.direction in ("backward", "union"):
        for j in range(len(texts_b)):
            for i in idx_b[j]:
                candidates.add((int(i), j))

    S = sim_matrix(ea, eb)
    scored = {}
    degenerate = 0
    for i, j in sorted(candidates):
        denom = denom_a[i] / 2.0 + denom_b[j] / 2.0
        cos = float(S[i, j])
        if denom <= 0.0:
            scored[(i, j)] = (float("nan"), cos)
            degenerate += 1
        else:
            scored[(i, j)] = (cos / denom, cos)
    return scored, degenerate


def f1_eval(predictions, gold):
    """Set-based precision/recall/F1 over unordered id pairs."""
    predictions = set(predictions)
    gold = set(gold)
    tp = len(predictions & gold)
    precision = tp / len(predictions) if predictions else 0.0
    recall = tp / len(gold) if gold else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return precision, recall, f1


def tune_threshold(scores, labels):
    """Threshold maximizing F1 on a training split; ties favor the higher
    (more precise) threshold.  Predictions are pairs with score > threshold.

    scores: sequence of floats (nan = degenerate, never predicted)
    labels: sequence of bools (True = gold pair)
    Returns (threshold, f1_at_threshold).
    """
    pairs = [
        (float(s), bool(l))
        for s, l in zip(scores, labels)
        if not math.isnan(float(s))
    ]
    n_gold = sum(l for s, l in pairs) + sum(
        1 for s, l in zip(scores, labels) if math.isnan(float(s)) and l
    )
    if n_gold == 0:
        raise DataError("no gold pairs in the tuning split")
    pairs.sort(key=lambda p: -p[0])
    svals = [s for s, _ in pairs]

    best_f1 = 0.0
    best_thr = (svals[0] if svals else 0.0)  # predict nothing
    tp = 0
    for m in range(1, len(pairs) + 1):
        tp += pairs[m - 1][1]
        if m < len(pairs) and svals[m] == svals[m - 1]:
            continue  # cannot cut inside a tie group
        precision = tp / m
        recall = tp / n_gold
        f1 = 2 * precision * recall / (precision + recall) if tp else 0.0
        if f1 > best_f1:
            best_f1 = f1
            if m < len(pairs):
                best_thr = (svals[m - 1] + svals[m]) / 2.0
            else:
                best_thr = svals[-1] - 1.0
    return best_thr, best_f1


def apply_threshold(scored, threshold):
    """Pairs with (non-degenerate) score strictly above the threshold."""
    return {
        pair
        for pair, (score, _) in scored.items()
        if not math.isnan(score) and score > threshold
    }


def write_scored_pairs_tsv(path, rows):
    """rows: iterable of (id_a, id_b, score); scores to 9 decimal places."""
    with open(path, "w", encoding="utf-8") as fh:
        for ia, ib, score in rows:
            fh.write(f"{ia}\t{ib}\t{score:.9f}\n")
