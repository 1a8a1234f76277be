"""The three training objectives and their weighted combination.

Each loss returns its value (nats) together with exact hand-derived
gradients with respect to every input embedding row.  Rows a loss never
touches get an exactly-zero gradient row.

All losses score embeddings by cosine similarity.  The retrieval loss and
the language loss use raw similarities; the semantic loss divides them by a
temperature.  Self-similarity terms are excluded by index filtering, never
by -inf masking.
"""

from dataclasses import dataclass

import numpy as np

from .core import EmbeddingBatch, sim_matrix_with_backward
from .errors import ConfigError, DataError


@dataclass
class LossOutput:
    """Loss value plus gradient matrix aligned row-for-row with the input.

    For :func:`ir_loss` the gradient stacks the query rows (0..N-1) on top
    of the passage rows (N..2N-1).
    """

    value: float
    grads: np.ndarray


@dataclass(frozen=True)
class JointLossWeights:
    """Weights of the semantic and language terms in the joint objective."""

    w_s: float = 0.01
    w_l: float = 0.001

    def __post_init__(self):
        for name in ("w_s", "w_l"):
            x = getattr(self, name)
            if not np.isfinite(x) or x < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {x}")


class PairSet:
    """Index pairs (i, j) marking parallel sentences inside a batch."""

    def __init__(self, pairs):
        self.pairs = [(int(i), int(j)) for i, j in pairs]
        seen = set()
        for i, j in self.pairs:
            if i == j or i in seen or j in seen:
                raise DataError(f"pair indices must be distinct, offending pair ({i},{j})")
            seen.add(i)
            seen.add(j)
        self.indices = seen

    def __len__(self):
        return len(self.pairs)

    def validate_range(self, m: int):
        for i, j in self.pairs:
            if not (0 <= i < m and 0 <= j < m):
                raise DataError(f"pair index out of range for batch of {m}: ({i},{j})")


class MixedBatch:
    """A batch of parallel pairs plus non-parallel extra sentences."""

    def __init__(self, batch: EmbeddingBatch, parallel: PairSet, extras=()):
        self.batch = batch
        self.parallel = parallel
        self.extras = [int(e) for e in extras]
        parallel.validate_range(batch.size)
        for e in self.extras:
            if not (0 <= e < batch.size):
                raise DataError(f"extra index {e} out of range")
            if e in parallel.indices:
                raise DataError(f"extra index {e} is also a parallel member")
        if len(set(self.extras)) != len(self.extras):
            raise DataError("duplicate extra indices")


def ir_loss(queries: EmbeddingBatch, passages: EmbeddingBatch) -> LossOutput:
    """In-batch-negative retrieval loss.

    Row i of ``passages`` is the gold passage for query i; every other
    passage in the batch acts as a negative.  The value is the mean
    negative log-likelihood of the gold passage under a softmax over the
    cosine similarities of the query to all N passages (no temperature).
    """
    N = queries.size
    if passages.size != N:
        raise DataError(f"query/passage counts differ: {N} vs {passages.size}")
    if queries.dim != passages.dim:
        raise DataError("query/passage dimensions differ")
    S, backward = sim_matrix_with_backward(queries.rows, passages.rows)
    m = S.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(S - m).sum(axis=1))
    value = float(np.mean(lse - np.diag(S)))
    P = np.exp(S - lse[:, None])
    dS = (P - np.eye(N)) / N
    gq, gp = backward(dS)
    return LossOutput(value, np.vstack([gq, gp]))


def sema_cl_loss(batch: EmbeddingBatch, pairs: PairSet, tau: float) -> LossOutput:
    """Semantic contrastive loss over a batch of parallel sentence pairs.

    For each direction of each pair, the positive similarity (divided by
    tau) competes against the similarities of the anchor to all other
    2N-1 rows; the two log terms per pair are averaged with coefficient
    1/(2N).
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if len(pairs) == 0:
        raise DataError("sema_cl_loss needs at least one pair")
    M = batch.size
    pairs.validate_range(M)
    if len(pairs.indices) != M:
        raise DataError("pairs must partition all batch rows")
    positive = {}
    for i, j in pairs.pairs:
        positive[i] = j
        positive[j] = i

    S, backward = sim_matrix_with_backward(batch.rows, batch.rows)
    A = S / tau
    off = ~np.eye(M, dtype=bool)
    # row-wise logsumexp over k != anchor
    m = np.where(off, A, -np.inf).max(axis=1, keepdims=True)
    E = np.where(off, np.exp(A - m), 0.0)
    Z = E.sum(axis=1)
    lse = m[:, 0] + np.log(Z)

    pos = np.array([positive[a] for a in range(M)])
    value = float(np.mean(lse - A[np.arange(M), pos]))

    dS = E / Z[:, None] / (M * tau)
    dS[np.arange(M), pos] -= 1.0 / (M * tau)
    np.fill_diagonal(dS, 0.0)
    gx, gy = backward(dS)
    return LossOutput(value, gx + gy)


def lang_cl_loss(mixed: MixedBatch) -> LossOutput:
    """Language contrastive loss over a mixed parallel/non-parallel batch.

    For every parallel pair (i, j) and every third sentence k drawn from
    the rest of the batch, the pair of binary log-softmax terms is
    minimized (at 2*log 2 per combination) exactly when k is equidistant
    in cosine from both pair members.  The sum is normalized by the number
    of (pair, k) combinations, making the value a batch-shape-stable mean.
    """
    pairs = mixed.parallel
    if len(pairs) == 0:
        raise DataError("lang_cl_loss needs at least one parallel pair")
    members = sorted(pairs.indices) + sorted(mixed.extras)
    n_third = len(members) - 2
    if n_third < 1:
        raise DataError("lang_cl_loss needs at least one valid third sentence")
    count = len(pairs) * n_third

    batch = mixed.batch
    S, backward = sim_matrix_with_backward(batch.rows, batch.rows)
    member_arr = np.array(members)
    dS = np.zeros_like(S)
    total = 0.0
    for i, j in pairs.pairs:
        ks = member_arr[(member_arr != i) & (member_arr != j)]
        s1 = S[i, ks]
        s2 = S[j, ks]
        hi = np.maximum(s1, s2)
        lse2 = hi + np.log(np.exp(s1 - hi) + np.exp(s2 - hi))
        total += float(np.sum(2.0 * lse2 - s1 - s2))
        sig1 = np.exp(s1 - lse2)
        dS[i, ks] += (2.0 * sig1 - 1.0) / count
        dS[j, ks] += (1.0 - 2.0 * sig1) / count
    value = total / count
    gx, gy = backward(dS)
    return LossOutput(value, gx + gy)


def joint_loss(
    ir: LossOutput, sema: LossOutput, lang: LossOutput, w: JointLossWeights
) -> LossOutput:
    """Weighted combination of the three objectives.

    Values always combine; gradients combine only across terms with a
    nonzero weight (aligning the component gradients onto one parameter
    set is the caller's job, so shapes of active terms must agree).
    """
    value = ir.value + w.w_s * sema.value + w.w_l * lang.value
    grads = np.array(ir.grads, dtype=np.float64, copy=True)
    for comp, weight in ((sema, w.w_s), (lang, w.w_l)):
        if weight != 0.0:
            if comp.grads.shape != grads.shape:
                raise DataError(
                    f"gradient shape mismatch in joint loss: "
                    f"{comp.grads.shape} vs {grads.shape}"
                )
            grads += weight * comp.grads
    return LossOutput(value, grads)
