"""Exhaustive dense retrieval and ranking metrics (MRR@k, Recall@k).

Search is an exact full scan: every query is scored against every passage
by cosine similarity between the query-tower and passage-tower embeddings.
Ties break by ascending passage id so reports are reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .core import sim_matrix
from .errors import DataError


@dataclass
class RetrievalTask:
    queries: list  # (query_id, text)
    corpus: list  # (passage_id, lang, text)
    qrels: dict  # query_id -> set of relevant passage ids

    def validate(self):
        pids = {pid for pid, _, _ in self.corpus}
        qids = {qid for qid, _ in self.queries}
        for qid, rel in self.qrels.items():
            if qid not in qids:
                raise DataError(f"qrels references unknown query {qid!r}")
            if not rel:
                raise DataError(f"query {qid!r} has no relevant passage")
            missing = rel - pids
            if missing:
                raise DataError(f"qrels references unknown passages {sorted(missing)}")


@dataclass
class RankedList:
    query_id: str
    passage_ids: list
    scores: list


def search(model, task: RetrievalTask, k: int):
    """Top-k passages per query by exact full scan."""
    if k < 1:
        raise DataError("k must be >= 1")
    if not task.corpus:
        raise DataError("empty corpus")
    q_emb = model.embed_texts([t for _, t in task.queries], "query")
    p_emb = model.embed_texts([t for _, _, t in task.corpus], "passage")
    S = sim_matrix(q_emb, p_emb)
    pids = [pid for pid, _, _ in task.corpus]
    pid_order = np.argsort(np.array(pids))  # secondary key: ascending passage id
    results = []
    for qi, (qid, _) in enumerate(task.queries):
        scores = S[qi]
        # stable sort by descending score, ties by ascending passage id
        order = np.lexsort((pid_order.argsort(), -scores))[:k]
        results.append(
            RankedList(qid, [pids[i] for i in order], [float(scores[i]) for i in order])
        )
    return results


def _require_qrels(ranked, qrels):
    for rl in ranked:
        if rl.query_id not in qrels:
            raise DataError(f"query {rl.query_id!r} missing from qrels")


def mrr_at_k(ranked, qrels, k: int) -> float:
    """Mean reciprocal rank of the first relevant passage within the top k."""
    if k < 1:
        raise DataError("k must be >= 1")
    _require_qrels(ranked, qrels)
    total = 0.0
    for rl in ranked:
        rel = qrels[rl.query_id]
        for rank, pid in enumerate(rl.passage_ids[:k], 1):
            if pid in rel:
                total += 1.0 / rank
                break
    return total / len(ranked) if ranked else 0.0


def recall_at_k(ranked, qrels, k: int) -> float:
    """Mean fraction of relevant passages found within the top k."""
    if k < 1:
        raise DataError("k must be >= 1")
    _require_qrels(ranked, qrels)
    total = 0.0
    for rl in ranked:
        rel = qrels[rl.query_id]
        total += len(rel.intersection(rl.passage_ids[:k])) / len(rel)
    return total / len(ranked) if ranked else 0.0


def write_run_file(path, ranked):
    """TREC-style run lines: query_id passage_id rank score."""
    with open(path, "w", encoding="utf-8") as fh:
        for rl in ranked:
            for rank, (pid, score) in enumerate(zip(rl.passage_ids, rl.scores), 1):
                fh.write(f"{rl.query_id} {pid} {rank} {score:.9f}\n")


def evaluate_task(model, task: RetrievalTask, k: int):
    """(mrr, recall, ranked lists) for one task at cutoff k."""
    task.validate()
    ranked = search(model, task, k)
    return mrr_at_k(ranked, task.qrels, k), recall_at_k(ranked, task.qrels, k), ranked
