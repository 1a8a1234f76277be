"""Retrieval: exact search against a brute-force oracle, metric identities."""

import numpy as np
import pytest

from xlingcl.core import cosine_sim
from xlingcl.encoder import DualEncoderModel
from xlingcl.errors import DataError
from xlingcl.retrieval import (
    RankedList,
    RetrievalTask,
    mrr_at_k,
    recall_at_k,
    search,
    write_run_file,
)


def _random_task(rng, n_queries, n_passages, words=20):
    vocab = [f"w{i}" for i in range(words)]

    def sentence():
        return " ".join(rng.choice(vocab, size=rng.integers(3, 8)))

    queries = [(f"q{i}", sentence()) for i in range(n_queries)]
    corpus = [(f"p{i:03d}", "l0", sentence()) for i in range(n_passages)]
    qrels = {
        qid: {f"p{rng.integers(n_passages):03d}"} for qid, _ in queries
    }
    return RetrievalTask(queries, corpus, qrels)


def _oracle_rank(model, task, qid_index, k):
    """Per-query ranking recomputed with scalar cosine calls and a plain sort."""
    _, qtext = task.queries[qid_index]
    zq = model.embed_texts([qtext], "query")[0]
    scored = []
    for pid, _, text in task.corpus:
        zp = model.embed_texts([text], "passage")[0]
        scored.append((pid, cosine_sim(zq, zp)))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [pid for pid, _ in scored[:k]]


class TestSearch:
    def test_matches_brute_force_oracle(self):
        rng = np.random.Generator(np.random.PCG64(0))
        model = DualEncoderModel.initialize(1, d_feat=256, d_emb=8)
        for trial in range(5):
            task = _random_task(rng, 6, 30)
            ranked = search(model, task, k=10)
            for qi, rl in enumerate(ranked):
                assert rl.passage_ids == _oracle_rank(model, task, qi, 10)

    def test_scores_descending(self):
        rng = np.random.Generator(np.random.PCG64(1))
        model = DualEncoderModel.initialize(2, d_feat=256, d_emb=8)
        task = _random_task(rng, 4, 25)
        for rl in search(model, task, k=25):
            assert all(a >= b for a, b in zip(rl.scores, rl.scores[1:]))

    def test_ties_break_by_passage_id(self, monkeypatch):
        model = DualEncoderModel.initialize(3, d_feat=256, d_emb=8)
        corpus = [("p2", "l0", "aa"), ("p0", "l0", "bb"), ("p1", "l0", "cc")]
        task = RetrievalTask([("q0", "aa")], corpus, {"q0": {"p0"}})
        # force exact score ties to exercise the secondary sort key
        monkeypatch.setattr(
            "xlingcl.retrieval.sim_matrix", lambda x, y: np.full((1, 3), 0.5)
        )
        (rl,) = search(model, task, k=3)
        assert rl.passage_ids == ["p0", "p1", "p2"]

    def test_k_validated(self):
        model = DualEncoderModel.initialize(4, d_feat=256, d_emb=8)
        task = RetrievalTask([("q0", "aa")], [("p0", "l0", "bb")], {"q0": {"p0"}})
        with pytest.raises(DataError):
            search(model, task, k=0)

    def test_empty_corpus_rejected(self):
        model = DualEncoderModel.initialize(4, d_feat=256, d_emb=8)
        task = RetrievalTask([("q0", "aa")], [], {"q0": {"p0"}})
        with pytest.raises(DataError):
            search(model, task, k=1)


def _mrr_oracle(ranked, qrels, k):
    vals = []
    for rl in ranked:
        rr = 0.0
        for rank, pid in enumerate(rl.passage_ids[:k], 1):
            if pid in qrels[rl.query_id]:
                rr = 1.0 / rank
                break
        vals.append(rr)
    return sum(vals) / len(vals)


class TestMetrics:
    def _ranked(self):
        return [
            RankedList("q0", ["p1", "p0", "p2"], [0.9, 0.8, 0.7]),
            RankedList("q1", ["p3", "p4", "p5"], [0.9, 0.8, 0.7]),
            RankedList("q2", ["p6", "p7", "p8"], [0.9, 0.8, 0.7]),
        ]

    def test_mrr_hand_computed(self):
        qrels = {"q0": {"p0"}, "q1": {"p3"}, "q2": {"p9"}}
        # ranks: 2, 1, miss -> (1/2 + 1 + 0) / 3
        assert mrr_at_k(self._ranked(), qrels, 3) == pytest.approx(0.5)

    def test_mrr_cutoff(self):
        qrels = {"q0": {"p2"}, "q1": {"p3"}, "q2": {"p9"}}
        # p2 sits at rank 3, outside k=2
        assert mrr_at_k(self._ranked(), qrels, 2) == pytest.approx(1.0 / 3.0)

    def test_recall_hand_computed(self):
        qrels = {"q0": {"p0", "p2"}, "q1": {"p3"}, "q2": {"p9"}}
        # q0 finds both of 2, q1 finds 1 of 1, q2 finds 0 of 1
        assert recall_at_k(self._ranked(), qrels, 3) == pytest.approx(2.0 / 3.0)

    def test_mrr_matches_oracle_on_random_instances(self):
        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(50):
            n_p = 12
            ranked = []
            qrels = {}
            for qi in range(5):
                order = rng.permutation(n_p)
                ranked.append(
                    RankedList(
                        f"q{qi}",
                        [f"p{j}" for j in order],
                        list(np.linspace(1, 0, n_p)),
                    )
                )
                qrels[f"q{qi}"] = {f"p{j}" for j in rng.choice(n_p, 2, replace=False)}
            k = int(rng.integers(1, n_p + 1))
            assert mrr_at_k(ranked, qrels, k) == pytest.approx(
                _mrr_oracle(ranked, qrels, k), abs=1e-12
            )

    def test_missing_qrels_rejected(self):
        with pytest.raises(DataError):
            mrr_at_k(self._ranked(), {"q0": {"p0"}}, 3)

    def test_perfect_ranking_scores_one(self):
        qrels = {"q0": {"p1"}, "q1": {"p3"}, "q2": {"p6"}}
        assert mrr_at_k(self._ranked(), qrels, 3) == pytest.approx(1.0)
        assert recall_at_k(self._ranked(), qrels, 3) == pytest.approx(1.0)


class TestTaskValidation:
    def test_unknown_query_in_qrels(self):
        task = RetrievalTask([("q0", "x")], [("p0", "l0", "y")], {"q9": {"p0"}})
        with pytest.raises(DataError):
            task.validate()

    def test_unknown_passage_in_qrels(self):
        task = RetrievalTask([("q0", "x")], [("p0", "l0", "y")], {"q0": {"p9"}})
        with pytest.raises(DataError):
            task.validate()

    def test_empty_relevance_set(self):
        task = RetrievalTask([("q0", "x")], [("p0", "l0", "y")], {"q0": set()})
        with pytest.raises(DataError):
            task.validate()


class TestRunFile:
    def test_format(self, tmp_path):
        ranked = [RankedList("q0", ["p1", "p0"], [0.25, 0.125])]
        p = tmp_path / "run.trec"
        write_run_file(p, ranked)
        lines = p.read_text().splitlines()
        assert lines == ["q0 p1 1 0.250000000", "q0 p0 2 0.125000000"]
