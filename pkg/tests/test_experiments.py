"""Scenario assembly: dataset wiring, training configuration, sweeps."""

import numpy as np
import pytest

from xlingcl.errors import ConfigError
from xlingcl.experiments import (
    ExperimentSpec,
    build_datasets,
    configure_training,
    make_spec,
    run_experiment,
    run_sweep,
)


def _fast(spec):
    from dataclasses import replace

    spec.train = replace(
        spec.train, steps=15, d_feat=256, d_emb=8, batch_size_ir=4,
        pairs_per_cl_batch=2, extras_per_cl_batch=2,
    )
    spec.n_ir_train = 16
    spec.parallel_pairs = 30
    spec.nonparallel_size = 20
    spec.eval_queries = 5
    spec.eval_corpus = 30
    return spec


class TestSpecs:
    def test_unknown_scenario_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentSpec(scenario="mystery")

    def test_partial_parallel_needs_uncovered(self):
        with pytest.raises(ConfigError):
            ExperimentSpec(scenario="partial-parallel")

    def test_presets_toggle_losses(self):
        assert make_spec("ir-only", 0).train.w_s == 0.0
        assert make_spec("ir-only", 0).train.w_l == 0.0
        assert make_spec("all-parallel", 0).train.w_s > 0.0
        assert make_spec("all-parallel", 0).train.w_l == 0.0
        pp = make_spec("partial-parallel", 0)
        assert pp.train.w_s > 0.0 and pp.train.w_l > 0.0
        assert pp.uncovered_langs == ["l5", "l6", "l7"]

    def test_train_overrides(self):
        spec = make_spec("all-parallel", 0, train={"lr": 0.5, "steps": 3})
        assert spec.train.lr == 0.5 and spec.train.steps == 3


class TestBuildDatasets:
    def test_ir_only_has_no_parallel_data(self):
        spec = _fast(make_spec("ir-only", 0))
        _, data, _, _ = build_datasets(spec)
        assert not data.parallel and not data.nonparallel
        assert len(data.ir_pairs) == spec.n_ir_train

    def test_all_parallel_covers_every_eval_lang(self):
        spec = _fast(make_spec("all-parallel", 0))
        world, data, _, eval_tasks = build_datasets(spec)
        covered = {b for _, b in data.parallel}
        assert covered == {f"l{i}" for i in range(1, 8)}
        assert set(eval_tasks) == covered

    def test_partial_parallel_leaves_langs_uncovered(self):
        spec = _fast(make_spec("partial-parallel", 0))
        world, data, _, eval_tasks = build_datasets(spec)
        covered = {b for _, b in data.parallel}
        assert covered == {"l1", "l2", "l3", "l4"}
        assert set(data.nonparallel) == {"l5", "l6", "l7"}
        assert set(eval_tasks) == {f"l{i}" for i in range(1, 8)}

    def test_eval_tasks_exclude_training_language(self):
        spec = _fast(make_spec("all-parallel", 0))
        _, _, _, eval_tasks = build_datasets(spec)
        assert "l0" not in eval_tasks

    def test_configure_training_wires_topology(self):
        spec = _fast(make_spec("partial-parallel", 0))
        world, _, _, _ = build_datasets(spec)
        cfg = configure_training(spec, world)
        assert cfg.langpair_topology == [("l0", l) for l in ("l1", "l2", "l3", "l4")]
        assert cfg.extras_langs == ["l5", "l6", "l7"]

    def test_ir_only_strips_cl_wiring(self):
        spec = _fast(make_spec("ir-only", 0))
        world, _, _, _ = build_datasets(spec)
        cfg = configure_training(spec, world)
        assert cfg.w_s == 0.0 and cfg.w_l == 0.0
        assert cfg.langpair_topology == [] and cfg.extras_langs == []


class TestRunExperiment:
    def test_report_shape_and_determinism(self):
        spec = _fast(make_spec("all-parallel", 1))
        _, r1 = run_experiment(spec)
        _, r2 = run_experiment(_fast(make_spec("all-parallel", 1)))
        assert r1 == r2
        assert set(r1["per_lang"]) == {f"l{i}" for i in range(1, 8)}
        assert 0.0 <= r1["overall"]["mrr"] <= 1.0
        assert r1["scenario"] == "all-parallel"


class TestSweep:
    def test_parallel_size_axis(self):
        base = _fast(make_spec("all-parallel", 0))
        rows = run_sweep("parallel-size", [0, 30], [0, 1], base)
        assert [r["value"] for r in rows] == [0, 30]
        for r in rows:
            assert r["n_seeds"] == 2
            assert r["ci95"] is not None

    def test_zero_parallel_degrades_to_ir_only(self):
        base = _fast(make_spec("all-parallel", 0))
        rows = run_sweep("parallel-size", [0], [0], base)
        # a 0-sized grid point must not crash: it reruns as plain IR training
        assert rows[0]["mean_mrr"] >= 0.0

    def test_unknown_axis_rejected(self):
        base = _fast(make_spec("all-parallel", 0))
        with pytest.raises(ConfigError):
            run_sweep("batch-size", [1], [0], base)

    def test_empty_grid_rejected(self):
        base = _fast(make_spec("all-parallel", 0))
        with pytest.raises(ConfigError):
            run_sweep("parallel-size", [], [0], base)
