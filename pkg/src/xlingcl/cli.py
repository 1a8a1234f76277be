"""Command-line entry point.

Subcommands: gen-data, train, eval-ir, mine-bitext, gradcheck, sweep.
Every command is deterministic given identical inputs and seed; all
randomness flows from one root seed.  Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from .encoder import DualEncoderModel
from .errors import ConfigError, DataError, NumericError
from .experiments import (
    ExperimentSpec,
    build_datasets,
    configure_training,
    evaluate_model,
    make_spec,
    run_sweep,
)
from .gradcheck import run_gradcheck
from .mining import (
    MiningConfig,
    apply_threshold,
    f1_eval,
    mine_pairs,
    tune_threshold,
    write_scored_pairs_tsv,
)
from .retrieval import RetrievalTask, evaluate_task, write_run_file
from .synthgen import (
    build_world,
    file_manifest,
    make_bitext_task,
    read_bitext_gold_tsv,
    read_corpus_jsonl,
    read_parallel_tsv,
    read_qrels_tsv,
    read_queries_jsonl,
    write_bitext_gold_tsv,
    write_corpus_jsonl,
    write_parallel_tsv,
    write_qrels_tsv,
    write_queries_jsonl,
)
from .trainer import TrainData, parse_config, train_loop


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_spec(args) -> ExperimentSpec:
    seed = args.seed if args.seed is not None else 0
    spec = make_spec(args.scenario, seed)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
        cfg = replace(cfg, seed=seed)
        spec.train = cfg
    if getattr(args, "steps", None) is not None:
        spec.train = replace(spec.train, steps=args.steps)
    return spec


# -- gen-data ----------------------------------------------------------------


def _task_paths(out, prefix, lang):
    return (
        os.path.join(out, f"{prefix}_queries_{lang}.jsonl"),
        os.path.join(out, f"{prefix}_corpus_{lang}.jsonl"),
        os.path.join(out, f"{prefix}_qrels_{lang}.tsv"),
    )


def _write_task(out, prefix, lang, task):
    qp, cp, rp = _task_paths(out, prefix, lang)
    write_queries_jsonl(qp, task.queries, lang)
    write_corpus_jsonl(cp, task.corpus)
    write_qrels_tsv(rp, task.qrels)
    return [qp, cp, rp]


def _read_task(out, prefix, lang) -> RetrievalTask:
    qp, cp, rp = _task_paths(out, prefix, lang)
    queries, _ = read_queries_jsonl(qp)
    return RetrievalTask(queries, read_corpus_jsonl(cp), read_qrels_tsv(rp))


def cmd_gen_data(args) -> int:
    spec = _load_spec(args)
    out = args.out
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out!r} is not writable")
    world, data, train_task, eval_tasks = build_datasets(spec)
    files = []

    files += _write_task(out, "train", spec.train_lang, train_task)
    for (a, b), pairs in sorted(data.parallel.items()):
        p = os.path.join(out, f"parallel_{a}-{b}.tsv")
        write_parallel_tsv(p, a, b, pairs)
        files.append(p)
    for lang, sents in sorted(data.nonparallel.items()):
        p = os.path.join(out, f"nonparallel_{lang}.jsonl")
        write_corpus_jsonl(p, [(f"n{i:05d}", lang, s) for i, s in enumerate(sents)])
        files.append(p)
    for lang, task in sorted(eval_tasks.items()):
        files += _write_task(out, "eval", lang, task)

    # bitext task between the training language and the first eval language,
    # split into a threshold-tuning half and a held-out test half
    bt_lang = spec.resolved_eval_langs(world)[0]
    for split in ("train", "test"):
        bt = make_bitext_task(
            world, spec.train_lang, bt_lang, args.bitext_gold, args.bitext_noise,
            rng=world.rng("bitext", bt_lang, split),
        )
        pa = os.path.join(out, f"bitext_{split}_a.jsonl")
        pb = os.path.join(out, f"bitext_{split}_b.jsonl")
        pg = os.path.join(out, f"bitext_{split}_gold.tsv")
        write_corpus_jsonl(pa, [(i, bt.lang_a, t) for i, t in bt.side_a])
        write_corpus_jsonl(pb, [(i, bt.lang_b, t) for i, t in bt.side_b])
        write_bitext_gold_tsv(pg, bt.gold)
        files += [pa, pb, pg]

    manifest = file_manifest(files, spec.train.seed)
    manifest.update(
        {
            "scenario": spec.scenario,
            "train_lang": spec.train_lang,
            "eval_langs": spec.resolved_eval_langs(world),
            "covered_langs": spec.covered_langs(world),
            "uncovered_langs": list(spec.uncovered_langs),
            "bitext_lang": bt_lang,
        }
    )
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(files) + 1} files to {out}")
    return 0


def _read_manifest(data_dir):
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no manifest.json in {data_dir!r}; run gen-data first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_train_data(data_dir, manifest) -> TrainData:
    train_lang = manifest["train_lang"]
    task = _read_task(data_dir, "train", train_lang)
    text_of = {pid: t for pid, _, t in task.corpus}
    data = TrainData(
        ir_pairs=[
            (qt, text_of[sorted(task.qrels[qid])[0]]) for qid, qt in task.queries
        ]
    )
    for lang in manifest["covered_langs"]:
        p = os.path.join(data_dir, f"parallel_{train_lang}-{lang}.tsv")
        a, b, pairs = read_parallel_tsv(p)
        data.parallel[(a, b)] = pairs
    for lang in manifest["uncovered_langs"]:
        p = os.path.join(data_dir, f"nonparallel_{lang}.jsonl")
        data.nonparallel[lang] = [t for _, _, t in read_corpus_jsonl(p)]
    return data


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    spec = _load_spec(args)
    manifest = _read_manifest(args.data)
    if manifest["scenario"] != spec.scenario:
        raise ConfigError(
            f"data was generated for scenario {manifest['scenario']!r}, "
            f"requested {spec.scenario!r}"
        )
    data = _load_train_data(args.data, manifest)
    cfg = replace(
        spec.train,
        langpair_topology=[
            (manifest["train_lang"], l) for l in manifest["covered_langs"]
        ],
        extras_langs=manifest["uncovered_langs"],
    )
    if spec.scenario == "ir-only":
        cfg = replace(cfg, w_s=0.0, w_l=0.0, langpair_topology=[], extras_langs=[])
    os.makedirs(args.out, exist_ok=True)
    _, trace = train_loop(data, cfg, out_dir=args.out)
    print(
        f"trained {cfg.steps} steps; final joint loss "
        f"{trace[-1]['loss_joint']:.6f}" if trace else "trained 0 steps"
    )
    return 0


# -- eval-ir -----------------------------------------------------------------


def cmd_eval_ir(args) -> int:
    manifest = _read_manifest(args.data)
    model = DualEncoderModel.load(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    per_lang = {}
    for lang in manifest["eval_langs"]:
        task = _read_task(args.data, "eval", lang)
        mrr, recall, ranked = evaluate_task(model, task, args.k)
        per_lang[lang] = {"mrr": mrr, "recall": recall}
        write_run_file(os.path.join(args.out, f"run_{lang}.trec"), ranked)
    overall = {
        "mrr": sum(v["mrr"] for v in per_lang.values()) / len(per_lang),
        "recall": sum(v["recall"] for v in per_lang.values()) / len(per_lang),
    }
    report = {"k": args.k, "per_lang": per_lang, "overall": overall}
    _write_json(os.path.join(args.out, "eval_report.json"), report)
    print(json.dumps(overall, sort_keys=True))
    return 0


# -- mine-bitext -------------------------------------------------------------


def _load_bitext_split(data_dir, split):
    side_a = read_corpus_jsonl(os.path.join(data_dir, f"bitext_{split}_a.jsonl"))
    side_b = read_corpus_jsonl(os.path.join(data_dir, f"bitext_{split}_b.jsonl"))
    gold = read_bitext_gold_tsv(os.path.join(data_dir, f"bitext_{split}_gold.tsv"))
    return side_a, side_b, gold


def _mine_split(model, side_a, side_b, gold, config):
    ids_a = [i for i, _, _ in side_a]
    ids_b = [i for i, _, _ in side_b]
    texts_a = [t for _, _, t in side_a]
    texts_b = [t for _, _, t in side_b]
    scored, degenerate = mine_pairs(model, texts_a, texts_b, config)
    margin = {(ids_a[i], ids_b[j]): s for (i, j), (s, _) in scored.items()}
    cosine = {(ids_a[i], ids_b[j]): c for (i, j), (_, c) in scored.items()}
    labels = {pair: pair in gold for pair in margin}
    return margin, cosine, labels, degenerate


def cmd_mine_bitext(args) -> int:
    manifest = _read_manifest(args.data)
    model = DualEncoderModel.load(args.ckpt)
    config = MiningConfig(k=args.mine_k, candidate_depth=args.depth)
    os.makedirs(args.out, exist_ok=True)

    report = {"k": config.k, "candidate_depth": config.candidate_depth,
              "lang_pair": [manifest["train_lang"], manifest["bitext_lang"]]}
    thresholds = {}
    for score_kind in ("margin", "cosine"):
        split_stats = {}
        for split in ("train", "test"):
            side_a, side_b, gold = _load_bitext_split(args.data, split)
            margin, cosine, labels, degenerate = _mine_split(
                model, side_a, side_b, gold, config
            )
            scores = margin if score_kind == "margin" else cosine
            pairs = sorted(scores)
            if split == "train":
                thr, _ = tune_threshold(
                    [scores[p] for p in pairs], [labels[p] for p in pairs]
                )
                thresholds[score_kind] = thr
            thr = thresholds[score_kind]
            preds = apply_threshold(
                {p: (scores[p], scores[p]) for p in pairs}, thr
            )
            precision, recall, f1 = f1_eval(preds, gold)
            split_stats[split] = {
                "threshold": thr,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "degenerate_count": degenerate,
                "n_candidates": len(pairs),
            }
            if score_kind == "margin":
                write_scored_pairs_tsv(
                    os.path.join(args.out, f"scored_{split}.tsv"),
                    [(p[0], p[1], scores[p]) for p in pairs],
                )
        report[score_kind] = split_stats

    # headline fields mirror the margin-score test split
    m = report["margin"]["test"]
    report.update(
        {
            "threshold": report["margin"]["train"]["threshold"],
            "precision": m["precision"],
            "recall": m["recall"],
            "f1": m["f1"],
            "degenerate_count": m["degenerate_count"],
            "cosine_f1": report["cosine"]["test"]["f1"],
        }
    )
    _write_json(os.path.join(args.out, "mining_report.json"), report)
    print(json.dumps({"f1": report["f1"], "cosine_f1": report["cosine_f1"]}))
    return 0


# -- gradcheck ---------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(
        trials=args.trials, tolerance=args.tolerance, seed=args.seed or 0,
        composite_trials=args.composite_trials,
    )
    for name, entry in report["losses"].items():
        status = "PASS" if entry["pass"] else "FAIL"
        print(f"{status} {name}: worst relative error {entry['worst_rel_err']:.3e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "gradcheck_report.json"), report)
    if not report["pass"]:
        raise NumericError("gradient check failed")
    return 0


# -- sweep -------------------------------------------------------------------


def cmd_sweep(args) -> int:
    grid = [g for g in args.grid.split(",") if g]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if not grid:
        raise ConfigError("sweep grid is empty")
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    base = make_spec(args.scenario, seeds[0])
    if args.steps is not None:
        base.train = replace(base.train, steps=args.steps)
    rows = run_sweep(args.axis, grid, seeds, base)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "n_seeds", "mean_mrr", "ci95"])
        for r in rows:
            writer.writerow(
                [r["axis"], r["value"], r["n_seeds"], "%.6f" % r["mean_mrr"],
                 "" if r["ci95"] is None else "%.6f" % r["ci95"]]
            )
    print(f"wrote {path}")
    return 0


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xlingcl",
        description="Desk-scale cross-lingual contrastive retrieval lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="key=value training config file")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--scenario", default="all-parallel",
                       choices=("all-parallel", "partial-parallel", "ir-only"))

    p = sub.add_parser("gen-data", help="generate a synthetic world's datasets")
    common(p)
    p.add_argument("--bitext-gold", type=int, default=25)
    p.add_argument("--bitext-noise", type=int, default=975)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train on a generated dataset")
    common(p)
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval-ir", help="evaluate a checkpoint on the eval tasks")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(fn=cmd_eval_ir)

    p = sub.add_parser("mine-bitext", help="margin-based bitext mining")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mine-k", type=int, default=4)
    p.add_argument("--depth", type=int, default=16)
    p.set_defaults(fn=cmd_mine_bitext)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--composite-trials", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="ablation sweep over one axis")
    common(p)
    p.add_argument("--axis", required=True,
                   choices=("parallel-size", "nonparallel-size", "langpair-topology"))
    p.add_argument("--grid", required=True, help="comma-separated grid values")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
