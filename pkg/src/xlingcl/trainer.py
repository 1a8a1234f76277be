"""Deterministic joint-objective training loop.

One step samples up to three batches (retrieval pairs, parallel pairs,
mixed parallel+non-parallel), computes all gradient contributions against
the same pre-step parameters, and applies one AdamW update per tower.  The
contrastive losses route their gradients to the passage tower only; the
retrieval loss trains both towers.  A tower that received no gradient in a
step is left bit-identical (no update, no moment decay).

All randomness flows from a single seed, split into independent streams per
sampler, so disabling one loss never perturbs the batches of another.
"""

import csv
import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from .core import EmbeddingBatch
from .encoder import (
    FORMAT_VERSION,
    OPTSTATE_MAGIC,
    DualEncoderModel,
    accumulate_weight_grad,
)
from .errors import ConfigError, DataError, NumericError
from .losses import JointLossWeights, MixedBatch, PairSet, ir_loss, lang_cl_loss, sema_cl_loss

TRACE_FIELDS = ("step", "loss_ir", "loss_sema", "loss_lang", "loss_joint")


@dataclass
class TrainConfig:
    # batch shapes
    batch_size_ir: int = 16
    pairs_per_cl_batch: int = 8
    extras_per_cl_batch: int = 8
    # optimizer
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    # objective
    w_s: float = 0.01
    w_l: float = 0.001
    tau: float = 0.1
    ir_enabled: bool = True
    # schedule
    steps: int = 1000
    seed: int = 0
    checkpoint_interval: int = 0
    # model
    d_feat: int = 4096
    d_emb: int = 32
    ngram: int = 3
    # data routing
    langpair_topology: list = field(default_factory=list)
    extras_langs: list = field(default_factory=list)
    # experimental: replicate the unstable both-towers routing
    cl_to_both_towers: bool = False

    def weights(self) -> JointLossWeights:
        return JointLossWeights(self.w_s, self.w_l)

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.ir_enabled and self.batch_size_ir < 1:
            raise ConfigError("batch_size_ir must be >= 1 when the IR loss is enabled")
        if (self.w_s > 0 or self.w_l > 0) and self.pairs_per_cl_batch < 1:
            raise ConfigError("pairs_per_cl_batch must be >= 1 when a CL loss is enabled")
        if self.extras_per_cl_batch < 0:
            raise ConfigError("extras_per_cl_batch must be >= 0")
        self.weights()


def paper_fidelity_config() -> TrainConfig:
    """Hyperparameters as used for the full-scale experiments (documentation
    preset; training a real backbone is out of scope here)."""
    return TrainConfig(batch_size_ir=48, lr=1e-5, w_s=0.01, w_l=0.001)


def desk_scale_config() -> TrainConfig:
    """Minutes-scale preset for the toy linear encoder."""
    return TrainConfig()


# -- flat key=value config files --------------------------------------------

_LIST_FIELDS = {"langpair_topology", "extras_langs"}


def parse_config(text: str) -> TrainConfig:
    """Parse the flat key=value config format.  Unknown keys are errors."""
    cfg = TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key == "langpair_topology":
            pairs = []
            if val:
                for item in val.split(","):
                    a, sep, b = item.strip().partition("-")
                    if not sep or not a or not b:
                        raise ConfigError(f"line {lineno}: bad language pair {item!r}")
                    pairs.append((a, b))
            updates[key] = pairs
        elif key == "extras_langs":
            updates[key] = [v.strip() for v in val.split(",") if v.strip()]
        else:
            current = getattr(cfg, key)
            if isinstance(current, bool):
                if val.lower() not in ("true", "false"):
                    raise ConfigError(f"line {lineno}: bool key {key} needs true/false")
                updates[key] = val.lower() == "true"
            elif isinstance(current, int):
                updates[key] = int(val)
            else:
                updates[key] = float(val)
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def render_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        val = getattr(cfg, f.name)
        if f.name == "langpair_topology":
            val = ",".join(f"{a}-{b}" for a, b in val)
        elif f.name == "extras_langs":
            val = ",".join(val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


# -- optimizer ---------------------------------------------------------------


class AdamW:
    """AdamW state (first/second moments, step count) for one tower."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, w: np.ndarray, g: np.ndarray, cfg: TrainConfig):
        self.t += 1
        kernels.adamw_update(
            w, g, self.m, self.v, self.t,
            cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay,
        )


def save_optimizer_state(path, model: DualEncoderModel, opt_q: AdamW, opt_p: AdamW):
    header = struct.pack(
        "<4sIIIIQ",
        OPTSTATE_MAGIC,
        FORMAT_VERSION,
        model.extractor.d_feat,
        model.query_encoder.d_emb,
        model.extractor.n,
        model.extractor.hash_seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for opt in (opt_q, opt_p):
            fh.write(struct.pack("<Q", opt.t))
            fh.write(np.ascontiguousarray(opt.m, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(opt.v, dtype="<f8").tobytes())


def load_optimizer_state(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    hs = struct.calcsize("<4sIIIIQ")
    magic, version, d_feat, d_emb, _, _ = struct.unpack("<4sIIIIQ", raw[:hs])
    if magic != OPTSTATE_MAGIC:
        raise DataError(f"bad optimizer-state magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported optimizer-state version {version}")
    count = d_emb * d_feat
    offset = hs
    opts = []
    for _ in range(2):
        (t,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        opt = AdamW((d_emb, d_feat))
        opt.t = t
        opt.m = np.frombuffer(raw, "<f8", count, offset).reshape(d_emb, d_feat).copy()
        offset += count * 8
        opt.v = np.frombuffer(raw, "<f8", count, offset).reshape(d_emb, d_feat).copy()
        offset += count * 8
        opts.append(opt)
    return opts[0], opts[1]


# -- datasets and samplers ---------------------------------------------------


@dataclass
class TrainData:
    """Training streams: retrieval pairs, parallel corpora, monolingual pools."""

    ir_pairs: list = field(default_factory=list)  # (query_text, passage_text)
    parallel: dict = field(default_factory=dict)  # (lang_a, lang_b) -> [(text_a, text_b)]
    nonparallel: dict = field(default_factory=dict)  # lang -> [text]


def sample_ir_batch(ir_pairs, batch_size: int, rng: np.random.Generator):
    """Draw batch_size query-passage pairs without replacement."""
    if len(ir_pairs) < batch_size:
        raise DataError(
            f"IR dataset has {len(ir_pairs)} pairs, need {batch_size}"
        )
    idx = rng.choice(len(ir_pairs), size=batch_size, replace=False)
    queries = [ir_pairs[i][0] for i in idx]
    passages = [ir_pairs[i][1] for i in idx]
    return queries, passages


def _live_directions(parallel, topology):
    if not topology:
        raise ConfigError("langpair_topology is empty")
    live = [d for d in topology if parallel.get(tuple(d))]
    if not live:
        raise DataError("no allowed language pair has parallel data")
    return live


def sample_parallel_batch(parallel, topology, n_pairs: int, rng: np.random.Generator):
    """Draw n_pairs parallel pairs, direction uniform over the topology.

    Returns (texts, langs, PairSet); pair members sit at adjacent rows.
    """
    live = _live_directions(parallel, topology)
    texts, langs, pairs = [], [], []
    for t in range(n_pairs):
        a, b = live[rng.integers(len(live))]
        corpus = parallel[(a, b)]
        ta, tb = corpus[rng.integers(len(corpus))]
        texts += [ta, tb]
        langs += [a, b]
        pairs.append((2 * t, 2 * t + 1))
    return texts, langs, PairSet(pairs)


def sample_mixed_batch(
    parallel, nonparallel, topology, n_pairs: int, n_extras: int,
    extras_langs, rng: np.random.Generator,
):
    """Parallel pairs plus non-parallel extra sentences for the language loss.

    Returns (texts, langs, PairSet, extras_indices).
    """
    texts, langs, pairs = sample_parallel_batch(parallel, topology, n_pairs, rng)
    langs_pool = list(extras_langs) if extras_langs else sorted(nonparallel)
    pool = [(lang, s) for lang in langs_pool for s in nonparallel.get(lang, [])]
    if n_extras > 0 and not pool:
        raise DataError("no non-parallel sentences available for extras")
    extras = []
    for _ in range(n_extras):
        lang, s = pool[rng.integers(len(pool))]
        extras.append(len(texts))
        texts.append(s)
        langs.append(lang)
    return texts, langs, pairs, extras


# -- training ----------------------------------------------------------------


def _check_finite(name: str, out):
    if not np.isfinite(out.value) or not np.all(np.isfinite(out.grads)):
        raise NumericError(f"non-finite value or gradient in {name}")


def train_step(model: DualEncoderModel, opt_q: AdamW, opt_p: AdamW,
               ir_batch, sema_batch, lang_batch, cfg: TrainConfig) -> dict:
    """One update from pre-sampled batches.

    ir_batch: (query_texts, passage_texts) or None
    sema_batch: (texts, langs, PairSet) or None
    lang_batch: (texts, langs, PairSet, extras) or None
    """
    wq = model.query_encoder.W
    wp = model.passage_encoder.W
    g_q = np.zeros_like(wq)
    g_p = np.zeros_like(wp)
    touched_q = touched_p = False
    loss_ir = loss_sema = loss_lang = 0.0

    if ir_batch is not None:
        q_texts, p_texts = ir_batch
        n = len(q_texts)
        q_feats = [model.features(t) for t in q_texts]
        p_feats = [model.features(t) for t in p_texts]
        q_rows = np.array([model.query_encoder.encode(f) for f in q_feats])
        p_rows = np.array([model.passage_encoder.encode(f) for f in p_feats])
        out = ir_loss(
            EmbeddingBatch(q_rows, roles=["query"] * n),
            EmbeddingBatch(p_rows, roles=["passage"] * n),
        )
        _check_finite("ir_loss", out)
        loss_ir = out.value
        for i in range(n):
            accumulate_weight_grad(g_q, q_feats[i], out.grads[i])
            accumulate_weight_grad(g_p, p_feats[i], out.grads[n + i])
        touched_q = touched_p = True

    def run_cl(name, loss_fn, texts, langs, weight):
        nonlocal touched_q, touched_p
        feats = [model.features(t) for t in texts]
        towers = [("passage", model.passage_encoder)]
        if cfg.cl_to_both_towers:
            towers.append(("query", model.query_encoder))
        value = 0.0
        for tower_name, enc in towers:
            rows = np.array([enc.encode(f) for f in feats])
            out = loss_fn(EmbeddingBatch(rows, langs=langs))
            _check_finite(name, out)
            target = g_p if tower_name == "passage" else g_q
            for i, f in enumerate(feats):
                accumulate_weight_grad_scaled(target, f, out.grads[i], weight)
            if tower_name == "passage":
                touched_p = True
                value = out.value
            else:
                touched_q = True
        return value

    if sema_batch is not None and cfg.w_s > 0:
        texts, langs, pairs = sema_batch
        loss_sema = run_cl(
            "sema_cl_loss",
            lambda b: sema_cl_loss(b, pairs, cfg.tau),
            texts, langs, cfg.w_s,
        )

    if lang_batch is not None and cfg.w_l > 0:
        texts, langs, pairs, extras = lang_batch
        loss_lang = run_cl(
            "lang_cl_loss",
            lambda b: lang_cl_loss(MixedBatch(b, pairs, extras)),
            texts, langs, cfg.w_l,
        )

    if touched_q:
        opt_q.step(wq, g_q, cfg)
    if touched_p:
        opt_p.step(wp, g_p, cfg)

    return {
        "loss_ir": loss_ir,
        "loss_sema": loss_sema,
        "loss_lang": loss_lang,
        "loss_joint": loss_ir + cfg.w_s * loss_sema + cfg.w_l * loss_lang,
    }


def accumulate_weight_grad_scaled(gW, features, grad_z, scale):
    gW[:, features.indices] += scale * np.outer(grad_z, features.values)


def train_loop(data: TrainData, cfg: TrainConfig, out_dir=None):
    """Run cfg.steps training steps from a fresh model.

    Returns (model, trace) where trace is a list of per-step metric dicts.
    When out_dir is given, writes model.ckpt, model.opt, trace.csv, and
    interval checkpoints ckpt_<step>.ckpt if checkpoint_interval > 0.
    """
    cfg.validate()
    model = DualEncoderModel.initialize(
        cfg.seed, d_feat=cfg.d_feat, d_emb=cfg.d_emb, n=cfg.ngram
    )
    opt_q = AdamW(model.query_encoder.W.shape)
    opt_p = AdamW(model.passage_encoder.W.shape)

    ss = np.random.SeedSequence(cfg.seed)
    rng_ir, rng_sema, rng_lang = (
        np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(3)
    )

    sema_on = cfg.w_s > 0
    lang_on = cfg.w_l > 0

    trace = []
    for step in range(1, cfg.steps + 1):
        ir_batch = (
            sample_ir_batch(data.ir_pairs, cfg.batch_size_ir, rng_ir)
            if cfg.ir_enabled else None
        )
        sema_batch = (
            sample_parallel_batch(
                data.parallel, cfg.langpair_topology, cfg.pairs_per_cl_batch, rng_sema
            )
            if sema_on else None
        )
        lang_batch = (
            sample_mixed_batch(
                data.parallel, data.nonparallel, cfg.langpair_topology,
                cfg.pairs_per_cl_batch, cfg.extras_per_cl_batch,
                cfg.extras_langs, rng_lang,
            )
            if lang_on else None
        )
        metrics = train_step(model, opt_q, opt_p, ir_batch, sema_batch, lang_batch, cfg)
        metrics = {"step": step, **metrics}
        trace.append(metrics)
        if out_dir is not None and cfg.checkpoint_interval > 0 and step % cfg.checkpoint_interval == 0:
            model.save(f"{out_dir}/ckpt_{step:06d}.ckpt")

    if out_dir is not None:
        model.save(f"{out_dir}/model.ckpt")
        save_optimizer_state(f"{out_dir}/model.opt", model, opt_q, opt_p)
        write_trace_csv(trace, f"{out_dir}/trace.csv")
    return model, trace


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for row in trace:
            writer.writerow(
                [row["step"]] + ["%.17g" % row[k] for k in TRACE_FIELDS[1:]]
            )
