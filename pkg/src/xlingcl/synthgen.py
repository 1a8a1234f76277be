"""Deterministic synthetic multilingual world.

Semantics live at the level of integer concept ids; each language renders a
concept as its own word built from a shared syllable inventory.  Word
strings are globally unique, so no two languages share a surface form, but
translations share their concept-id multiset exactly.  Character n-grams
still overlap across languages through the shared syllables, which is what
makes cross-lingual transfer possible for the toy encoder while keeping
raw feature-space alignment of translation pairs absent before training.

Concept frequencies follow a Zipf law (exponent 1.0) to create realistic
hubness for the margin-score mining test.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .retrieval import RetrievalTask

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class WorldSpec:
    num_concepts: int = 500
    num_languages: int = 8
    sentence_len_min: int = 5
    sentence_len_max: int = 12
    noise_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_concepts < self.sentence_len_max:
            raise ConfigError("num_concepts must be >= max sentence length")
        if not (0.0 <= self.noise_rate < 1.0):
            raise ConfigError("noise_rate must be in [0, 1)")
        if self.sentence_len_min < 1 or self.sentence_len_min > self.sentence_len_max:
            raise ConfigError("bad sentence length range")


@dataclass
class LanguageLexicon:
    lang: str
    surface: list  # concept id -> word
    fillers: list  # language-unique filler words


@dataclass
class SemanticSentence:
    concept_ids: tuple

    def key(self) -> str:
        return "-".join(str(c) for c in self.concept_ids)


@dataclass
class World:
    spec: WorldSpec
    languages: list
    lexicons: dict = field(repr=False)
    concept_probs: np.ndarray = field(repr=False)

    def lexicon(self, lang: str) -> LanguageLexicon:
        try:
            return self.lexicons[lang]
        except KeyError:
            raise DataError(f"unknown language {lang!r}") from None

    def rng(self, *key) -> np.random.Generator:
        """Deterministic stream derived from the world seed and a purpose key."""
        material = [self.spec.seed] + [
            int.from_bytes(hashlib.sha256(str(k).encode()).digest()[:4], "little")
            for k in key
        ]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(material)))


def _zipf_probs(n: int, exponent: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def build_world(spec: WorldSpec) -> World:
    """Generate lexicons for every language, disjoint surface forms guaranteed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 1])))
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]

    used = set()

    def fresh_word() -> str:
        while True:
            k = int(rng.integers(2, 4))
            w = "".join(syllables[rng.integers(len(syllables))] for _ in range(k))
            if w not in used:
                used.add(w)
                return w

    languages = [f"l{i}" for i in range(spec.num_languages)]
    lexicons = {}
    for lang in languages:
        surface = [fresh_word() for _ in range(spec.num_concepts)]
        fillers = [fresh_word() for _ in range(12)]
        lexicons[lang] = LanguageLexicon(lang, surface, fillers)
    return World(spec, languages, lexicons, _zipf_probs(spec.num_concepts))


def sample_sentence(world: World, rng: np.random.Generator) -> SemanticSentence:
    spec = world.spec
    length = int(rng.integers(spec.sentence_len_min, spec.sentence_len_max + 1))
    ids = rng.choice(spec.num_concepts, size=length, replace=True, p=world.concept_probs)
    return SemanticSentence(tuple(int(c) for c in ids))


def render(world: World, sentence: SemanticSentence, lang: str,
           rng: np.random.Generator) -> str:
    """Render concepts as words, splicing in language-specific filler noise."""
    lex = world.lexicon(lang)
    tokens = [lex.surface[c] for c in sentence.concept_ids]
    rate = world.spec.noise_rate
    if rate > 0:
        n_fill = int(round(len(tokens) * rate / (1.0 - rate)))
        for _ in range(n_fill):
            word = lex.fillers[rng.integers(len(lex.fillers))]
            pos = int(rng.integers(len(tokens) + 1))
            tokens.insert(pos, word)
    return " ".join(tokens)


def make_parallel_corpus(world: World, lang_a: str, lang_b: str, n_pairs: int,
                         rng: np.random.Generator | None = None):
    """n_pairs semantic sentences rendered in both languages.

    Filler noise is drawn independently per side, so pair members share
    their concept words but not their noise.
    """
    world.lexicon(lang_a)
    world.lexicon(lang_b)
    if rng is None:
        rng = world.rng("parallel", lang_a, lang_b)
    out = []
    for _ in range(n_pairs):
        s = sample_sentence(world, rng)
        out.append((render(world, s, lang_a, rng), render(world, s, lang_b, rng)))
    return out


def make_ir_task(world: World, lang: str, n_queries: int, corpus_size: int,
                 distractor_overlap: float,
                 rng: np.random.Generator | None = None) -> RetrievalTask:
    """Retrieval task with planted golds and tunably-confusable distractors.

    Each query keeps half of its gold passage's concepts; distractor tokens
    come from the gold concept pool with probability distractor_overlap and
    from the remaining concepts otherwise.
    """
    if distractor_overlap >= 1.0 or distractor_overlap < 0.0:
        raise ConfigError("distractor_overlap must be in [0, 1)")
    if corpus_size < n_queries:
        raise DataError("corpus_size must be >= n_queries")
    if rng is None:
        rng = world.rng("ir_task", lang)

    golds = [sample_sentence(world, rng) for _ in range(n_queries)]
    gold_pool = sorted({c for s in golds for c in s.concept_ids})
    other = np.array([c for c in range(world.spec.num_concepts) if c not in set(gold_pool)])
    if other.size == 0:
        raise DataError("gold sentences exhausted the concept inventory")
    other_probs = world.concept_probs[other]
    other_probs = other_probs / other_probs.sum()

    sentences = list(golds)
    for _ in range(corpus_size - n_queries):
        length = int(
            rng.integers(world.spec.sentence_len_min, world.spec.sentence_len_max + 1)
        )
        ids = []
        for _ in range(length):
            if gold_pool and rng.random() < distractor_overlap:
                ids.append(int(gold_pool[rng.integers(len(gold_pool))]))
            else:
                ids.append(int(rng.choice(other, p=other_probs)))
        sentences.append(SemanticSentence(tuple(ids)))

    order = rng.permutation(len(sentences))
    corpus = []
    pid_of = {}
    for rank, si in enumerate(order):
        pid = f"p{rank:05d}"
        pid_of[int(si)] = pid
        corpus.append((pid, lang, render(world, sentences[si], lang, rng)))

    queries, qrels = [], {}
    for qi, gold in enumerate(golds):
        take = (len(gold.concept_ids) + 1) // 2
        picked = rng.choice(len(gold.concept_ids), size=take, replace=False)
        qsent = SemanticSentence(tuple(gold.concept_ids[i] for i in sorted(picked)))
        qid = f"q{qi:04d}"
        queries.append((qid, render(world, qsent, lang, rng)))
        qrels[qid] = {pid_of[qi]}
    return RetrievalTask(queries=queries, corpus=corpus, qrels=qrels)


@dataclass
class BitextTask:
    side_a: list  # (id, text)
    side_b: list
    gold: set  # (id_a, id_b)
    lang_a: str
    lang_b: str


def make_bitext_task(world: World, lang_a: str, lang_b: str, n_gold: int,
                     n_noise: int, rng: np.random.Generator | None = None) -> BitextTask:
    """n_gold planted translation pairs among n_noise unrelated sentences per side."""
    if n_gold < 1:
        raise DataError("need at least one gold pair")
    if rng is None:
        rng = world.rng("bitext", lang_a, lang_b)

    texts_a, texts_b, gold_ids = [], [], []
    for g in range(n_gold):
        s = sample_sentence(world, rng)
        texts_a.append(render(world, s, lang_a, rng))
        texts_b.append(render(world, s, lang_b, rng))
        gold_ids.append(g)
    for _ in range(n_noise):
        texts_a.append(render(world, sample_sentence(world, rng), lang_a, rng))
    for _ in range(n_noise):
        texts_b.append(render(world, sample_sentence(world, rng), lang_b, rng))

    perm_a = rng.permutation(len(texts_a))
    perm_b = rng.permutation(len(texts_b))
    side_a = [(f"a{r:05d}", texts_a[i]) for r, i in enumerate(perm_a)]
    side_b = [(f"b{r:05d}", texts_b[i]) for r, i in enumerate(perm_b)]
    id_a = {int(orig): f"a{r:05d}" for r, orig in enumerate(perm_a)}
    id_b = {int(orig): f"b{r:05d}" for r, orig in enumerate(perm_b)}
    gold = {(id_a[g], id_b[g]) for g in gold_ids}
    return BitextTask(side_a, side_b, gold, lang_a, lang_b)


# ---------------------------------------------------------------------------
# file formats


def write_corpus_jsonl(path, corpus):
    """corpus: iterable of (id, lang, text)."""
    with open(path, "w", encoding="utf-8") as fh:
        for pid, lang, text in corpus:
            fh.write(json.dumps({"id": pid, "lang": lang, "text": text}) + "\n")


def read_corpus_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            out.append((d["id"], d["lang"], d["text"]))
    return out


def write_queries_jsonl(path, queries, lang):
    with open(path, "w", encoding="utf-8") as fh:
        for qid, text in queries:
            fh.write(json.dumps({"id": qid, "lang": lang, "text": text}) + "\n")


def read_queries_jsonl(path):
    queries, langs = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            queries.append((d["id"], d["text"]))
            langs.append(d["lang"])
    return queries, langs


def write_parallel_tsv(path, lang_a, lang_b, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for ta, tb in pairs:
            fh.write(f"{lang_a}\t{lang_b}\t{ta}\t{tb}\n")


def read_parallel_tsv(path):
    pairs = []
    lang_a = lang_b = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            la, lb, ta, tb = line.rstrip("\n").split("\t")
            lang_a, lang_b = la, lb
            pairs.append((ta, tb))
    return lang_a, lang_b, pairs


def write_qrels_tsv(path, qrels):
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for pid in sorted(qrels[qid]):
                fh.write(f"{qid}\t{pid}\t1\n")


def read_qrels_tsv(path):
    qrels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            qid, pid, _ = line.rstrip("\n").split("\t")
            qrels.setdefault(qid, set()).add(pid)
    return qrels


def write_bitext_gold_tsv(path, gold):
    with open(path, "w", encoding="utf-8") as fh:
        for ia, ib in sorted(gold):
            fh.write(f"{ia}\t{ib}\n")


def read_bitext_gold_tsv(path):
    gold = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            ia, ib = line.rstrip("\n").split("\t")
            gold.add((ia, ib))
    return gold


def file_checksum(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def file_manifest(paths, seed: int) -> dict:
    return {
        "seed": seed,
        "files": [
            {
                "path": os.path.basename(p),
                "size": os.path.getsize(p),
                "sha256": file_checksum(p),
            }
            for p in sorted(paths)
        ],
    }
