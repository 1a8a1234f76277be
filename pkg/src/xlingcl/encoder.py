"""Toy dual encoder: hashed character n-gram features into one linear map
per tower.

The towers are deliberately linear (no bias, no nonlinearity) so that
parameter gradients are exact one-liners and a full training run takes
seconds.  The feature hash is a seedable 64-bit mixer (FNV-1a accumulation
followed by a splitmix64 finalizer); it is bit-reproducible across runs at
a fixed seed.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

CHECKPOINT_MAGIC = b"XLCR"
OPTSTATE_MAGIC = b"XLCO"
FORMAT_VERSION = 1


def _splitmix64(h: int) -> int:
    h = (h + 0x9E3779B97F4A7C15) & _MASK64
    h = ((h ^ (h >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    h = ((h ^ (h >> 27)) * 0x94D049BB133111EB) & _MASK64
    return h ^ (h >> 31)


def hash_ngram(seed: int, ngram: bytes) -> int:
    """Seeded 64-bit hash of an n-gram's UTF-8 bytes."""
    h = (_FNV_OFFSET ^ seed) & _MASK64
    for b in ngram:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return _splitmix64(h)


@dataclass(frozen=True)
class SparseVector:
    """Sorted feature indices with their (L2-normalized) values."""

    indices: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class FeatureExtractor:
    """Character n-gram hashing featurizer.

    Text is lowercased, trimmed, and padded with boundary markers; each
    character n-gram is hashed into one of ``d_feat`` buckets; bucket
    counts are L2-normalized.
    """

    n: int = 3
    d_feat: int = 4096
    hash_seed: int = 0

    def featurize(self, text: str) -> SparseVector:
        t = text.strip().lower()
        if not t:
            raise DataError("cannot featurize empty text")
        padded = "^" + t + "$"
        counts: dict[int, float] = {}
        n = self.n
        if len(padded) < n:
            grams = [padded]
        else:
            grams = [padded[i : i + n] for i in range(len(padded) - n + 1)]
        for g in grams:
            idx = hash_ngram(self.hash_seed, g.encode("utf-8")) % self.d_feat
            counts[idx] = counts.get(idx, 0.0) + 1.0
        indices = np.array(sorted(counts), dtype=np.int64)
        values = np.array([counts[i] for i in indices], dtype=np.float64)
        values /= np.linalg.norm(values)
        return SparseVector(indices, values)


@dataclass
class LinearEncoder:
    """One tower: z = W x over hashed features."""

    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise DataError(f"weights must be 2-D, got shape {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise DegenerateInputError("encoder weights contain NaN/Inf")

    @property
    def d_emb(self) -> int:
        return self.W.shape[0]

    @property
    def d_feat(self) -> int:
        return self.W.shape[1]

    def encode(self, features: SparseVector) -> np.ndarray:
        if features.indices.size and int(features.indices.max()) >= self.d_feat:
            raise DataError("feature index out of range for this tower")
        return self.W[:, features.indices] @ features.values

    def backprop(self, features: SparseVector, grad_z: np.ndarray):
        """dL/dW columns for the active features: outer(grad_z, x)."""
        grad_z = np.asarray(grad_z, dtype=np.float64)
        if grad_z.shape != (self.d_emb,):
            raise DataError(
                f"grad_z shape {grad_z.shape} does not match d_emb {self.d_emb}"
            )
        return features.indices, np.outer(grad_z, features.values)


def accumulate_weight_grad(gW: np.ndarray, features: SparseVector, grad_z: np.ndarray):
    """Scatter-add outer(grad_z, x) into a dense parameter gradient."""
    gW[:, features.indices] += np.outer(grad_z, features.values)


@dataclass
class DualEncoderModel:
    """Query tower + passage tower sharing one feature extractor."""

    query_encoder: LinearEncoder
    passage_encoder: LinearEncoder
    extractor: FeatureExtractor
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.query_encoder.W.shape != self.passage_encoder.W.shape:
            raise DataError("tower shapes differ")
        if self.query_encoder.d_feat != self.extractor.d_feat:
            raise DataError("tower feature dimension does not match the extractor")

    @classmethod
    def initialize(cls, seed: int, d_feat: int = 4096, d_emb: int = 32, n: int = 3):
        """Fresh model with uniform weights in [-1/sqrt(d_feat), +1/sqrt(d_feat)]."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        bound = 1.0 / np.sqrt(d_feat)
        wq = rng.uniform(-bound, bound, size=(d_emb, d_feat))
        wp = rng.uniform(-bound, bound, size=(d_emb, d_feat))
        return cls(
            LinearEncoder(wq),
            LinearEncoder(wp),
            FeatureExtractor(n=n, d_feat=d_feat, hash_seed=seed & _MASK64),
        )

    def features(self, text: str) -> SparseVector:
        """Featurize with memoization (texts repeat heavily during training)."""
        f = self._cache.get(text)
        if f is None:
            f = self.extractor.featurize(text)
            self._cache[text] = f
        return f

    def embed_texts(self, texts, tower: str) -> np.ndarray:
        enc = self.query_encoder if tower == "query" else self.passage_encoder
        out = np.empty((len(texts), enc.d_emb))
        for i, t in enumerate(texts):
            out[i] = enc.encode(self.features(t))
        return out

    # -- checkpoint format: little-endian header then both towers row-major
    def save(self, path):
        header = struct.pack(
            "<4sIIIIQ",
            CHECKPOINT_MAGIC,
            FORMAT_VERSION,
            self.extractor.d_feat,
            self.query_encoder.d_emb,
            self.extractor.n,
            self.extractor.hash_seed,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.query_encoder.W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.passage_encoder.W, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        header_size = struct.calcsize("<4sIIIIQ")
        magic, version, d_feat, d_emb, n, hash_seed = struct.unpack(
            "<4sIIIIQ", raw[:header_size]
        )
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"bad checkpoint magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        count = d_emb * d_feat
        if len(raw) < header_size + 2 * count * 8:
            raise DataError("checkpoint truncated")
        body = np.frombuffer(raw, dtype="<f8", offset=header_size, count=2 * count)
        wq = body[:count].reshape(d_emb, d_feat).astype(np.float64)
        wp = body[count:].reshape(d_emb, d_feat).astype(np.float64)
        return cls(
            LinearEncoder(wq),
            LinearEncoder(wp),
            FeatureExtractor(n=n, d_feat=d_feat, hash_seed=hash_seed),
        )
