"""Top-k neighbour index, relevance distribution and the interpolated meta-test sampler."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import Corpus
from .errors import ConfigError, DataError, FingerprintError, IndexFormatError, IndexTruncatedError
from .kernels import KINDS, KernelConfig, lev_one_to_many, ptk_raw, ssk_one_to_many
from .trees import DepTree, logical_form_to_deptree

MAGIC = b"NBRIDX1\n"
FORMAT_VERSION = 1
# version, kind, ssk_max_len, ssk_decay, ptk_mu, ptk_lambda, normalize, k, N, fingerprint
_HEADER = struct.Struct("<IBIdddBIIQ")
_ROW_LEN = struct.Struct("<I")
_PAIR = np.dtype([("id", "<u4"), ("sim", "<f8")])

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def corpus_fingerprint(corpus: Corpus) -> int:
    """64-bit FNV-1a over ``source<TAB>target<LF>`` of every example in id order."""
    h = FNV_OFFSET
    for e in corpus:
        h = fnv1a64(f"{e.source_text}\t{e.target_text}\n".encode("utf-8"), h)
    return h


@dataclass(frozen=True)
class SamplerConfig:
    eta: float = 1.0
    lam: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class NeighborIndex:
    k: int
    kernel: KernelConfig
    ids: list[np.ndarray]           # per anchor, neighbour ids (uint32), best first
    sims: list[np.ndarray]          # per anchor, similarities (float64), non-increasing
    corpus_fingerprint: int
    _dist_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, anchor: int) -> list[tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.ids[anchor], self.sims[anchor])]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NeighborIndex):
            return NotImplemented
        return (self.k == other.k and self.kernel == other.kernel
                and self.corpus_fingerprint == other.corpus_fingerprint
                and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.ids, other.ids))
                and all(np.array_equal(a, b) for a, b in zip(self.sims, other.sims)))

    def check_corpus(self, corpus: Corpus) -> None:
        fp = corpus_fingerprint(corpus)
        if fp != self.corpus_fingerprint or len(corpus) != len(self):
            raise FingerprintError(
                f"index fingerprint {self.corpus_fingerprint:016x} does not match corpus "
                f"{corpus.name!r} ({fp:016x})")


# --- construction --------------------------------------------------------------------

def corpus_trees(corpus: Corpus) -> dict[int, DepTree]:
    if corpus.dialect is None:
        raise DataError(f"corpus {corpus.name!r} has no logical-form dialect; trees unavailable")
    trees = {}
    for e in corpus:
        try:
            trees[e.id] = logical_form_to_deptree(e.raw_target, corpus.dialect)
        except DataError as exc:
            raise type(exc)(f"example {e.id}: {exc}") from None
    return trees


def similarity_rows(corpus: Corpus, kernel: KernelConfig,
                    trees: Mapping[int, DepTree] | None = None):
    """Yield ``(anchor, similarities to every example)``; the anchor's own entry is included."""
    n = len(corpus)
    codes: dict[str, int] = {}
    seqs = [[codes.setdefault(t, len(codes)) for t in e.source] for e in corpus]
    if kernel.kind == "lev":
        for a in range(n):
            yield a, -lev_one_to_many(seqs[a], seqs).astype(np.float64)
    elif kernel.kind == "ssk":
        q, lam = kernel.ssk_max_len, kernel.ssk_decay
        diag = np.array([ssk_one_to_many(s, [s], q, lam)[0] for s in seqs])
        for a in range(n):
            raw = ssk_one_to_many(seqs[a], seqs, q, lam)
            yield a, _normalized(raw, diag[a], diag) if kernel.normalize else raw
    elif kernel.kind == "ptk":
        if trees is None:
            trees = corpus_trees(corpus)
        mu, lam = kernel.ptk_mu, kernel.ptk_lambda
        ts = [trees[i] for i in range(n)]
        diag = np.array([ptk_raw(t, t, mu, lam) for t in ts])
        label_sets = [set(t.labels) for t in ts]
        for a in range(n):
            raw = np.zeros(n)
            for b in range(n):
                # no shared label means no shared fragment
                if label_sets[a] & label_sets[b]:
                    raw[b] = ptk_raw(ts[a], ts[b], mu, lam)
            yield a, _normalized(raw, diag[a], diag) if kernel.normalize else raw
    else:
        raise ConfigError(f"no similarity rows for kernel kind {kernel.kind!r}")


def _normalized(raw: np.ndarray, kaa: float, diag: np.ndarray) -> np.ndarray:
    denom = np.sqrt(kaa * diag)
    out = np.zeros_like(raw)
    ok = denom > 0
    out[ok] = raw[ok] / denom[ok]
    return out


def top_k(sims: np.ndarray, anchor: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Best ``k`` entries excluding the anchor; ties go to the smaller id."""
    ids = np.arange(len(sims))
    keep = ids != anchor
    ids, sims = ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))[:k]
    return ids[order].astype(np.uint32), sims[order].astype(np.float64)


def build_index(corpus: Corpus, kernel: KernelConfig, k: int = 1000,
                trees: Mapping[int, DepTree] | None = None) -> NeighborIndex:
    """Precompute each example's top-``k`` neighbours under ``kernel``."""
    if len(corpus) == 0:
        raise DataError("cannot index an empty corpus")
    if k < 1:
        raise ConfigError("k must be >= 1")
    fp = corpus_fingerprint(corpus)
    if kernel.kind == "uniform":
        empty_ids, empty_sims = np.zeros(0, np.uint32), np.zeros(0, np.float64)
        return NeighborIndex(k, kernel, [empty_ids] * len(corpus), [empty_sims] * len(corpus), fp)
    ids, sims = [], []
    for anchor, row in similarity_rows(corpus, kernel, trees):
        i, s = top_k(row, anchor, k)
        ids.append(i)
        sims.append(s)
    return NeighborIndex(k, kernel, ids, sims, fp)


# --- persistence ---------------------------------------------------------------------

def save_index(idx: NeighborIndex, path: str | Path) -> None:
    kc = idx.kernel
    parts = [MAGIC, _HEADER.pack(FORMAT_VERSION, KINDS.index(kc.kind), kc.ssk_max_len,
                                 kc.ssk_decay, kc.ptk_mu, kc.ptk_lambda, int(kc.normalize),
                                 idx.k, len(idx), idx.corpus_fingerprint)]
    for ids, sims in zip(idx.ids, idx.sims):
        row = np.empty(len(ids), dtype=_PAIR)
        row["id"], row["sim"] = ids, sims
        parts.append(_ROW_LEN.pack(len(ids)))
        parts.append(row.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_index(path: str | Path, corpus: Corpus | None = None) -> NeighborIndex:
    """Read an index file; with ``corpus`` given, also verify the fingerprint."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise IndexFormatError(f"{path}: not a neighbour index (bad magic bytes)")
    pos = len(MAGIC)
    if len(data) < pos + _HEADER.size:
        raise IndexTruncatedError(f"{path}: truncated header")
    (version, kind, q, decay, mu, lam, norm, k, n, fp) = _HEADER.unpack_from(data, pos)
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"{path}: unsupported format version {version}")
    if kind >= len(KINDS):
        raise IndexFormatError(f"{path}: unknown kernel code {kind}")
    pos += _HEADER.size
    kernel = KernelConfig(KINDS[kind], q, decay, mu, lam, bool(norm))
    ids, sims = [], []
    for a in range(n):
        if len(data) < pos + _ROW_LEN.size:
            raise IndexTruncatedError(f"{path}: truncated at row {a}")
        (m,) = _ROW_LEN.unpack_from(data, pos)
        pos += _ROW_LEN.size
        end = pos + m * _PAIR.itemsize
        if len(data) < end:
            raise IndexTruncatedError(f"{path}: truncated inside row {a}")
        row = np.frombuffer(data[pos:end], dtype=_PAIR)
        ids.append(row["id"].astype(np.uint32))
        sims.append(row["sim"].astype(np.float64))
        pos = end
    if pos != len(data):
        raise IndexFormatError(f"{path}: {len(data) - pos} trailing bytes")
    idx = NeighborIndex(k, kernel, ids, sims, fp)
    if corpus is not None:
        idx.check_corpus(corpus)
    return idx


# --- sampling ------------------------------------------------------------------------

def softmax_temperature(sims: np.ndarray, eta: float) -> np.ndarray:
    z = np.asarray(sims, dtype=np.float64) / eta
    z = np.exp(z - z.max())
    return z / z.sum()


def relevance_distribution(idx: NeighborIndex, anchor: int, cfg: SamplerConfig) -> np.ndarray:
    """p(x', y' | x, y) proportional to exp(k / eta), restricted to the anchor's stored row."""
    sims = idx.sims[anchor]
    if len(sims) == 0:
        raise DataError(f"anchor {anchor} has no stored neighbours")
    key = (anchor, cfg.eta)
    p = idx._dist_cache.get(key)
    if p is None:
        p = softmax_temperature(sims, cfg.eta)
        idx._dist_cache[key] = p
    return p


def sample_meta_test(idx: NeighborIndex, anchor: int, cfg: SamplerConfig, corpus_size: int,
                     rng: np.random.Generator) -> int:
    """With probability lambda draw from the anchor's relevance distribution, else uniformly."""
    if corpus_size < 2:
        raise ConfigError("need at least two examples to sample a meta-test neighbour")
    row_ids = idx.ids[anchor]
    if idx.kernel.kind == "uniform" or len(row_ids) == 0:
        return int(rng.integers(corpus_size))
    if rng.random() < cfg.lam:
        p = relevance_distribution(idx, anchor, cfg)
        return int(row_ids[rng.choice(len(p), p=p)])
    return int(rng.integers(corpus_size))


def sampling_marginal(idx: NeighborIndex, anchor: int, cfg: SamplerConfig,
                      corpus_size: int) -> np.ndarray:
    """Exact probability of every corpus id under :func:`sample_meta_test`."""
    out = np.full(corpus_size, 1.0 / corpus_size)
    if idx.kernel.kind == "uniform" or len(idx.ids[anchor]) == 0:
        return out
    out *= 1.0 - cfg.lam
    np.add.at(out, idx.ids[anchor].astype(np.int64), cfg.lam * relevance_distribution(idx, anchor, cfg))
    return out
