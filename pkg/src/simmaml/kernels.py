"""Similarity functions between examples: word-level Levenshtein, string subsequence kernel,
partial tree kernel.

The batched ``*_one_to_many`` variants compute one anchor against many
sequences with numpy and are what index construction uses; the scalar
functions are thin wrappers over them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Example
from .errors import ConfigError
from .trees import DepTree

KINDS = ("lev", "ssk", "ptk", "uniform")


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "lev"
    ssk_max_len: int = 4
    ssk_decay: float = 1.0
    ptk_mu: float = 1.0
    ptk_lambda: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kernel kind must be one of {KINDS}, got {self.kind!r}")
        if self.ssk_max_len < 1:
            raise ConfigError("ssk_max_len must be >= 1")
        for name in ("ssk_decay", "ptk_mu", "ptk_lambda"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


# --- Levenshtein ---------------------------------------------------------------------

def lev_distance(a: Sequence, b: Sequence) -> int:
    """Minimum number of token insertions, deletions and substitutions turning ``a`` into ``b``."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def _pad(seqs: Sequence[Sequence[int]], fill: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), max(1, int(lengths.max(initial=0)))), fill, dtype=np.int64)
    for p, s in enumerate(seqs):
        out[p, :len(s)] = s
    return out, lengths


def lev_one_to_many(a: Sequence[int], others: Sequence[Sequence[int]]) -> np.ndarray:
    """Levenshtein distance from integer-coded ``a`` to each of ``others``."""
    if not others:
        return np.zeros(0, dtype=np.int64)
    batch, lengths = _pad(others, -1)
    P, L = batch.shape
    row = np.broadcast_to(np.arange(L + 1, dtype=np.int64), (P, L + 1)).copy()
    for i, x in enumerate(a, start=1):
        new = np.empty_like(row)
        new[:, 0] = i
        cost = (batch != x).astype(np.int64)
        # deletion/substitution first, then the left-to-right insertion chain
        diag_up = np.minimum(row[:, 1:] + 1, row[:, :-1] + cost)
        for j in range(1, L + 1):
            new[:, j] = np.minimum(diag_up[:, j - 1], new[:, j - 1] + 1)
        row = new
    return row[np.arange(P), lengths]


# --- string subsequence kernel -------------------------------------------------------

def ssk_one_to_many(a: Sequence[int], others: Sequence[Sequence[int]],
                    max_len: int = 4, decay: float = 1.0) -> np.ndarray:
    """Unnormalized subsequence kernel between ``a`` and each of ``others``.

    Sums, for subsequence lengths 1..max_len, every pair of index tuples in
    the two sequences spelling the same subsequence, weighted by
    ``decay ** (span in a + span in b)``. With ``decay=1`` this is a plain
    count of common subsequences with multiplicity.
    """
    P = len(others)
    if P == 0:
        return np.zeros(0)
    if len(a) == 0:
        return np.zeros(P)
    batch, _ = _pad(others, -1)
    L, m, q = batch.shape[1], len(a), max_len
    lam, lam2 = decay, decay * decay
    # aux[n, p, i, j]: weighted count of length-n common subsequences inside a[:i], b_p[:j],
    # weighted from the first matched position to the end of each prefix
    aux = np.zeros((q, P, m + 1, L + 1))
    aux[0] = 1.0
    total = np.zeros(P)
    for i in range(1, m + 1):
        match = (batch == a[i - 1]).astype(np.float64)          # (P, L)
        for j in range(1, L + 1):
            hit = match[:, j - 1]
            prev = aux[:, :, i - 1, j - 1]                      # (q, P)
            total += lam2 * hit * prev.sum(axis=0)
            if q > 1:
                aux[1:, :, i, j] = (lam * aux[1:, :, i - 1, j] + lam * aux[1:, :, i, j - 1]
                                    - lam2 * prev[1:] + lam2 * hit * prev[:-1])
    return total


def ssk_raw(a: Sequence, b: Sequence, max_len: int = 4, decay: float = 1.0) -> float:
    codes: dict = {}
    ca = [codes.setdefault(t, len(codes)) for t in a]
    cb = [codes.setdefault(t, len(codes)) for t in b]
    return float(ssk_one_to_many(ca, [cb], max_len, decay)[0])


def ssk(a: Sequence, b: Sequence, cfg: KernelConfig = KernelConfig(kind="ssk")) -> float:
    k = ssk_raw(a, b, cfg.ssk_max_len, cfg.ssk_decay)
    if not cfg.normalize:
        return k
    return _normalize(k, ssk_raw(a, a, cfg.ssk_max_len, cfg.ssk_decay),
                      ssk_raw(b, b, cfg.ssk_max_len, cfg.ssk_decay))


def _normalize(k: float, kaa: float, kbb: float) -> float:
    if kaa <= 0.0 or kbb <= 0.0:
        return 0.0
    return k / math.sqrt(kaa * kbb)


# --- partial tree kernel -------------------------------------------------------------

def _ptk_delta(t1: DepTree, t2: DepTree, mu: float, lam: float) -> Callable[[int, int], float]:
    memo: dict[tuple[int, int], float] = {}
    lam2 = lam * lam

    def delta(n1: int, n2: int) -> float:
        key = (n1, n2)
        if key in memo:
            return memo[key]
        if t1.labels[n1] != t2.labels[n2]:
            memo[key] = 0.0
            return 0.0
        c1, c2 = t1.children[n1], t2.children[n2]
        acc = lam2
        if c1 and c2:
            l1, l2 = len(c1), len(c2)
            d = [[delta(x, y) for y in c2] for x in c1]
            # s[i][j]: weighted child-subsequence pairs of the current length ending at c1[i], c2[j]
            s = d
            for p in range(1, min(l1, l2) + 1):
                acc += sum(map(sum, s))
                if p == min(l1, l2):
                    break
                # pre[i][j]: s summed over i' <= i, j' <= j with lam^((i - i') + (j - j'))
                pre = [[0.0] * (l2 + 1) for _ in range(l1 + 1)]
                for i in range(l1):
                    for j in range(l2):
                        pre[i + 1][j + 1] = (s[i][j] + lam * pre[i][j + 1]
                                             + lam * pre[i + 1][j] - lam2 * pre[i][j])
                s = [[d[i][j] * lam2 * pre[i][j] for j in range(l2)] for i in range(l1)]
        value = mu * acc
        memo[key] = value
        return value

    return delta


def ptk_raw(t1: DepTree, t2: DepTree, mu: float = 1.0, lam: float = 1.0) -> float:
    """Moschitti's partial tree kernel: sum of Delta over all node pairs with equal labels."""
    delta = _ptk_delta(t1, t2, mu, lam)
    by_label: dict[str, list[int]] = {}
    for n, label in enumerate(t2.labels):
        by_label.setdefault(label, []).append(n)
    return float(sum(delta(n1, n2) for n1, label in enumerate(t1.labels)
                     for n2 in by_label.get(label, ())))


def ptk(t1: DepTree, t2: DepTree, cfg: KernelConfig = KernelConfig(kind="ptk")) -> float:
    k = ptk_raw(t1, t2, cfg.ptk_mu, cfg.ptk_lambda)
    if not cfg.normalize:
        return k
    return _normalize(k, ptk_raw(t1, t1, cfg.ptk_mu, cfg.ptk_lambda),
                      ptk_raw(t2, t2, cfg.ptk_mu, cfg.ptk_lambda))


# --- dispatch ------------------------------------------------------------------------

def similarity(e1: Example, e2: Example, cfg: KernelConfig,
               trees: Mapping[int, DepTree] | None = None) -> float:
    """k([x, y], [x', y']) for the configured kernel."""
    if cfg.kind == "uniform":
        return 0.0
    if cfg.kind == "lev":
        return -float(lev_distance(e1.source, e2.source))
    if cfg.kind == "ssk":
        return ssk(e1.source, e2.source, cfg)
    if trees is None:
        raise ConfigError("the partial tree kernel needs dependency trees for both examples")
    return ptk(trees[e1.id], trees[e2.id], cfg)
