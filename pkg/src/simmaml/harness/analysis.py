"""Neighbour diversity statistics: how long the retrieved examples are, and how many are atoms."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..corpus import Corpus
from ..relevance import NeighborIndex


def analyze_neighbors(corpus: Corpus, idx: NeighborIndex,
                      top_k_list: Sequence[int] = (10, 100, 1000)) -> list[dict]:
    """One row per k with length and atom statistics over every anchor's top-k neighbours.

    Length is the source sentence length in characters, pooled over all
    (anchor, neighbour) pairs. An atom is a single-word training example;
    it counts for an anchor when that word occurs in the anchor's source.
    Atom counts are per anchor, then averaged.
    """
    idx.check_corpus(corpus)
    if len(corpus) < 2 or all(len(ids) == 0 for ids in idx.ids):
        return []
    lengths = np.array([len(e.source_text) for e in corpus], dtype=np.float64)
    atom_word = [e.source[0] if len(e.source) == 1 else None for e in corpus]
    rows = []
    for k in top_k_list:
        pooled, atoms = [], []
        for anchor, ids in enumerate(idx.ids):
            top = ids[:k].astype(np.int64)
            if top.size == 0:
                continue
            pooled.append(lengths[top])
            words = set(corpus[anchor].source)
            atoms.append(sum(1 for i in top if atom_word[i] is not None and atom_word[i] in words))
        flat = np.concatenate(pooled)
        rows.append({"k": int(k), "kernel": idx.kernel.kind,
                     "length_mean": float(flat.mean()), "length_std": float(flat.std()),
                     "atoms_mean": float(np.mean(atoms)), "atoms_std": float(np.std(atoms)),
                     "anchors": len(atoms)})
    return rows


def format_analysis(rows: list[dict]) -> str:
    """Tab-separated table, one line per (kernel, k)."""
    out = ["kernel\tk\tlength_mean\tlength_std\tatoms_mean\tatoms_std"]
    for r in rows:
        out.append(f"{r['kernel']}\t{r['k']}\t{r['length_mean']:.2f}\t{r['length_std']:.2f}"
                   f"\t{r['atoms_mean']:.2f}\t{r['atoms_std']:.2f}")
    return "\n".join(out) + "\n"
