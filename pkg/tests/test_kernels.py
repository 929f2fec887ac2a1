import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simmaml.corpus import build_corpus
from simmaml.errors import ConfigError
from simmaml.kernels import (KernelConfig, lev_distance, lev_one_to_many, ptk, ptk_raw,
                             similarity, ssk, ssk_one_to_many, ssk_raw)
from simmaml.trees import enumerate_partial_trees, shared_fragment_pairs

from test_trees import trees

words = st.lists(st.sampled_from("abcd"), min_size=0, max_size=6)


def brute_ssk(a, b, max_len, decay=1.0):
    """Sum over subsequence index pairs with equal tokens, weighted by decay ** span."""
    total = 0.0
    for n in range(1, max_len + 1):
        for i in itertools.combinations(range(len(a)), n):
            for j in itertools.combinations(range(len(b)), n):
                if all(a[x] == b[y] for x, y in zip(i, j)):
                    total += decay ** (i[-1] - i[0] + 1 + j[-1] - j[0] + 1)
    return total


def brute_lev(a, b):
    if not a or not b:
        return len(a) + len(b)
    return min(brute_lev(a[1:], b) + 1, brute_lev(a, b[1:]) + 1,
               brute_lev(a[1:], b[1:]) + (a[0] != b[0]))


@settings(max_examples=300, deadline=None)
@given(words, words)
def test_lev_matches_recursive_definition(a, b):
    assert lev_distance(a, b) == brute_lev(a, b)
    assert lev_distance(a, b) == lev_distance(b, a)


@settings(max_examples=100, deadline=None)
@given(words, st.lists(words, min_size=1, max_size=5))
def test_lev_batched_matches_scalar(a, others):
    codes = {c: i for i, c in enumerate("abcd")}
    enc = lambda s: [codes[c] for c in s]
    got = lev_one_to_many(enc(a), [enc(o) for o in others])
    assert got.tolist() == [lev_distance(a, o) for o in others]


@settings(max_examples=100, deadline=None)
@given(words, words, words)
def test_lev_triangle_inequality(a, b, c):
    assert lev_distance(a, c) <= lev_distance(a, b) + lev_distance(b, c)


def test_ssk_small_cases():
    assert ssk_raw("ab", "ba", 4) == 2.0
    assert ssk_raw("abc", "axc", 4) == 3.0
    assert ssk_raw("", "abc", 4) == 0.0
    assert ssk("", "abc") == 0.0


@settings(max_examples=200, deadline=None)
@given(words, words, st.integers(1, 4), st.sampled_from([1.0, 0.5, 0.9]))
def test_ssk_matches_brute_force(a, b, q, decay):
    assert ssk_raw(a, b, q, decay) == pytest.approx(brute_ssk(a, b, q, decay), rel=1e-12, abs=1e-12)


def test_ssk_one_to_many_batch():
    a = [0, 1, 2, 1]
    others = [[1, 2], [0], [], [2, 1, 0, 1, 2]]
    batch = ssk_one_to_many(a, others, 3, 1.0)
    assert batch.tolist() == [brute_ssk(a, o, 3) for o in others]


@settings(max_examples=200, deadline=None)
@given(trees(), trees())
def test_ptk_counts_shared_fragment_pairs(t1, t2):
    expected = shared_fragment_pairs(enumerate_partial_trees(t1), enumerate_partial_trees(t2))
    assert ptk_raw(t1, t2) == expected


@settings(max_examples=100, deadline=None)
@given(trees(), trees())
def test_ptk_symmetric_and_decays(t1, t2):
    assert ptk_raw(t1, t2) == ptk_raw(t2, t1)
    assert ptk_raw(t1, t2, 0.5, 0.5) <= ptk_raw(t1, t2) + 1e-12


@settings(max_examples=100, deadline=None)
@given(words.filter(bool), words.filter(bool), trees(), trees())
def test_normalized_kernels_bounded(a, b, t1, t2):
    for v in (ssk(a, b), ptk(t1, t2)):
        assert 0.0 <= v <= 1.0 + 1e-12
    assert ssk(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ptk(t1, t1) == pytest.approx(1.0, abs=1e-12)
    assert ssk(a, b) == pytest.approx(ssk(b, a), abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_gram_matrices_psd(seed):
    rng = np.random.default_rng(seed)
    seqs = [list(rng.choice(list("abcd"), size=rng.integers(1, 7))) for _ in range(8)]
    gram = np.array([[ssk(x, y) for y in seqs] for x in seqs])
    assert np.linalg.eigvalsh(gram).min() >= -1e-8


def test_similarity_dispatch():
    c = build_corpus([("the dog ran", "run ( dog )", None), ("the cat ran", "run ( cat )", None)],
                     "c", dialect="synth")
    assert similarity(c[0], c[1], KernelConfig("lev")) == -1.0
    assert similarity(c[0], c[1], KernelConfig("uniform")) == 0.0
    assert 0 < similarity(c[0], c[1], KernelConfig("ssk")) < 1
    with pytest.raises(ConfigError):
        similarity(c[0], c[1], KernelConfig("ptk"))


def test_kernel_config_validation():
    with pytest.raises(ConfigError):
        KernelConfig("cosine")
    with pytest.raises(ConfigError):
        KernelConfig("ssk", ssk_decay=0.0)
    with pytest.raises(ConfigError):
        KernelConfig("ssk", ssk_max_len=0)
    assert math.isclose(KernelConfig("ptk").ptk_mu, 1.0)
