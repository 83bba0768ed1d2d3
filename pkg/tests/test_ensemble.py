import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m3d.ensemble import (BaseEnsemble, agglomerative, consensus, consensus_average,
                          consensus_last, consensus_linkclue, consensus_vote, cts_similarity,
                          save_similarity_csv)
from oracles import cts_triples, naive_linkage

CTS_FIXTURE = np.array([[0, 0, 1, 1, 2, 2],
                        [0, 1, 1, 1, 0, 2]])

labelings = st.integers(1, 5).flatmap(
    lambda l: st.integers(2, 12).flatmap(
        lambda m: st.lists(st.lists(st.integers(0, 2), min_size=m, max_size=m),
                           min_size=l, max_size=l)))


def test_last_and_vote_basics():
    ens = BaseEnsemble([[0, 1, 2], [2, 1, 0]], 3)
    np.testing.assert_array_equal(consensus_last(ens), [2, 1, 0])
    np.testing.assert_array_equal(consensus_vote(BaseEnsemble([[0], [0], [1]], 2)), [0])
    # tie: the latest iteration's label wins among tied classes
    np.testing.assert_array_equal(consensus_vote(BaseEnsemble([[0], [1]], 2)), [1])
    np.testing.assert_array_equal(consensus_vote(BaseEnsemble([[0], [1], [2], [1], [0]], 3)), [0])


def test_average():
    ens = BaseEnsemble([[0], [1]], 2, np.array([[[0.6, 0.4]], [[0.2, 0.8]]]))
    np.testing.assert_array_equal(consensus_average(ens), [1])
    with pytest.raises(ValueError, match="scores"):
        consensus_average(BaseEnsemble([[0]], 2))


def test_validation():
    with pytest.raises(ValueError):
        BaseEnsemble([[0, 3]], 3)
    with pytest.raises(ValueError):
        BaseEnsemble([[0, 1]], 2, np.zeros((1, 2, 3)))


def test_identical_labelings_fixed_point():
    row = np.array([2, 0, 1, 1, 0, 2, 2, 1])
    ens = BaseEnsemble(np.tile(row, (4, 1)), 3, np.tile(np.eye(3)[row], (4, 1, 1)))
    for method in ("last", "averaging", "voting", "linkclue"):
        for linkage in ("single", "complete", "average"):
            np.testing.assert_array_equal(consensus(ens, method, linkage).labels, row)


def test_cts_matches_triple_oracle():
    ens = BaseEnsemble(CTS_FIXTURE, 3)
    for decay in (0.8, 0.5, 1.0):
        np.testing.assert_allclose(cts_similarity(ens, decay), cts_triples(CTS_FIXTURE, decay),
                                   rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(lab=labelings, decay=st.floats(0.05, 1.0))
def test_cts_properties(lab, decay):
    lab = np.array(lab)
    ens = BaseEnsemble(lab, 3)
    s = cts_similarity(ens, decay)
    np.testing.assert_allclose(s, s.T)
    assert np.all(np.diag(s) == 1.0) and s.min() >= 0 and s.max() <= 1 + 1e-12
    np.testing.assert_allclose(s, cts_triples(lab, decay), atol=1e-12)
    always = (lab[:, :, None] == lab[:, None, :]).all(axis=0)
    assert np.all(s[always] == 1.0)
    bigger = cts_similarity(ens, min(1.0, decay + 0.1))
    assert np.all(bigger >= s - 1e-15)


def test_agglomerative_trivial_cases():
    blocks = np.kron(np.eye(2), np.ones((3, 3)))
    for linkage in ("single", "complete", "average"):
        np.testing.assert_array_equal(agglomerative(blocks, linkage, 2), [0, 0, 0, 1, 1, 1])
        np.testing.assert_array_equal(agglomerative(blocks, linkage, 6), np.arange(6))
    with pytest.raises(ValueError):
        agglomerative(blocks, "single", 7)
    with pytest.raises(ValueError):
        agglomerative(blocks, "ward", 2)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("linkage", ["single", "complete", "average"])
def test_agglomerative_matches_naive(seed, linkage):
    rng = np.random.default_rng(seed)
    a = rng.random((8, 8))
    s = (a + a.T) / 2
    np.fill_diagonal(s, 1.0)
    for k in range(1, 9):
        np.testing.assert_array_equal(agglomerative(s, linkage, k), naive_linkage(s, linkage, k))


@pytest.mark.parametrize("linkage", ["single", "complete"])
def test_agglomerative_ties_match_naive(linkage):
    rng = np.random.default_rng(9)
    a = rng.integers(0, 4, (8, 8)) / 4.0
    s = np.triu(a, 1)
    s = s + s.T
    np.fill_diagonal(s, 1.0)
    for k in range(1, 9):
        np.testing.assert_array_equal(agglomerative(s, linkage, k), naive_linkage(s, linkage, k))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_single_complete_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((7, 7))
    s = (a + a.T) / 2
    np.fill_diagonal(s, 1.0)
    t = s**3
    for linkage in ("single", "complete"):
        np.testing.assert_array_equal(agglomerative(s, linkage, 3), agglomerative(t, linkage, 3))


def test_linkclue_permuted_copies():
    rng = np.random.default_rng(3)
    base = rng.integers(0, 3, 30)
    perms = list(itertools.permutations(range(3)))
    lab = np.stack([base] + [np.array(p)[base] for p in perms[1:3]])
    out = consensus_linkclue(BaseEnsemble(lab, 3))
    # every cluster coincides with a class of `base`; majority mapping picks the most voted label
    for c in range(3):
        members = base == c
        assert len(set(out[members])) == 1
        votes = np.bincount(lab[:, members].ravel(), minlength=3)
        assert out[members][0] == np.argmax(votes)


def test_linkclue_pattern_reduction_matches_full_matrix():
    # clustering distinct label vectors must agree with clustering every sample
    rng = np.random.default_rng(4)
    for _ in range(20):
        lab = rng.integers(0, 3, (4, 25))
        # sort samples by label vector so index tie-breaking matches the pattern order
        lab = lab[:, np.lexsort(lab[::-1])]
        ens = BaseEnsemble(lab, 3)
        s = cts_similarity(ens)
        for linkage in ("single", "complete", "average"):
            k = min(3, len({tuple(c) for c in lab.T}))
            full = agglomerative(s, linkage, k)
            reduced = consensus_linkclue(ens, linkage=linkage)
            for c in np.unique(full):
                assert len(set(reduced[full == c])) == 1


@settings(max_examples=80, deadline=None)
@given(lab=labelings, seed=st.integers(0, 1000))
def test_permutation_equivariance(lab, seed):
    lab = np.array(lab)
    perm = np.random.default_rng(seed).permutation(lab.shape[1])
    scores = np.eye(3)[lab]
    ens = BaseEnsemble(lab, 3, scores)
    pens = BaseEnsemble(lab[:, perm], 3, scores[:, perm])
    for method in ("last", "averaging", "voting", "linkclue"):
        for linkage in ("single", "complete", "average"):
            np.testing.assert_array_equal(consensus(ens, method, linkage).labels[perm],
                                          consensus(pens, method, linkage).labels)
    np.testing.assert_allclose(cts_similarity(ens)[np.ix_(perm, perm)], cts_similarity(pens))


@settings(max_examples=30, deadline=None)
@given(row=st.lists(st.integers(0, 2), min_size=1, max_size=15))
def test_vote_single_labeling_is_last(row):
    ens = BaseEnsemble([row], 3)
    np.testing.assert_array_equal(consensus_vote(ens), consensus_last(ens))


def test_similarity_csv(tmp_path):
    s = cts_similarity(BaseEnsemble(CTS_FIXTURE, 3))
    save_similarity_csv(s, tmp_path / "s.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "s.csv", delimiter=","), s)
