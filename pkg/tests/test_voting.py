import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from austkit import voting
from austkit.tensor import ShapeError, Tensor, tsum

from helpers import cosine, gradcheck, vote_loops


def test_constant_features_give_all_ones():
    v = voting.style_similarity_matrix(Tensor(np.full((1, 4, 3, 3), 2.5))).data
    np.testing.assert_allclose(v, 1.0, atol=1e-15)


def test_orthogonal_two_pixel_map():
    f = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 2, 1, 2)
    np.testing.assert_allclose(voting.style_similarity_matrix(Tensor(f)).data[0], np.eye(2), atol=1e-15)


def test_similarity_matches_pair_loop():
    f = np.random.default_rng(0).normal(size=(1, 5, 3, 3))
    v = voting.style_similarity_matrix(Tensor(f)).data[0]
    rows = f[0].reshape(5, -1).T
    ref = np.array([[cosine(a, b) for b in rows] for a in rows])
    np.testing.assert_allclose(v, ref, atol=1e-9)
    np.testing.assert_allclose(v, v.T, atol=1e-15)
    np.testing.assert_allclose(np.diag(v), 1.0, atol=1e-12)


def test_no_voters_zero_score():
    v = voting.style_similarity_matrix(Tensor(np.random.default_rng(1).normal(size=(1, 3, 2, 2))))
    assert np.all(voting.vote(v, np.ones((1, 1, 2, 2))).data == 0.0)


def test_all_voters_all_ones_gives_n():
    s = voting.vote(Tensor(np.ones((1, 9, 9))), np.zeros((1, 1, 3, 3)))
    np.testing.assert_array_equal(s.data, 9.0)


def test_random_vote_with_semantics_matches_loop():
    rng = np.random.default_rng(2)
    v, m, sem = rng.uniform(-1, 1, (16, 16)), rng.random((4, 4)), rng.uniform(-1, 1, (16, 16))
    s = voting.vote(Tensor(v[None]), m[None, None], Tensor(sem[None])).data.ravel()
    np.testing.assert_allclose(s, vote_loops(v, m, sem), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 64), seed=st.integers(0, 2 ** 20))
def test_zero_mask_is_row_sum(n, seed):
    v = np.random.default_rng(seed).uniform(-1, 1, (1, n, n))
    s = voting.vote(Tensor(v), np.zeros((1, 1, 1, n))).data.ravel()
    np.testing.assert_allclose(s, v[0].sum(axis=1), atol=1e-12)


def test_unit_semantics_reduce_exactly():
    rng = np.random.default_rng(3)
    v, m = Tensor(rng.uniform(-1, 1, (2, 9, 9))), rng.random((2, 1, 3, 3))
    assert np.array_equal(voting.vote(v, m, Tensor(np.ones((2, 9, 9)))).data, voting.vote(v, m).data)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        voting.vote(Tensor(np.ones((1, 4, 4))), np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        voting.vote(Tensor(np.ones((1, 4, 4))), np.zeros((1, 1, 2, 2)), Tensor(np.ones((1, 3, 3))))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 20), pix=st.integers(0, 8), bump=st.floats(0.0, 1.0))
def test_raising_a_voter_mask_never_raises_scores(seed, pix, bump):
    rng = np.random.default_rng(seed)
    v, sem, m = rng.random((1, 9, 9)), rng.random((1, 9, 9)), rng.random((1, 1, 3, 3))
    m2 = m.copy()
    m2.flat[pix] = m.flat[pix] + bump * (1 - m.flat[pix])
    before = voting.vote(Tensor(v), m, Tensor(sem)).data
    after = voting.vote(Tensor(v), m2, Tensor(sem)).data
    assert np.all(after <= before + 1e-12)


def test_score_bounded_by_voter_mass():
    rng = np.random.default_rng(4)
    f, m = rng.normal(size=(1, 4, 4, 4)), rng.random((1, 1, 4, 4))
    s = voting.vote(voting.style_similarity_matrix(Tensor(f)), m).data
    assert np.all(np.abs(s) <= (1 - m).sum() + 1e-12)


def test_normalization_examples():
    s = voting.vote(Tensor(np.ones((1, 4, 4))), np.full((1, 1, 2, 2), 0.3))
    np.testing.assert_allclose(voting.normalize_score_map(s, np.full((1, 1, 2, 2), 0.3)).data, 1.0)
    ones = np.ones((1, 1, 2, 2))
    assert np.all(voting.normalize_score_map(voting.vote(Tensor(np.ones((1, 4, 4))), ones), ones).data == 0.0)
    rng = np.random.default_rng(5)
    v, m = rng.uniform(-1, 1, (1, 9, 9)), rng.random((1, 1, 3, 3))
    raw = voting.vote(Tensor(v), m).data
    np.testing.assert_allclose(voting.normalize_score_map(raw, m).data, raw / (1 - m).sum(), atol=1e-15)


def test_two_cluster_harmonious_pixels_score_higher():
    # harmonious majority styled +e1, inharmonious pixels -e1; aux mask matches the regions
    m = np.zeros((4, 4))
    m[1:3, 1:3] = 1.0
    f = np.where(m[None] > 0.5, -1.0, 1.0) * np.eye(3)[0][:, None, None]
    v = voting.style_similarity_matrix(Tensor(f[None]))
    s = voting.normalize_score_map(voting.vote(v, m[None, None]), m[None, None]).data[0, 0]
    assert s[m == 0].min() > s[m == 1].max()


def test_one_hot_semantics():
    labels = np.zeros((1, 16, 16), dtype=int)
    labels[0, :8, :8] = 2
    labels[0, 8:, 8:] = 2
    feats = voting.one_hot_semantics(labels, 4, 8)
    w = voting.semantic_similarity_matrix(feats)[0]
    assert w[0, 3] == pytest.approx(1.0) and w[0, 1] == 0.0 and w[1, 2] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        voting.one_hot_semantics(labels + 4, 4, 8)


def test_smoothed_semantics_match_pair_loop():
    f = np.random.default_rng(6).random((1, 5, 3, 3))
    w = voting.semantic_similarity_matrix(f)[0]
    rows = f[0].reshape(5, -1).T
    np.testing.assert_allclose(w, [[cosine(a, b) for b in rows] for a in rows], atol=1e-12)
    assert np.all(np.abs(w) <= 1 + 1e-12)


def test_vote_gradients():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        sem = Tensor(rng.random((1, 9, 9)))
        probe = Tensor(rng.normal(size=(1, 1, 3, 3)))

        def f(feat, m):
            v = voting.style_similarity_matrix(feat)
            s = voting.normalize_score_map(voting.vote(v, m, sem), m)
            return tsum(s * probe)

        assert gradcheck(f, [rng.normal(size=(1, 4, 3, 3)), rng.random((1, 1, 3, 3))]) < 1e-6
