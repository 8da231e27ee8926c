import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import max_rel_error, numeric_grad, random_instance
from zdesuc.net import LayerParams, NetworkParams, backward, hidden_forward, init_params, nll_loss
from zdesuc.text import Vocabulary
from zdesuc.zsl import (
    KnowledgeBase,
    batch_entropy,
    build_class_set,
    classify_zero_shot,
    conditional_entropy,
    embed,
    entropy_and_grad,
    log_posterior,
    posterior_features,
    posterior_from_embeddings,
    representative_url_posterior,
    row_entropy,
    zde_gradient,
    zde_loss,
    zsl_posterior,
)


def scalar_posterior(e, cs):
    """Direct evaluation: exp(-|e - c_i|) / sum_j exp(-|e - c_j|), euclidean."""
    w = [math.exp(-math.sqrt(sum((a - b) ** 2 for a, b in zip(e, c)))) for c in cs]
    z = sum(w)
    return [v / z for v in w]


def identity_kb(words, scale=1.0, n_out=2):
    """KB whose embedding of word i is scale * e_i."""
    V = len(words)
    vocab = Vocabulary({w: i for i, w in enumerate(words)})
    params = NetworkParams([
        LayerParams(scale * np.eye(V), np.zeros(V)),
        LayerParams(np.zeros((n_out, V)), np.zeros(n_out)),
    ])
    return KnowledgeBase(params, vocab)


def test_equidistant_classes_split_evenly():
    P = posterior_from_embeddings([[0.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(P, [[0.5, 0.5]], atol=1e-15)


def test_posterior_matches_scalar_evaluation():
    P = posterior_from_embeddings([[0.0, 0.0]], [[0.0, 0.0], [3.0, 4.0]])[0]
    expected = [1 / (1 + math.exp(-5)), math.exp(-5) / (1 + math.exp(-5))]
    np.testing.assert_allclose(P, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(P, [0.9933071490757153, 0.0066928509242848554], atol=1e-12)


vec = st.lists(st.floats(-20, 20), min_size=3, max_size=3)


@given(vec, st.lists(vec, min_size=2, max_size=6))
def test_posterior_scalar_oracle_property(e, cs):
    P = posterior_from_embeddings([e], cs)[0]
    np.testing.assert_allclose(P, scalar_posterior(e, cs), rtol=0, atol=1e-9)
    assert abs(P.sum() - 1) < 1e-9


@given(vec, st.lists(vec, min_size=2, max_size=6), vec)
def test_posterior_translation_invariant(e, cs, shift):
    a = posterior_from_embeddings([e], cs)
    b = posterior_from_embeddings([np.add(e, shift)], np.add(cs, shift))
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_posterior_monotone_in_distance():
    e = np.zeros((1, 2))
    C = np.array([[3.0, 0.0], [0.0, 2.0], [-1.0, -1.0]])
    p0 = posterior_from_embeddings(e, C)[0, 0]
    C2 = C.copy()
    C2[0] = [2.5, 0.0]
    assert posterior_from_embeddings(e, C2)[0, 0] > p0


def test_cosine_metric():
    P = posterior_from_embeddings([[1.0, 0.0]], [[2.0, 0.0], [0.0, 5.0]], metric="cosine")[0]
    np.testing.assert_allclose(P, [1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))])
    with pytest.raises(ValueError):
        posterior_from_embeddings([[1.0]], [[1.0]], metric="manhattan")


def test_empty_class_set():
    with pytest.raises(ValueError):
        log_posterior(np.zeros((1, 2)), np.zeros((0, 2)))


def test_kb_requires_hidden_layer():
    vocab = Vocabulary({"a": 0, "b": 1})
    with pytest.raises(ValueError, match="no embedding layer"):
        KnowledgeBase(init_params([2, 3], 0), vocab)


def test_embed_deterministic_and_zero_params():
    vocab = Vocabulary({"a": 0, "b": 1, "c": 2})
    kb = KnowledgeBase(init_params([3, 4, 2], 1), vocab)
    assert embed(kb, "a b").tobytes() == embed(kb, "a b").tobytes()
    assert embed(kb, "zzz").shape == (4,)
    kb0 = KnowledgeBase(init_params([3, 4, 2], 1).scaled(0.0), vocab)
    assert (embed(kb0, "a b c") == 0).all()


def test_class_set_rows_are_embeddings():
    kb = identity_kb(["hotel", "flight", "cheap"], scale=2.0)
    cs = build_class_set(kb, ["hotel", "flight"])
    np.testing.assert_array_equal(cs.embeddings[1], embed(kb, "flight"))
    with pytest.raises(ValueError, match="out of vocabulary"):
        build_class_set(kb, ["hotel", "ground transportation"])


def test_classify_picks_nearest_and_breaks_ties_low():
    kb = identity_kb(["hotel", "flight", "cheap"], scale=3.0)
    cs = build_class_set(kb, ["hotel", "flight"])
    assert classify_zero_shot(kb, "hotel hotel", cs) == 0
    assert classify_zero_shot(kb, "flight cheap", cs) == 1
    # equidistant from both names
    np.testing.assert_allclose(zsl_posterior(kb, "cheap", cs), [0.5, 0.5])
    assert classify_zero_shot(kb, "cheap", cs) == 0


@given(st.lists(st.integers(0, 500), min_size=2, max_size=8, unique=True))
def test_argmax_invariant_to_monotone_distance_transform(d):
    d = np.array(d) / 10.0
    a = np.argmax(np.exp(-d) / np.exp(-d).sum())
    t = np.exp(0.3 * d) + d**3
    assert np.argmax(np.exp(-t - np.max(-t))) == a == np.argmin(d)


def test_uniform_posterior_entropy_is_ln_m():
    words = [f"c{i}" for i in range(25)]
    vocab = Vocabulary({w: i for i, w in enumerate(words)})
    kb = KnowledgeBase(init_params([25, 3, 2], 0).scaled(0.0), vocab)
    cs = build_class_set(kb, words)
    H = conditional_entropy(kb, ["c1 c2", "c3"], cs)
    assert H == pytest.approx(math.log(25), abs=1e-9)
    assert H == pytest.approx(3.2189, abs=1e-4)


def test_one_hot_entropy_near_zero():
    kb = identity_kb(["a", "b"], scale=100.0)
    cs = build_class_set(kb, ["a", "b"])
    assert conditional_entropy(kb, ["a", "b b"], cs) < 1e-6


def test_entropy_is_batch_mean():
    kb = identity_kb(["a", "b", "c"], scale=1.0)
    cs = build_class_set(kb, ["a", "b"])
    ha = conditional_entropy(kb, ["a c"], cs)
    hb = conditional_entropy(kb, ["c c b"], cs)
    assert conditional_entropy(kb, ["a c", "c c b"], cs) == pytest.approx((ha + hb) / 2, rel=1e-14)
    with pytest.raises(ValueError):
        conditional_entropy(kb, [], cs)


@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_entropy_bounds(seed, M):
    rng = np.random.default_rng(seed)
    E = rng.normal(0, 3, (10, 4))
    C = rng.normal(0, 3, (M, 4))
    h = row_entropy(log_posterior(E, C))
    assert (h >= -1e-12).all() and (h <= math.log(M) + 1e-12).all()


def test_zde_loss_lambda_zero_and_affine():
    params, X, y, bags = random_instance(4)
    assert zde_loss(params, X, y, bags, 0.0) == nll_loss(params, X, y)
    H = batch_entropy(params, X, bags)
    for lam in (0.01, 0.5, 2.0):
        assert zde_loss(params, X, y, bags, lam) == pytest.approx(nll_loss(params, X, y) + lam * H, rel=1e-13)
    with pytest.raises(ValueError):
        zde_loss(params, X, y, bags, -1.0)


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
@given(seed=st.integers(0, 10_000), lam=st.sampled_from([0.001, 0.01, 0.1, 1.0]))
@settings(max_examples=20, deadline=None)
def test_zde_gradient_matches_finite_differences(metric, seed, lam):
    params, X, y, bags = random_instance(seed, metric)
    g = zde_gradient(params, X, y, bags, lam, metric).flat()
    num = numeric_grad(lambda p: zde_loss(p, X, y, bags, lam, metric), params)
    assert max_rel_error(g, num) < 1e-4


def test_zde_gradient_lambda_zero_is_plain_backprop():
    params, X, y, bags = random_instance(8)
    a = zde_gradient(params, X, y, bags, 0.0).flat()
    b = backward(params, X, y, lam=0.0).flat()
    assert a.tobytes() == b.tobytes()


def test_class_name_path_contributes_to_gradient():
    # treating K(C_i) as constants gives a measurably different gradient
    params, X, y, bags = random_instance(21)
    C0 = hidden_forward(params, bags)[1][-1]

    def frozen(p):
        E = hidden_forward(p, X)[1][-1]
        return nll_loss(p, X, y) + 0.5 * float(row_entropy(log_posterior(E, C0)).mean())

    g = zde_gradient(params, X, y, bags, 0.5).flat()
    assert max_rel_error(g, numeric_grad(frozen, params)) > 1e-2


def test_entropy_gradient_vanishes_at_zero_params():
    params = init_params([4, 3, 3, 2], 0).scaled(0.0)
    X = np.eye(4)
    bags = np.eye(4)[:3]
    g = zde_gradient(params, X, [0, 1, 0, 1], bags, 0.1).flat()
    g0 = zde_gradient(params, X, [0, 1, 0, 1], bags, 0.0).flat()
    np.testing.assert_array_equal(g, g0)


def test_posterior_features_normalized():
    rng = np.random.default_rng(0)
    for sizes in ([5, 3], [5, 4, 3]):
        p = init_params(sizes, 1)
        F = posterior_features(p, rng.integers(0, 3, (6, 5)).astype(float))
        np.testing.assert_allclose(F.sum(axis=1), 1.0, atol=1e-9)


def test_representative_url_renormalizes():
    # softmax over zero inputs reproduces the bias distribution (0.3, 0.1, 0.6)
    p = NetworkParams([LayerParams(np.zeros((3, 2)), np.log([0.3, 0.1, 0.6]))])
    P = representative_url_posterior(p, np.zeros(2), [0, 1])
    np.testing.assert_allclose(P, [0.75, 0.25], atol=1e-12)
    p1 = NetworkParams([LayerParams(np.zeros((3, 2)), [40.0, 0.0, 0.0])])
    P1 = representative_url_posterior(p1, np.zeros(2), [0, 2])
    assert P1[0] > 1 - 1e-12 and abs(P1.sum() - 1) < 1e-9
    with pytest.raises(ValueError):
        representative_url_posterior(p, np.zeros(2), [0, 3])
    with pytest.raises(ValueError):
        representative_url_posterior(p, np.zeros(2), [1, 1])
