import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zdesuc.text import (
    BowVector,
    EmptyVocabularyError,
    Vocabulary,
    bow_matrix,
    build_vocabulary,
    featurize,
    load_stop_words,
    normalize_rows,
    save_stop_words,
    tokenize,
)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Flights to NYC", ["flights", "to", "nyc"]),
        ("", []),
        ("  san   francisco ", ["san", "francisco"]),
        ("cheap-flights,to:SFO!", ["cheap", "flights", "to", "sfo"]),
        ("a_b", ["a", "b"]),
    ],
)
def test_tokenize(text, expected):
    assert tokenize(text) == expected


def test_build_vocabulary_frequency_order():
    v = build_vocabulary(["a b b", "b c"], {"a"}, 10)
    assert dict(v.word_to_index) == {"b": 0, "c": 1}
    assert "a" in v.stop_words


def test_build_vocabulary_tie_break_is_lexicographic():
    v = build_vocabulary(["x y"], set(), 1)
    assert dict(v.word_to_index) == {"x": 0}
    v = build_vocabulary(["z y x x"], set(), 10)
    assert v.words() == ["x", "y", "z"]


def test_build_vocabulary_errors():
    with pytest.raises(EmptyVocabularyError):
        build_vocabulary(["stop stop"], {"stop"}, 10)
    with pytest.raises(ValueError, match="empty corpus"):
        build_vocabulary([], set(), 10)


def test_build_vocabulary_deterministic_and_capped():
    rnd = random.Random(3)
    corpus = [" ".join(rnd.choice("abcdefghij") for _ in range(6)) for _ in range(50)]
    v1 = build_vocabulary(corpus, {"a"}, 5)
    v2 = build_vocabulary(list(corpus), {"a"}, 5)
    assert v1.dumps() == v2.dumps()
    assert v1.size <= 5
    assert "a" not in v1


def test_vocabulary_rejects_bad_indices():
    with pytest.raises(ValueError):
        Vocabulary({"a": 0, "b": 2})
    with pytest.raises(ValueError):
        Vocabulary({"a": 0}, frozenset({"a"}))


def test_featurize_examples():
    v = Vocabulary({"b": 0, "c": 1})
    assert dict(featurize("b b c", v).counts) == {0: 2, 1: 1}
    assert dict(featurize("zzz", v).counts) == {}
    assert not featurize("zzz", v)
    assert dict(featurize("b b c", v, binary=True).counts) == {0: 1, 1: 1}


def test_class_names_featurize_like_queries():
    words = [f"w{i}" for i in range(7)] + ["restaurant"]
    v = Vocabulary({w: i for i, w in enumerate(words)})
    assert dict(featurize("restaurant", v).counts) == {7: 1}


words = st.sampled_from(["b", "c", "d", "zz", "the"])


@given(st.lists(words, max_size=12), st.randoms())
def test_featurize_permutation_invariant(tokens, rnd):
    v = Vocabulary({"b": 0, "c": 1, "d": 2}, frozenset({"the"}))
    shuffled = list(tokens)
    rnd.shuffle(shuffled)
    assert featurize(" ".join(tokens), v) == featurize(" ".join(shuffled), v)


@given(st.lists(words, max_size=8), st.lists(words, max_size=8))
def test_featurize_additive(t1, t2):
    v = Vocabulary({"b": 0, "c": 1, "d": 2})
    joined = featurize(" ".join(t1 + t2), v)
    summed = featurize(" ".join(t1), v) + featurize(" ".join(t2), v)
    np.testing.assert_array_equal(joined.dense(), summed.dense())


def test_bow_matrix_matches_featurize():
    v = build_vocabulary(["a b c d", "a a b"], set(), 10)
    texts = ["a a d", "q", "b c c"]
    X = bow_matrix(texts, v)
    for row, t in zip(X, texts):
        np.testing.assert_array_equal(row, featurize(t, v).dense())
    assert BowVector(3, {}).dense().tolist() == [0, 0, 0]


def test_vocabulary_file_round_trip(tmp_path):
    v = build_vocabulary(["flights to nyc", "cheap flights", "hotel nyc"], {"to"}, 10)
    p = tmp_path / "vocab.txt"
    v.save(p)
    raw = p.read_bytes()
    assert raw.startswith(b"V=4\nflights\t0\n")
    v2 = Vocabulary.load(p)
    assert dict(v2.word_to_index) == dict(v.word_to_index)
    v2.save(tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == raw
    assert v2.digest() == v.digest()


@pytest.mark.parametrize("bad", ["", "V=2\na\t0\n", "a\t0\n", "V=1\na 0\n"])
def test_vocabulary_file_malformed(bad):
    with pytest.raises(ValueError):
        Vocabulary.loads(bad)


def test_stop_word_file(tmp_path):
    p = tmp_path / "stop.txt"
    save_stop_words({"the", "a", "to"}, p)
    assert load_stop_words(p) == {"the", "a", "to"}


def test_normalize_rows():
    X = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 2.0]])
    np.testing.assert_allclose(normalize_rows(X, "l2")[0], [0.6, 0.8, 0.0])
    np.testing.assert_allclose(normalize_rows(X, "l1")[2], [0.25, 0.25, 0.5])
    assert (normalize_rows(X, "l2")[1] == 0).all()
    assert normalize_rows(X, "none") is X
    with pytest.raises(ValueError):
        normalize_rows(X, "max")


@given(st.lists(st.sampled_from(["a", "b", "c", "zz"]), min_size=1, max_size=12))
def test_l2_rows_are_unit_or_empty(tokens):
    vocab = Vocabulary({"a": 0, "b": 1, "c": 2})
    x = bow_matrix([" ".join(tokens)], vocab, norm="l2")[0]
    n = np.linalg.norm(x)
    assert n == 0.0 or abs(n - 1.0) < 1e-12
