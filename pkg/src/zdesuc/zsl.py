"""Zero-shot classification in a learned semantic space.

The knowledge base maps any text to the last hidden layer of a network
trained on query-click logs.  Utterances and class names are embedded by the
same map and matched with a softmax over negative distances.  The entropy of
that zero-shot posterior needs no labels, so it can be added to the click-log
objective as a regularizer (ZDE).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .net import (
    ForwardTrace,
    NetworkParams,
    as_batch,
    backprop,
    forward,
    hidden_forward,
    log_softmax,
    nll_backward,
    nll_from_trace,
)
from .text import BowVector, Vocabulary, bow_matrix, featurize, tokenize

METRICS = ("euclidean", "cosine")
_EPS = 1e-12


# -- embedding-space math -----------------------------------------------------

def distances(E: np.ndarray, C: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """(N, M) distances between embeddings E (N, d) and class embeddings C (M, d)."""
    E = np.atleast_2d(np.asarray(E, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if metric == "euclidean":
        diff = E[:, None, :] - C[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))
    if metric == "cosine":
        ne = np.maximum(np.linalg.norm(E, axis=1), _EPS)
        nc = np.maximum(np.linalg.norm(C, axis=1), _EPS)
        return 1.0 - (E @ C.T) / (ne[:, None] * nc[None, :])
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def log_posterior(E: np.ndarray, C: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """log P(C_i | x) = -dist_i - log sum_j exp(-dist_j), row-wise."""
    C = np.atleast_2d(C)
    if C.shape[0] == 0:
        raise ValueError("empty class set")
    return log_softmax(-distances(E, C, metric))


def posterior_from_embeddings(E, C, metric: str = "euclidean") -> np.ndarray:
    return np.exp(log_posterior(E, C, metric))


def row_entropy(log_p: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row given its log-probabilities."""
    return -(np.exp(log_p) * log_p).sum(axis=-1)


def entropy_and_grad(E: np.ndarray, C: np.ndarray, metric: str = "euclidean"):
    """Mean posterior entropy over the rows of E, with gradients w.r.t. E and C."""
    E = np.atleast_2d(np.asarray(E, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    n = E.shape[0]
    log_p = log_posterior(E, C, metric)
    p = np.exp(log_p)
    h = -(p * log_p).sum(axis=1)
    # dH/ds for s = -dist, averaged over the batch
    G = -p * (log_p + h[:, None]) / n
    if metric == "euclidean":
        diff = E[:, None, :] - C[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=-1))
        inv = np.divide(1.0, dist, out=np.zeros_like(dist), where=dist > 0)
        unit = diff * inv[:, :, None]
        dE = -np.einsum("nm,nmd->nd", G, unit)
        dC = np.einsum("nm,nmd->md", G, unit)
    elif metric == "cosine":
        ne = np.maximum(np.linalg.norm(E, axis=1), _EPS)
        nc = np.maximum(np.linalg.norm(C, axis=1), _EPS)
        scale = 1.0 / (ne[:, None] * nc[None, :])
        cos = (E @ C.T) * scale
        Gc = G * cos
        dE = (G * scale) @ C - Gc.sum(axis=1)[:, None] * E / (ne**2)[:, None]
        dC = (G * scale).T @ E - Gc.sum(axis=0)[:, None] * C / (nc**2)[:, None]
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(h.mean()), dE, dC


# -- knowledge base -----------------------------------------------------------

@dataclass(frozen=True)
class KnowledgeBase:
    """K(text) = last hidden layer of a click-log network, no dropout."""

    params: NetworkParams
    vocab: Vocabulary
    binary_bow: bool = False
    input_norm: str = "none"

    def __post_init__(self):
        if self.params.n_hidden < 1:
            raise ValueError("no embedding layer: the network has no hidden layer")
        if self.params.layer_sizes[0] != self.vocab.size:
            raise ValueError("network input size does not match the vocabulary")

    @property
    def embed_dim(self) -> int:
        return self.params.layer_sizes[-2]

    def bags(self, texts: Sequence[str]) -> np.ndarray:
        return bow_matrix(texts, self.vocab, self.binary_bow, self.input_norm)

    def embed_bags(self, X: np.ndarray) -> np.ndarray:
        _, hidden, _ = hidden_forward(self.params, as_batch(X, self.vocab.size))
        return hidden[-1]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        return self.embed_bags(self.bags(texts))


def embed(kb: KnowledgeBase, text: str) -> np.ndarray:
    return kb.embed_many([text])[0]


@dataclass(frozen=True)
class ClassSet:
    names: tuple[str, ...]
    embeddings: np.ndarray   # (M, d), row i = K(names[i])
    bags: np.ndarray         # (M, V) bag-of-words of the names

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


def class_bags(names: Sequence[str], vocab: Vocabulary, binary: bool = False, norm: str = "none") -> np.ndarray:
    """Bag-of-words rows for class names; every non-stop token must be known."""
    if not names:
        raise ValueError("empty class set")
    for name in names:
        missing = [t for t in tokenize(name) if t not in vocab and t not in vocab.stop_words]
        if missing or not featurize(name, vocab):
            raise ValueError(f"class name {name!r} is out of vocabulary ({missing or 'no known words'})")
    return bow_matrix(list(names), vocab, binary, norm)


def build_class_set(kb: KnowledgeBase, names: Sequence[str]) -> ClassSet:
    if len(set(names)) != len(names):
        raise ValueError("duplicate class names")
    bags = class_bags(names, kb.vocab, kb.binary_bow, kb.input_norm)
    return ClassSet(tuple(names), kb.embed_bags(bags), bags)


def load_class_names(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    return [l.strip() for l in lines if l.strip()]


def load_class_urls(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"class-url file line {lineno}: expected 'class_name<TAB>url'")
        out[parts[0].strip()] = parts[1].strip()
    return out


# -- zero-shot classifier ------------------------------------------------------

def zsl_posterior(kb: KnowledgeBase, x: str, classes: ClassSet, metric: str = "euclidean") -> np.ndarray:
    """P(C_i | x) proportional to exp(-dist(K(x), K(C_i)))."""
    if classes.size == 0:
        raise ValueError("empty class set")
    return posterior_from_embeddings(embed(kb, x)[None, :], classes.embeddings, metric)[0]


def zsl_posteriors(kb: KnowledgeBase, texts: Sequence[str], classes: ClassSet, metric: str = "euclidean") -> np.ndarray:
    return posterior_from_embeddings(kb.embed_many(texts), classes.embeddings, metric)


def classify_zero_shot(kb: KnowledgeBase, x: str, classes: ClassSet, metric: str = "euclidean") -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(zsl_posterior(kb, x, classes, metric)))


def conditional_entropy(kb: KnowledgeBase, texts: Sequence[str], classes: ClassSet, metric: str = "euclidean") -> float:
    """Mean entropy of the zero-shot posterior over ``texts``."""
    if len(texts) == 0:
        raise ValueError("empty batch")
    return float(row_entropy(log_posterior(kb.embed_many(texts), classes.embeddings, metric)).mean())


# -- ZDE objective --------------------------------------------------------------

def _class_trace(params: NetworkParams, bags: np.ndarray) -> ForwardTrace:
    pre, hidden, masks = hidden_forward(params, bags)
    empty = np.zeros((bags.shape[0], 0))
    return ForwardTrace(bags, pre, hidden, masks, empty, empty)


def batch_entropy(params: NetworkParams, X, bags: np.ndarray, metric: str = "euclidean") -> float:
    """Conditional entropy of the zero-shot posterior for a batch of bag rows."""
    _, hq, _ = hidden_forward(params, as_batch(X, params.layer_sizes[0]))
    _, hc, _ = hidden_forward(params, bags)
    return float(row_entropy(log_posterior(hq[-1], hc[-1], metric)).mean())


def zde_terms(params: NetworkParams, trace: ForwardTrace, y, bags: np.ndarray, lam: float, metric: str = "euclidean"):
    """(nll, entropy, gradient) of nll + lam * entropy for an existing trace.

    The class-name embeddings are recomputed from ``bags`` with the current
    parameters, so the entropy gradient reaches the hidden layers through
    both the query path and the class-name path.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    nll = nll_from_trace(trace, y)
    if params.n_hidden < 1:
        raise ValueError("no embedding layer: the network has no hidden layer")
    ctrace = _class_trace(params, bags)
    ent, dE, dC = entropy_and_grad(trace.last_hidden, ctrace.last_hidden, metric)
    grads = nll_backward(params, trace, y)
    if lam > 0:
        grads = grads + backprop(params, trace, None, lam * dE)
        grads = grads + backprop(params, ctrace, None, lam * dC)
    return nll, ent, grads


def zde_loss(params: NetworkParams, X, y, bags: np.ndarray, lam: float, metric: str = "euclidean") -> float:
    """-log P(Y|X) + lam * H(P(C|X)), both averaged over the same batch."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    trace = forward(params, X)
    nll = nll_from_trace(trace, y)
    if lam == 0:
        return nll
    return nll + lam * batch_entropy(params, trace.inputs, bags, metric)


def zde_gradient(params: NetworkParams, X, y, bags: np.ndarray, lam: float, metric: str = "euclidean") -> NetworkParams:
    trace = forward(params, X)
    if lam == 0:
        return nll_backward(params, trace, y)
    return zde_terms(params, trace, y, bags, lam, metric)[2]


# -- baseline semantic features ---------------------------------------------------

def posterior_features(params: NetworkParams, x) -> np.ndarray:
    """P(Y|x) over URLs; with no hidden layer this is logistic regression."""
    return forward(params, x).probs


def representative_url_posterior(params: NetworkParams, x, class_to_url: Sequence[int]) -> np.ndarray:
    """P(C_i|x) = P(Y = url_i | x), renormalized over the selected URLs."""
    urls = np.asarray(class_to_url, dtype=np.int64)
    n_out = params.layer_sizes[-1]
    if urls.size == 0:
        raise ValueError("empty class set")
    if urls.min() < 0 or urls.max() >= n_out:
        raise ValueError(f"unknown URL index; network has {n_out} URLs")
    if len(set(urls.tolist())) != urls.size:
        raise ValueError("class-to-URL map must be injective")
    single = isinstance(x, BowVector) or np.ndim(x) == 1
    P = np.exp(log_softmax(forward(params, x).log_probs[:, urls]))
    return P[0] if single else P


FeatureFn = Callable[[np.ndarray], np.ndarray]


def feature_map(kind: str, params: NetworkParams | None = None) -> FeatureFn:
    """Semantic feature map over bag rows: 'bow', 'posterior' or 'embedding'."""
    if kind == "bow":
        return lambda X: np.asarray(X, dtype=np.float64)
    if params is None:
        raise ValueError(f"feature {kind!r} needs network parameters")
    if kind == "posterior":
        return lambda X: forward(params, X).probs
    if kind == "embedding":
        if params.n_hidden < 1:
            raise ValueError("no embedding layer: the network has no hidden layer")
        return lambda X: hidden_forward(params, as_batch(X, params.layer_sizes[0]))[1][-1]
    raise ValueError(f"unknown feature kind {kind!r}")


def zsl_scores(features: FeatureFn, X: np.ndarray, bags: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Zero-shot posterior (N, M) using any feature map for inputs and class names."""
    return posterior_from_embeddings(features(X), features(bags), metric)


def url_indices_for_classes(names: Sequence[str], class_urls: Mapping[str, str], url_index: Mapping[str, int]) -> list[int]:
    out = []
    for name in names:
        if name not in class_urls:
            raise ValueError(f"no representative URL for class {name!r}")
        url = class_urls[name]
        if url not in url_index:
            raise ValueError(f"representative URL {url!r} is not a known label")
        out.append(url_index[url])
    return out
