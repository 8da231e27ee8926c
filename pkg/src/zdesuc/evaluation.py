"""Evaluation: AUC-PR, error rate, neighbours, embedding export, linear baselines."""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .net import NetworkParams, forward
from .text import BowVector, Vocabulary, bow_matrix
from .training import TrainConfig, train
from .zsl import (
    KnowledgeBase,
    ClassSet,
    distances,
    feature_map,
    representative_url_posterior,
    zsl_posteriors,
    zsl_scores,
    class_bags,
)

FEATURE_KINDS = ("bow", "posterior", "embedding", "augmented")


def auc_pr(scores, labels) -> float:
    """Area under the precision-recall curve, step interpolation.

    Thresholds sit at every distinct score (tied scores form one step); the
    area is sum(precision_k * (recall_k - recall_{k-1})), accumulated in exact
    rationals and rounded once.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("AUC needs at least one positive and one negative label")
    if not np.isfinite(s).all():
        raise ValueError("non-finite score")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_group]
    n_pred = (np.nonzero(last_of_group)[0] + 1)
    d_tp = np.diff(np.r_[0, tp])
    area = sum((Fraction(int(t), int(k)) * int(d) for t, k, d in zip(tp, n_pred, d_tp) if d), Fraction(0))
    return float(area / n_pos)


def error_rate(predictions, truth) -> float:
    p = np.asarray(predictions).ravel()
    t = np.asarray(truth).ravel()
    if p.shape != t.shape:
        raise ValueError("predictions and truth differ in length")
    if p.size == 0:
        raise ValueError("empty predictions")
    return float(np.mean(p != t))


def per_class_auc(P: np.ndarray, truth: Sequence[int], names: Sequence[str]) -> dict[str, float]:
    """One-vs-rest AUC-PR per class, scoring with that class's posterior column."""
    truth = np.asarray(truth)
    return {name: auc_pr(P[:, i], truth == i) for i, name in enumerate(names)}


def nearest_neighbors(kb: KnowledgeBase, probe: str, candidates: Sequence[str], k: int, metric: str = "euclidean") -> list[tuple[str, float]]:
    """The ``k`` candidates closest to ``probe`` in embedding space (stable ties)."""
    if k > len(candidates):
        raise ValueError(f"k={k} exceeds the {len(candidates)} candidates")
    if k < 0:
        raise ValueError("k must be non-negative")
    d = distances(kb.embed_many([probe]), kb.embed_many(candidates), metric)[0]
    order = np.argsort(d, kind="stable")[:k]
    return [(candidates[i], float(d[i])) for i in order]


@dataclass(frozen=True)
class EmbeddedPoint:
    text: str
    label: str
    is_class: bool
    coords: tuple[float, ...]


def export_embedding(
    kb: KnowledgeBase,
    texts: Sequence[str],
    labels: Sequence[str] | None = None,
    class_names: Sequence[str] = (),
) -> list[EmbeddedPoint]:
    """One row per text (input order), then one flagged row per class name."""
    if labels is not None and len(labels) != len(texts):
        raise ValueError("labels and texts differ in length")
    rows = []
    if texts:
        E = kb.embed_many(texts)
        for i, t in enumerate(texts):
            rows.append(EmbeddedPoint(t, labels[i] if labels is not None else "", False, tuple(map(float, E[i]))))
    if class_names:
        C = kb.embed_many(class_names)
        for i, c in enumerate(class_names):
            rows.append(EmbeddedPoint(c, c, True, tuple(map(float, C[i]))))
    return rows


def _fmt(x: float) -> str:
    return format(x, ".17g")


def points_csv(rows: Sequence[EmbeddedPoint]) -> str:
    d = len(rows[0].coords) if rows else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["text", "label", "is_class"] + [f"dim{j}" for j in range(d)])
    for r in rows:
        w.writerow([r.text, r.label, int(r.is_class)] + [_fmt(c) for c in r.coords])
    return buf.getvalue()


def read_points_csv(text: str) -> list[EmbeddedPoint]:
    reader = csv.reader(io.StringIO(text))
    next(reader)
    return [EmbeddedPoint(r[0], r[1], r[2] == "1", tuple(float(c) for c in r[3:])) for r in reader]


# -- supervised linear baseline ----------------------------------------------------

@dataclass
class LinearModel:
    """Multinomial logistic regression on standardized features."""

    params: NetworkParams
    mean: np.ndarray
    scale: np.ndarray

    def predict_proba(self, F) -> np.ndarray:
        F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        return forward(self.params, (F - self.mean) / self.scale).probs

    def predict(self, F) -> np.ndarray:
        return np.argmax(self.predict_proba(F), axis=1)


def train_linear_classifier(features, labels, n_classes: int, config: TrainConfig | None = None) -> LinearModel:
    """The zero-hidden-layer network trained on (features, labels)."""
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if F.shape[0] != y.shape[0]:
        raise ValueError("features and labels differ in length")
    config = config or TrainConfig(learning_rate=0.1, epochs=50, batch_size=16)
    config = TrainConfig.from_dict({**config.to_dict(), "hidden": [], "lam": 0.0, "dropout_rate": 0.0})
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    scale[scale == 0] = 1.0
    result = train((F - mean) / scale, y, n_classes, config)
    return LinearModel(result.params, mean, scale)


def augment_features(x_bow, h) -> np.ndarray:
    """Densified bag-of-words concatenated with a semantic feature vector."""
    x = x_bow.dense() if isinstance(x_bow, BowVector) else np.asarray(x_bow, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return np.concatenate([x, h], axis=-1)


# -- feature pipelines -------------------------------------------------------------

def zsl_pipeline_posteriors(
    kind: str,
    params: NetworkParams | None,
    vocab: Vocabulary,
    texts: Sequence[str],
    names: Sequence[str],
    metric: str = "euclidean",
    class_to_url: Sequence[int] | None = None,
    binary_bow: bool = False,
    input_norm: str = "none",
) -> np.ndarray:
    """Zero-shot posteriors (N, M) for one semantic-feature pipeline.

    ``bow``: raw bags; ``posterior``: P(Y|X) over URLs; ``embedding``: last
    hidden layer; ``representative_url``: P(url_i|X) renormalized.
    """
    X = bow_matrix(texts, vocab, binary_bow, input_norm)
    if kind == "representative_url":
        if params is None or class_to_url is None:
            raise ValueError("representative_url needs params and a class-to-URL map")
        return np.atleast_2d(representative_url_posterior(params, X, class_to_url))
    bags = class_bags(names, vocab, binary_bow, input_norm)
    return zsl_scores(feature_map(kind, params), X, bags, metric)


def semantic_features(kind: str, params: NetworkParams | None, X: np.ndarray) -> np.ndarray:
    """Features fed to the supervised classifier for each pipeline."""
    if kind == "bow":
        return X
    if kind == "augmented":
        return augment_features(X, feature_map("embedding", params)(X))
    if kind == "augmented_posterior":
        return augment_features(X, feature_map("posterior", params)(X))
    return feature_map(kind, params)(X)


def learning_curve(
    train_set: Sequence,
    test_set: Sequence,
    kb: KnowledgeBase,
    classes: ClassSet,
    sizes: Sequence[int],
    seed: int,
    config: TrainConfig | None = None,
    target: str | None = None,
    metric: str = "euclidean",
) -> dict:
    """Supervised AUC for growing labeled subsets vs. the label-free ZSL AUC.

    With ``target`` the task is one-vs-rest for that class, otherwise the
    mean per-class AUC.  Subsets are nested prefixes of one seeded shuffle.
    """
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be increasing")
    if sizes and (sizes[0] < 1 or sizes[-1] > len(train_set)):
        raise ValueError("sizes must lie in [1, len(train_set)]")
    names = list(classes.names)
    y_test = np.array([names.index(u.class_name) for u in test_set])
    X_test = kb.bags([u.utterance for u in test_set])

    def score(P):
        if target is not None:
            i = names.index(target)
            return auc_pr(P[:, i], y_test == i)
        return float(np.mean(list(per_class_auc(P, y_test, names).values())))

    zsl = score(zsl_posteriors(kb, [u.utterance for u in test_set], classes, metric))
    order = np.random.default_rng(seed).permutation(len(train_set))
    supervised = []
    for n in sizes:
        sub = [train_set[i] for i in order[:n]]
        X = kb.bags([u.utterance for u in sub])
        y = np.array([names.index(u.class_name) for u in sub])
        model = train_linear_classifier(X, y, len(names), config)
        supervised.append(score(model.predict_proba(X_test)))
    return {"sizes": sizes, "supervised_auc": supervised, "zsl_auc": zsl, "target": target}


# -- reports -----------------------------------------------------------------------

@dataclass
class EvalReport:
    per_class_auc: dict[str, float] = field(default_factory=dict)
    error_rate: float | None = None
    metadata: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.per_class_auc.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"AUC for {k!r} outside [0, 1]")
        if self.error_rate is not None and not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error rate outside [0, 1]")

    @property
    def mean_auc(self) -> float | None:
        return float(np.mean(list(self.per_class_auc.values()))) if self.per_class_auc else None

    def to_dict(self) -> dict:
        d: dict = {"metadata": self.metadata}
        if self.per_class_auc:
            d["per_class_auc"] = self.per_class_auc
            d["mean_auc"] = self.mean_auc
        if self.error_rate is not None:
            d["error_rate"] = self.error_rate
        if self.series:
            d["series"] = self.series
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps().encode("utf-8"))


def auc_table_row(method: str, aucs: Mapping[str, float]) -> str:
    return " | ".join([method] + [f"{v:.3f}" for v in aucs.values()])


def curve_csv(curve: dict) -> str:
    lines = ["series,size,auc"]
    for n, a in zip(curve["sizes"], curve["supervised_auc"]):
        lines.append(f"supervised,{n},{_fmt(a)}")
    for n in curve["sizes"]:
        lines.append(f"zsl,{n},{_fmt(curve['zsl_auc'])}")
    return "\n".join(lines) + "\n"
