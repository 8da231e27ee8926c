"""Minibatch SGD on the click-log objective, optionally with the ZDE entropy term."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .net import Dropout, NetworkParams, forward, init_params, nll_backward, nll_from_trace, sgd_step
from .text import INPUT_NORMS
from .zsl import METRICS, batch_entropy, zde_terms

log = logging.getLogger(__name__)

LEARNING_RATE_GRID = (0.1, 0.01, 0.001)
LAMBDA_GRID = (0.1, 0.01, 0.001)


class NumericError(FloatingPointError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 30
    dropout_rate: float = 0.0
    seed: int = 0
    lam: float = 0.0
    binary_bow: bool = False
    input_norm: str = "none"
    hidden: tuple[int, ...] = (100,)
    metric: str = "euclidean"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.input_norm not in INPUT_NORMS:
            raise ValueError(f"input_norm must be one of {INPUT_NORMS}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainResult:
    params: NetworkParams
    log: list[dict] = field(default_factory=list)


def _epoch_metrics(params, X, y, bags, config) -> dict:
    row = {"nll": nll_from_trace(forward(params, X), y)}
    if config.lam > 0:
        row["entropy"] = batch_entropy(params, X, bags, config.metric)
    return row


def train(
    X: np.ndarray,
    y: Sequence[int],
    n_outputs: int,
    config: TrainConfig,
    class_bags: np.ndarray | None = None,
    init: NetworkParams | None = None,
) -> TrainResult:
    """Train a [V, *hidden, n_outputs] network on dense bag rows ``X``.

    The log has one row per epoch (epoch 0 is the initialization) with the
    full-data NLL and, when ``lam > 0``, the zero-shot conditional entropy.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty training corpus")
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and labels differ in length")
    if config.lam > 0:
        if class_bags is None:
            raise ValueError("lam > 0 requires class names")
        if not config.hidden:
            raise ValueError("lam > 0 requires at least one hidden layer")
    sizes = [X.shape[1], *config.hidden, n_outputs]
    params = init if init is not None else init_params(sizes, config.seed)
    if params.layer_sizes != sizes:
        raise ValueError(f"initial params {params.layer_sizes} do not match {sizes}")
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout = Dropout(config.dropout_rate, np.random.default_rng([config.seed, 2]))

    history = [{"epoch": 0, **_epoch_metrics(params, X, y, class_bags, config)}]
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            trace = forward(params, X[idx], dropout)
            if config.lam > 0:
                loss, ent, grads = zde_terms(params, trace, y[idx], class_bags, config.lam, config.metric)
                loss += config.lam * ent
            else:
                loss = nll_from_trace(trace, y[idx])
                grads = nll_backward(params, trace, y[idx])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            params = sgd_step(params, grads, config.learning_rate)
        row = {"epoch": epoch, **_epoch_metrics(params, X, y, class_bags, config)}
        if not all(math.isfinite(v) for v in row.values()):
            raise NumericError(f"non-finite metrics at epoch {epoch}: {row}")
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
    return TrainResult(params, history)
