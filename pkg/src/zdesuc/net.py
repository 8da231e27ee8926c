"""ReLU feedforward network with a softmax output layer.

Parameters are stored as ``W`` of shape (out, in) and ``b`` of shape (out,).
Batches are dense (N, V) arrays, one row per example.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .text import BowVector

MODEL_MAGIC = b"ZDESUC-MODEL\n"
MODEL_VERSION = 1


@dataclass
class LayerParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")


@dataclass
class NetworkParams:
    layers: list[LayerParams]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least the output layer")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.W.shape[1] != lower.W.shape[0]:
                raise ValueError(
                    f"layer sizes do not chain: {lower.W.shape} -> {upper.W.shape}"
                )

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0].W.shape[1]] + [l.W.shape[0] for l in self.layers]

    @property
    def n_hidden(self) -> int:
        return len(self.layers) - 1

    @property
    def num_params(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)

    def copy(self) -> "NetworkParams":
        return NetworkParams([LayerParams(l.W.copy(), l.b.copy()) for l in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in self.layers])

    def with_flat(self, theta: np.ndarray) -> "NetworkParams":
        layers, pos = [], 0
        for l in self.layers:
            W = theta[pos:pos + l.W.size].reshape(l.W.shape)
            pos += l.W.size
            b = theta[pos:pos + l.b.size]
            pos += l.b.size
            layers.append(LayerParams(W.copy(), b.copy()))
        return NetworkParams(layers)

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([LayerParams(np.zeros_like(l.W), np.zeros_like(l.b)) for l in self.layers])

    def __add__(self, other: "NetworkParams") -> "NetworkParams":
        return NetworkParams([LayerParams(a.W + c.W, a.b + c.b) for a, c in zip(self.layers, other.layers)])

    def scaled(self, k: float) -> "NetworkParams":
        return NetworkParams([LayerParams(k * l.W, k * l.b) for l in self.layers])

    def all_finite(self) -> bool:
        return all(np.isfinite(l.W).all() and np.isfinite(l.b).all() for l in self.layers)


def init_params(layer_sizes: Sequence[int], seed: int) -> NetworkParams:
    """Uniform init in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(LayerParams(rng.uniform(-s, s, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return NetworkParams(layers)


class Dropout:
    """Inverted dropout on hidden activations, masks drawn from ``rng``."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng

    def mask(self, shape) -> np.ndarray | None:
        if self.rate == 0.0:
            return None
        keep = self.rng.random(shape) >= self.rate
        return keep / (1.0 - self.rate)


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]          # hidden pre-activations Z^k
    hidden: list[np.ndarray]       # hidden activations H^k, after dropout
    masks: list[np.ndarray | None]
    logits: np.ndarray
    log_probs: np.ndarray = field(repr=False)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def last_hidden(self) -> np.ndarray:
        return self.hidden[-1] if self.hidden else self.inputs


def as_batch(x, dim: int | None = None) -> np.ndarray:
    if isinstance(x, BowVector):
        x = x.dense()
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError("inputs must be a vector or an (N, V) matrix")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"input dimension {X.shape[1]} != network input size {dim}")
    return X


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def hidden_forward(params: NetworkParams, X: np.ndarray, dropout: Dropout | None = None):
    """Hidden recursion H^k = max(0, W^k H^{k-1} + b^k); returns (pre, hidden, masks)."""
    pre, hidden, masks = [], [], []
    h = X
    for layer in params.layers[:-1]:
        z = h @ layer.W.T + layer.b
        h = np.maximum(z, 0.0)
        m = dropout.mask(h.shape) if dropout is not None else None
        if m is not None:
            h = h * m
        pre.append(z)
        hidden.append(h)
        masks.append(m)
    return pre, hidden, masks


def forward(params: NetworkParams, x, dropout: Dropout | None = None) -> ForwardTrace:
    X = as_batch(x, params.layer_sizes[0])
    pre, hidden, masks = hidden_forward(params, X, dropout)
    out = params.layers[-1]
    h = hidden[-1] if hidden else X
    logits = h @ out.W.T + out.b
    return ForwardTrace(X, pre, hidden, masks, logits, log_softmax(logits))


def _check_labels(y, n_out: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= n_out):
        raise ValueError(f"label index out of range [0, {n_out})")
    return y


def nll_from_trace(trace: ForwardTrace, y) -> float:
    y = _check_labels(y, trace.logits.shape[1])
    if y.size == 0:
        raise ValueError("empty batch")
    return float(-trace.log_probs[np.arange(y.size), y].mean())


def nll_loss(params: NetworkParams, X, y) -> float:
    """Mean negative log-likelihood -log P(Y|X) over the batch."""
    return nll_from_trace(forward(params, X), y)


def backprop(
    params: NetworkParams,
    trace: ForwardTrace,
    d_logits: np.ndarray | None = None,
    d_last_hidden: np.ndarray | None = None,
) -> NetworkParams:
    """Parameter gradient given upstream gradients on the logits and/or H^n.

    Dropout masks recorded in ``trace`` are reused, and the ReLU derivative
    at exactly zero is taken as zero.
    """
    grads = params.zeros_like()
    n = params.n_hidden
    h_last = trace.last_hidden
    dh = np.zeros_like(h_last)
    if d_logits is not None:
        out = params.layers[-1]
        grads.layers[-1].W = d_logits.T @ h_last
        grads.layers[-1].b = d_logits.sum(axis=0)
        dh = d_logits @ out.W
    if d_last_hidden is not None:
        if n == 0:
            raise ValueError("network has no hidden layer")
        dh = dh + d_last_hidden
    for k in range(n - 1, -1, -1):
        m = trace.masks[k]
        if m is not None:
            dh = dh * m
        dz = dh * (trace.pre[k] > 0)
        h_below = trace.hidden[k - 1] if k > 0 else trace.inputs
        grads.layers[k].W = dz.T @ h_below
        grads.layers[k].b = dz.sum(axis=0)
        if k > 0:
            dh = dz @ params.layers[k].W
    return grads


def nll_backward(params: NetworkParams, trace: ForwardTrace, y) -> NetworkParams:
    y = _check_labels(y, trace.logits.shape[1])
    d_logits = trace.probs
    d_logits[np.arange(y.size), y] -= 1.0
    return backprop(params, trace, d_logits / y.size)


def backward(
    params: NetworkParams,
    X,
    y,
    lam: float = 0.0,
    class_bags: np.ndarray | None = None,
    metric: str = "euclidean",
) -> NetworkParams:
    """Gradient of the batch-mean NLL, plus ``lam`` times the zero-shot entropy."""
    if lam > 0:
        from .zsl import zde_gradient

        if class_bags is None:
            raise ValueError("lam > 0 requires class_bags")
        return zde_gradient(params, X, y, class_bags, lam, metric)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return nll_backward(params, forward(params, X), y)


def sgd_step(params: NetworkParams, grads: NetworkParams, learning_rate: float) -> NetworkParams:
    return NetworkParams([
        LayerParams(p.W - learning_rate * g.W, p.b - learning_rate * g.b)
        for p, g in zip(params.layers, grads.layers)
    ])


# -- model file ---------------------------------------------------------------

def model_bytes(params: NetworkParams, config: dict, vocab_sha256: str, extra: dict | None = None) -> bytes:
    header = {
        "format_version": MODEL_VERSION,
        "layer_sizes": params.layer_sizes,
        "dtype": "<f8",
        "order": "row-major",
        "config": config,
        "vocab_sha256": vocab_sha256,
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(
        l.W.astype("<f8").tobytes(order="C") + l.b.astype("<f8").tobytes() for l in params.layers
    )
    return MODEL_MAGIC + struct.pack("<I", len(head)) + head + blob


def save_model(path, params: NetworkParams, config: dict, vocab_sha256: str, extra: dict | None = None) -> None:
    Path(path).write_bytes(model_bytes(params, config, vocab_sha256, extra))


def parse_model(data: bytes) -> tuple[NetworkParams, dict]:
    if not data.startswith(MODEL_MAGIC):
        raise ValueError("not a model file")
    pos = len(MODEL_MAGIC)
    if len(data) < pos + 4:
        raise ValueError("truncated model file")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        sizes = [int(s) for s in header["layer_sizes"]]
    except (UnicodeDecodeError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise ValueError(f"corrupt model header: {e}") from None
    pos += hlen
    if header.get("format_version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {header.get('format_version')}")
    expected = pos + 8 * sum(a * b + b for a, b in zip(sizes, sizes[1:]))
    if expected != len(data):
        raise ValueError("model file has trailing or missing bytes")
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        nW = fan_in * fan_out
        W = np.frombuffer(data, dtype="<f8", count=nW, offset=pos).reshape(fan_out, fan_in)
        pos += 8 * nW
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=pos)
        pos += 8 * fan_out
        layers.append(LayerParams(W.astype(np.float64), b.astype(np.float64)))
    return NetworkParams(layers), header


def load_model(path) -> tuple[NetworkParams, dict]:
    return parse_model(Path(path).read_bytes())
