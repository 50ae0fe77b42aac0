"""Shallow pair-verification CNN over alignment feature maps.

The network consumes a 2-channel 32x32 input (divergence map of the
recovered deformation field, per-pixel brightness-error map after
alignment) and emits the probability that the two patches show the same
individual. Architecture: conv 2->8 3x3 + ReLU, conv 8->8 3x3 + ReLU,
global average pool, fully-connected 8->1 + sigmoid. Implemented
directly in numpy with analytic gradients; the test suite checks them
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from resight import rng
from resight.constants import CNN_CHANNELS, CNN_INPUT_SIZE, CNN_KERNEL

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class PrimedCnnModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    history: list[float] = field(default_factory=list)

    @classmethod
    def initialize(cls, seed: int = 0) -> "PrimedCnnModel":
        gen = rng.generator("cnn-init", seed)
        k, c = CNN_KERNEL, CNN_CHANNELS
        w1 = gen.normal(0.0, np.sqrt(2.0 / (2 * k * k)), size=(c, 2, k, k))
        w2 = gen.normal(0.0, np.sqrt(2.0 / (c * k * k)), size=(c, c, k, k))
        w3 = gen.normal(0.0, np.sqrt(1.0 / c), size=(c,))
        return cls(w1=w1, b1=np.zeros(c), w2=w2, b2=np.zeros(c), w3=w3, b3=np.zeros(()))

    @classmethod
    def zeros(cls) -> "PrimedCnnModel":
        k, c = CNN_KERNEL, CNN_CHANNELS
        return cls(
            w1=np.zeros((c, 2, k, k)),
            b1=np.zeros(c),
            w2=np.zeros((c, c, k, k)),
            b2=np.zeros(c),
            w3=np.zeros(c),
            b3=np.zeros(()),
        )

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def copy(self) -> "PrimedCnnModel":
        return PrimedCnnModel(
            **{name: value.copy() for name, value in self.params().items()},
            history=list(self.history),
        )


# ---------------------------------------------------------------------------
# Convolution via im2col (stride 1, zero padding to keep the grid size)


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    k = CNN_KERNEL
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))  # (n, c, h, w, k, k)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c * k * k)


def _conv_forward(x, weights, bias):
    n, _, h, w = x.shape
    f = weights.shape[0]
    cols = _im2col(x)
    out = cols @ weights.reshape(f, -1).T + bias
    return out.reshape(n, h, w, f).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, weights, x_shape):
    n, c, h, w = x_shape
    f = weights.shape[0]
    k = CNN_KERNEL
    dmat = dout.transpose(0, 2, 3, 1).reshape(n, h * w, f)
    d_weights = np.einsum("nhf,nhc->fc", dmat, cols).reshape(weights.shape)
    d_bias = dout.sum(axis=(0, 2, 3))
    dcols = (dmat @ weights.reshape(f, -1)).reshape(n, h, w, c, k, k)
    d_padded = np.zeros((n, c, h + 2, w + 2))
    for dy in range(k):
        for dx in range(k):
            d_padded[:, :, dy : dy + h, dx : dx + w] += dcols[:, :, :, :, dy, dx].transpose(
                0, 3, 1, 2
            )
    return d_weights, d_bias, d_padded[:, :, 1:-1, 1:-1]


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _forward(model: PrimedCnnModel, x: np.ndarray):
    a1, cols1 = _conv_forward(x, model.w1, model.b1)
    r1 = np.maximum(a1, 0.0)
    a2, cols2 = _conv_forward(r1, model.w2, model.b2)
    r2 = np.maximum(a2, 0.0)
    pooled = r2.mean(axis=(2, 3))
    z = pooled @ model.w3 + model.b3
    p = _sigmoid(z)
    cache = (x, cols1, a1, r1, cols2, a2, r2, pooled, z)
    return p, cache


def forward_batch(model: PrimedCnnModel, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Probabilities for a batch of (2, 32, 32) inputs. Deterministic."""
    x = _check_input(x)
    out = [
        _forward(model, x[start : start + chunk])[0] for start in range(0, x.shape[0], chunk)
    ]
    return np.concatenate(out)


def loss_only(model: PrimedCnnModel, x: np.ndarray, y: np.ndarray, chunk: int = 256) -> float:
    """Mean binary cross-entropy without the backward pass.

    Evaluates in chunks: the im2col buffers for a full training set would
    dominate memory traffic otherwise.
    """
    x = _check_input(x)
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    for start in range(0, x.shape[0], chunk):
        z = _forward(model, x[start : start + chunk])[1][-1]
        total += float(np.sum(np.logaddexp(0.0, -z) + (1.0 - y[start : start + chunk]) * z))
    return total / x.shape[0]


def loss_and_grads(model: PrimedCnnModel, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy over the batch plus analytic gradients."""
    x = _check_input(x)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    p, cache = _forward(model, x)
    _, cols1, a1, r1, cols2, a2, r2, pooled, z = cache
    # Numerically stable BCE: softplus(-z) + (1 - y) * z
    loss = float(np.mean(np.logaddexp(0.0, -z) + (1.0 - y) * z))

    dz = (p - y) / n
    d_w3 = pooled.T @ dz
    d_b3 = dz.sum()
    d_pooled = np.outer(dz, model.w3)
    h, w = r2.shape[2], r2.shape[3]
    d_r2 = np.broadcast_to(d_pooled[:, :, None, None], r2.shape) / (h * w)
    d_a2 = d_r2 * (a2 > 0)
    d_w2, d_b2, d_r1 = _conv_backward(d_a2, cols2, model.w2, r1.shape)
    d_a1 = d_r1 * (a1 > 0)
    d_w1, d_b1, _ = _conv_backward(d_a1, cols1, model.w1, x.shape)
    grads = {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2, "w3": d_w3, "b3": np.asarray(d_b3)}
    return loss, grads


def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    s = CNN_INPUT_SIZE
    if x.ndim != 4 or x.shape[1:] != (2, s, s):
        raise ValueError(f"expected (n, 2, {s}, {s}) inputs, got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# Public entry points


def prepare_maps(div_map: np.ndarray, err_map: np.ndarray, size: int = CNN_INPUT_SIZE) -> np.ndarray:
    """Resample a (divergence, brightness-error) map pair to the CNN grid."""
    div_map = np.asarray(div_map, dtype=np.float64)
    err_map = np.asarray(err_map, dtype=np.float64)
    if div_map.shape != err_map.shape:
        raise ValueError("divergence and error maps must have equal shape")
    channels = []
    for grid in (div_map, err_map):
        zoom = (size / grid.shape[0], size / grid.shape[1])
        channels.append(ndimage.zoom(grid, zoom, order=1, mode="nearest", grid_mode=True))
    return np.stack(channels)


def primed_cnn_forward(model: PrimedCnnModel, div_map: np.ndarray, nbe_map: np.ndarray) -> float:
    """Same-individual probability for one resampled map pair, in (0, 1)."""
    div_map = np.asarray(div_map, dtype=np.float64)
    nbe_map = np.asarray(nbe_map, dtype=np.float64)
    s = CNN_INPUT_SIZE
    if div_map.shape != (s, s) or nbe_map.shape != (s, s):
        raise ValueError(
            f"maps must be resampled to {s}x{s}, got {div_map.shape} and {nbe_map.shape}"
        )
    return float(forward_batch(model, np.stack([div_map, nbe_map])[None])[0])


def primed_cnn_train(
    pairs,
    lr: float = 0.05,
    epochs: int = 40,
    batch: int = 32,
    seed: int = 0,
) -> PrimedCnnModel:
    """Train from (div_map, nbe_map, label) triples with seeded mini-batch SGD.

    Records the full-set loss before training and after every epoch in
    ``model.history``. Raises if only one class is present.
    """
    pairs = list(pairs)
    x = np.stack([np.stack([np.asarray(d, dtype=np.float64), np.asarray(e, dtype=np.float64)]) for d, e, _ in pairs])
    y = np.asarray([label for _, _, label in pairs], dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    if lr < 0 or epochs < 0 or batch < 1:
        raise ValueError("bad hyperparameters")
    model = PrimedCnnModel.initialize(seed=seed)
    gen = rng.generator("cnn-train", seed)
    model.history.append(loss_only(model, x, y))
    for _ in range(epochs):
        order = gen.permutation(len(pairs))
        for start in range(0, len(pairs), batch):
            idx = order[start : start + batch]
            _, grads = loss_and_grads(model, x[idx], y[idx])
            for name, grad in grads.items():
                getattr(model, name)[...] -= lr * grad
        model.history.append(loss_only(model, x, y))
    return model
