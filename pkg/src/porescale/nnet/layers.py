"""Layers, model container, and the cross-entropy loss.

Tensors are plain contiguous numpy arrays, float32 by default with a
float64 mode reserved for gradient checks. Every layer caches what its
backward pass needs during forward; backward accumulates parameter
gradients (so gradient accumulation across minibatches is a no-op) and
returns the gradient with respect to its input. A NaN guard after each
layer's forward and backward keeps silent numeric blowups from
propagating into training logs.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _require_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values after {where}")


class Layer:
    """Base: parameterless pass-through; subclasses override as needed."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        pass

    def zero_grad(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Conv2d(Layer):
    """3x3-style convolution via im2col GEMM; NCHW layout."""

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, pad: int = 0):
        super().__init__()
        if min(in_ch, out_ch, k, stride) < 1 or pad < 0:
            raise ValueError("bad conv hyperparameters")
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad
        self._cache = None

    def init_params(self, rng, dtype):
        fan_in = self.in_ch * self.k * self.k
        std = math.sqrt(2.0 / fan_in)
        self.params = {
            "weight": (std * rng.standard_normal((self.out_ch, self.in_ch, self.k, self.k))).astype(dtype),
            "bias": np.zeros(self.out_ch, dtype=dtype),
        }
        self.zero_grad()

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {c}")
        k, s, p = self.k, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        if xp.shape[2] < k or xp.shape[3] < k:
            raise ValueError("input smaller than kernel")
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        oh, ow = win.shape[2], win.shape[3]
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
        w2 = self.params["weight"].reshape(self.out_ch, c * k * k)
        y = np.matmul(w2, cols).reshape(n, self.out_ch, oh, ow)
        y += self.params["bias"][:, None, None]
        self._cache = (cols, x.shape, (oh, ow))
        return y

    def backward(self, gy):
        if self._cache is None:
            raise RuntimeError("backward before forward")
        cols, x_shape, (oh, ow) = self._cache
        n, c, h, w = x_shape
        k, s, p = self.k, self.stride, self.pad
        gyf = gy.reshape(n, self.out_ch, oh * ow)
        w2 = self.params["weight"].reshape(self.out_ch, c * k * k)
        self.grads["weight"] += np.einsum("nol,nkl->ok", gyf, cols).reshape(self.params["weight"].shape)
        self.grads["bias"] += gy.sum(axis=(0, 2, 3))
        gcols = np.matmul(w2.T, gyf).reshape(n, c, k, k, oh, ow)
        gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=gy.dtype)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += gcols[:, :, ki, kj]
        return gxp[:, :, p:p + h, p:p + w] if p else gxp

    def spec(self):
        return {
            "kind": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch,
            "k": self.k, "stride": self.stride, "pad": self.pad,
        }


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        if min(in_dim, out_dim) < 1:
            raise ValueError("bad dense dimensions")
        self.in_dim, self.out_dim = in_dim, out_dim
        self._x = None

    def init_params(self, rng, dtype):
        std = math.sqrt(2.0 / self.in_dim)
        self.params = {
            "weight": (std * rng.standard_normal((self.out_dim, self.in_dim))).astype(dtype),
            "bias": np.zeros(self.out_dim, dtype=dtype),
        }
        self.zero_grad()

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (N, {self.in_dim}) input, got {x.shape}")
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, gy):
        if self._x is None:
            raise RuntimeError("backward before forward")
        self.grads["weight"] += gy.T @ self._x
        self.grads["bias"] += gy.sum(axis=0)
        return gy @ self.params["weight"]

    def spec(self):
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim}


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, gy):
        if self._mask is None:
            raise RuntimeError("backward before forward")
        return np.where(self._mask, gy, gy.dtype.type(0))

    def spec(self):
        return {"kind": "relu"}


class GELU(Layer):
    """Exact (erf) form, matching 0.5 x (1 + erf(x / sqrt 2))."""

    def __init__(self):
        super().__init__()
        self._x = None

    def forward(self, x):
        self._x = x
        return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype)

    def backward(self, gy):
        if self._x is None:
            raise RuntimeError("backward before forward")
        x = self._x
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (gy * (cdf + x * pdf)).astype(gy.dtype)

    def spec(self):
        return {"kind": "gelu"}


class MaxPool2d(Layer):
    def __init__(self, k: int, stride: int):
        super().__init__()
        if k < 1 or stride < 1:
            raise ValueError("bad pool hyperparameters")
        self.k, self.stride = k, stride
        self._cache = None

    def forward(self, x):
        n, c, h, w = x.shape
        k, s = self.k, self.stride
        if h < k or w < k:
            raise ValueError("input smaller than pooling window")
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        oh, ow = win.shape[2], win.shape[3]
        flat = win.reshape(n, c, oh, ow, k * k)
        arg = flat.argmax(axis=4)
        y = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
        self._cache = (arg, x.shape, (oh, ow))
        return y

    def backward(self, gy):
        if self._cache is None:
            raise RuntimeError("backward before forward")
        arg, (n, c, h, w), (oh, ow) = self._cache
        k, s = self.k, self.stride
        gi, gj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
        rows = gi[None, None] * s + arg // k
        cols = gj[None, None] * s + arg % k
        gx = np.zeros((n, c, h, w), dtype=gy.dtype)
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        if s >= k:
            gx[ni, ci, rows, cols] += gy  # windows disjoint: no index collisions
        else:
            np.add.at(gx, (ni, ci, rows, cols), gy)
        return gx

    def spec(self):
        return {"kind": "maxpool2d", "k": self.k, "stride": self.stride}


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        if self._shape is None:
            raise RuntimeError("backward before forward")
        return gy.reshape(self._shape)

    def spec(self):
        return {"kind": "flatten"}


_LAYER_KINDS = {
    "conv2d": lambda d: Conv2d(d["in_ch"], d["out_ch"], d["k"], d["stride"], d["pad"]),
    "dense": lambda d: Dense(d["in_dim"], d["out_dim"]),
    "relu": lambda d: ReLU(),
    "gelu": lambda d: GELU(),
    "maxpool2d": lambda d: MaxPool2d(d["k"], d["stride"]),
    "flatten": lambda d: Flatten(),
}


def layer_from_spec(d: dict) -> Layer:
    try:
        return _LAYER_KINDS[d["kind"]](d)
    except KeyError as exc:
        raise ValueError(f"unknown layer spec {d!r}") from exc


class Model:
    """Ordered layer stack with named parameters and a NaN guard."""

    def __init__(self, layers: list[Layer], dtype=np.float32, check_finite: bool = True):
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite

    def init_params(self, seed: int) -> "Model":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng, self.dtype)
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=self.dtype)
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if self.check_finite:
                _require_finite(x, f"forward of layer {i} ({layer.spec()['kind']})")
        return x

    def backward(self, gy: np.ndarray) -> np.ndarray:
        g = np.ascontiguousarray(gy, dtype=self.dtype)
        for i in reversed(range(len(self.layers))):
            g = self.layers[i].backward(g)
            if self.check_finite:
                _require_finite(g, f"backward of layer {i}")
        return g

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self):
        """Yields (name, layer_index, param_key, array) in a fixed order."""
        for i, layer in enumerate(self.layers):
            for key in sorted(layer.params):
                yield f"{i}.{key}", i, key, layer.params[key]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: arr for name, _, _, arr in self.named_params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, i, key, arr in self.named_params():
            new = state[name]
            if new.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}")
            self.layers[i].params[key] = np.ascontiguousarray(new, dtype=self.dtype)
        for layer in self.layers:
            layer.zero_grad()

    def to_dtype(self, dtype) -> "Model":
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for key in layer.params:
                layer.params[key] = layer.params[key].astype(self.dtype)
            layer.zero_grad()
        return self

    def copy(self) -> "Model":
        clone = Model([layer_from_spec(s) for s in self.architecture()], self.dtype, self.check_finite)
        for src, dst in zip(self.layers, clone.layers):
            dst.params = {k: v.copy() for k, v in src.params.items()}
            dst.zero_grad()
        return clone

    def architecture(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def n_params(self) -> int:
        return sum(arr.size for _, _, _, arr in self.named_params())


def porenet_s(n_classes: int, in_hw: tuple[int, int] = (64, 64), dtype=np.float32) -> Model:
    """Three conv/pool stages into a GELU head; the reference classifier."""
    h, w = in_hw
    if h % 8 or w % 8:
        raise ValueError("input sides must be divisible by 8 (three 2x2 pools)")
    flat = 64 * (h // 8) * (w // 8)
    return Model([
        Conv2d(1, 16, 3, 1, 1), ReLU(), MaxPool2d(2, 2),
        Conv2d(16, 32, 3, 1, 1), ReLU(), MaxPool2d(2, 2),
        Conv2d(32, 64, 3, 1, 1), ReLU(), MaxPool2d(2, 2),
        Flatten(), Dense(flat, 128), GELU(), Dense(128, n_classes),
    ], dtype=dtype)


def cross_entropy_loss(
    logits: np.ndarray, labels: np.ndarray, grad_denom: int | None = None
) -> tuple[float, np.ndarray]:
    """Mean negative log softmax plus its gradient.

    ``grad_denom`` overrides the averaging denominator so accumulated
    minibatch gradients sum to the exact full-batch mean; the returned
    loss is always the mean over the rows actually present.
    """
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError("labels must be one integer per row")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    log_softmax = z - np.log(sez)
    loss = float(-log_softmax[np.arange(n), labels].mean())
    grad = ez / sez
    grad[np.arange(n), labels] -= 1.0
    grad /= n if grad_denom is None else grad_denom
    return loss, grad.astype(logits.dtype)
