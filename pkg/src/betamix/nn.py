"""Differentiable layer set with manual forward/backward passes.

Just enough machinery for a 1-D convolutional ResNet: convolution, batch
normalization, ReLU, max pooling (windowed and global), a fully-connected
layer, softplus, Xavier initialization, and the Adam update. Storage is
float32 throughout; every layer accepts a dtype override so tests can run
a float64 shadow copy for tight gradient checks.

Conventions:
  - Activations are numpy arrays of shape (batch, channels, length),
    C-contiguous ("Tensor3" layout). The dense layer flattens internally.
  - forward(x, train) caches whatever backward needs; backward(grad)
    returns the input gradient and accumulates parameter gradients.
  - Convolution is cross-correlation (no kernel flip). "same" padding
    splits zeros as evenly as possible with the extra element on the
    right, and the accumulation order over (input channel, tap) is fixed
    so outputs are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

# When enabled (tests, debugging) every forward/backward output is checked
# for NaN/inf before it propagates further.
DEBUG_FINITE_CHECKS = False


def _check_finite(name: str, arr: np.ndarray) -> None:
    if DEBUG_FINITE_CHECKS and not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values leaving {name}")


class Param:
    """A trainable tensor with its gradient and Adam moment buffers."""

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0


@dataclass
class AdamState:
    """Optimizer hyperparameters plus the shared step counter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0


def xavier_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator,
                dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Uniform Glorot draw on [-sqrt(6/(fan_in+fan_out)), +sqrt(...)]."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fan_in and fan_out must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def adam_step(params: list[Param], state: AdamState) -> None:
    """One Adam update with bias correction over all params, then zero grads.

    The step counter advances exactly once per call regardless of how many
    parameters the model has.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for p in params:
        g = p.grad
        p.adam_m[...] = b1 * p.adam_m + (1.0 - b1) * g
        p.adam_v[...] = b2 * p.adam_v + (1.0 - b2) * (g * g)
        m_hat = p.adam_m / correction1
        v_hat = p.adam_v / correction2
        p.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.zero_grad()


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + exp(x)) without overflow: max(x, 0) + log1p(exp(-|x|))."""
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def same_pad_amounts(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(output length, left pad, right pad) for resolution-preserving padding.

    Output length is ceil(length / stride); the zero padding needed to cover
    it is split evenly with the odd element on the right.
    """
    out_len = -(-length // stride)
    total = max(0, (out_len - 1) * stride + kernel - length)
    left = total // 2
    return out_len, left, total - left


class Conv1D:
    """1-D cross-correlation with optional striding and same/none padding."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 pad: str = "same", *, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE, name: str = "conv"):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if pad not in ("same", "none"):
            raise ValueError(f"pad must be 'same' or 'none', got {pad!r}")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel_size = kernel
        self.stride = stride
        self.pad = pad
        self.name = name
        self.weight = Param(
            xavier_init((out_ch, in_ch, kernel), in_ch * kernel, out_ch * kernel,
                        rng, dtype),
            name=f"{name}.weight",
        )
        self.bias = Param(np.zeros(out_ch, dtype=dtype), name=f"{name}.bias")
        self._cache = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def output_length(self, length: int) -> int:
        if self.pad == "same":
            return -(-length // self.stride)
        if length < self.kernel_size:
            raise ValueError(
                f"{self.name}: input length {length} shorter than kernel "
                f"{self.kernel_size} with pad='none'"
            )
        return (length - self.kernel_size) // self.stride + 1

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        b, c, length = x.shape
        if c != self.in_ch:
            raise ValueError(f"{self.name}: expected {self.in_ch} channels, got {c}")
        out_len = self.output_length(length)
        if self.pad == "same":
            _, left, right = same_pad_amounts(length, self.kernel_size, self.stride)
            xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
        else:
            left = 0
            xp = x
        windows = sliding_window_view(xp, self.kernel_size, axis=2)[:, :, ::self.stride, :]
        k = self.weight.value
        y = np.empty((b, self.out_ch, out_len), dtype=x.dtype)
        y[...] = self.bias.value[None, :, None]
        # Accumulate channel-major then tap-major so the summation order per
        # output element is fixed (bitwise-reproducible, oracle-matchable).
        for ci in range(self.in_ch):
            for j in range(self.kernel_size):
                y += windows[:, ci, :, j][:, None, :] * k[None, :, ci, j, None]
        self._cache = (windows, x.shape, left, out_len)
        _check_finite(self.name, y)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValueError(f"{self.name}: backward called before forward")
        windows, x_shape, left, out_len = self._cache
        b, c, length = x_shape
        if grad_out.shape != (b, self.out_ch, out_len):
            raise ValueError(f"{self.name}: grad shape {grad_out.shape} does not "
                             f"match forward output {(b, self.out_ch, out_len)}")
        self.bias.grad += grad_out.sum(axis=(0, 2))
        self.weight.grad += np.einsum("bfo,bcok->fck", grad_out, windows)
        padded_len = left + length + self._padded_right(length)
        dxp = np.zeros((b, self.in_ch, padded_len), dtype=grad_out.dtype)
        k = self.weight.value
        for j in range(self.kernel_size):
            contrib = np.einsum("bfo,fc->bco", grad_out, k[:, :, j])
            dxp[:, :, j : j + out_len * self.stride : self.stride] += contrib
        dx = dxp[:, :, left : left + length]
        _check_finite(self.name, dx)
        return np.ascontiguousarray(dx)

    def _padded_right(self, length: int) -> int:
        if self.pad == "none":
            return 0
        _, _, right = same_pad_amounts(length, self.kernel_size, self.stride)
        return right


class BatchNorm1D:
    """Per-channel batch normalization over the (batch, spatial) axes."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 *, dtype=DEFAULT_DTYPE, name: str = "bn"):
        if not (0.0 < momentum < 1.0):
            raise ValueError("momentum must lie in (0, 1)")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.scale = Param(np.ones(channels, dtype=dtype), name=f"{name}.scale")
        self.shift = Param(np.zeros(channels, dtype=dtype), name=f"{name}.shift")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self) -> list[Param]:
        return [self.scale, self.shift]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        b, c, length = x.shape
        if c != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {c}")
        if train:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
            m = self.momentum
            self.running_mean[...] = (1.0 - m) * self.running_mean + m * mean
            self.running_var[...] = (1.0 - m) * self.running_var + m * var
            self._cache = (xhat, inv_std, b * length)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None]) * inv_std[None, :, None]
            self._cache = None
        y = self.scale.value[None, :, None] * xhat + self.shift.value[None, :, None]
        _check_finite(self.name, y)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValueError(
                f"{self.name}: backward requires a preceding train-mode forward"
            )
        xhat, inv_std, n = self._cache
        self.scale.grad += (grad_out * xhat).sum(axis=(0, 2))
        self.shift.grad += grad_out.sum(axis=(0, 2))
        dxhat = grad_out * self.scale.value[None, :, None]
        sum_dxhat = dxhat.sum(axis=(0, 2), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
        dx = (inv_std[None, :, None] / n) * (
            n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
        )
        _check_finite(self.name, dx)
        return dx


class ReLU:
    def __init__(self, name: str = "relu"):
        self.name = name
        self._mask = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        # Gradient at exactly 0 is defined as 0, so the mask is strict.
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise ValueError(f"{self.name}: backward called before forward")
        return grad_out * self._mask


class MaxPool1D:
    """Windowed max pooling; gradient flows to the first max per window."""

    def __init__(self, window: int, stride: int, name: str = "pool"):
        if window < 1 or stride < 1:
            raise ValueError("window and stride must be >= 1")
        self.window = window
        self.stride = stride
        self.name = name
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def output_length(self, length: int) -> int:
        if length < self.window:
            raise ValueError(
                f"{self.name}: input length {length} shorter than window {self.window}"
            )
        return (length - self.window) // self.stride + 1

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out_len = self.output_length(x.shape[2])
        windows = sliding_window_view(x, self.window, axis=2)[:, :, ::self.stride, :]
        argmax = windows.argmax(axis=3)
        y = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
        self._cache = (argmax, x.shape, out_len)
        return np.ascontiguousarray(y)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValueError(f"{self.name}: backward called before forward")
        argmax, x_shape, out_len = self._cache
        b, c, length = x_shape
        dx = np.zeros(x_shape, dtype=grad_out.dtype)
        positions = argmax + self.stride * np.arange(out_len)[None, None, :]
        flat_dx = dx.reshape(b * c, length)
        flat_pos = positions.reshape(b * c, out_len)
        rows = np.arange(b * c)[:, None]
        # Windows may overlap when stride < window, so scatter-add.
        np.add.at(flat_dx, (rows, flat_pos), grad_out.reshape(b * c, out_len))
        return dx


class GlobalMaxPool:
    """Maximum over the whole spatial axis; output length is 1."""

    def __init__(self, name: str = "gpool"):
        self.name = name
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        argmax = x.argmax(axis=2)
        y = np.take_along_axis(x, argmax[..., None], axis=2)
        self._cache = (argmax, x.shape)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValueError(f"{self.name}: backward called before forward")
        argmax, x_shape = self._cache
        dx = np.zeros(x_shape, dtype=grad_out.dtype)
        np.put_along_axis(dx, argmax[..., None], grad_out, axis=2)
        return dx


class Dense:
    """Fully-connected layer; flattens (batch, channels, length) input."""

    def __init__(self, in_features: int, out_features: int, *,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE, name: str = "dense"):
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        self.weight = Param(
            xavier_init((in_features, out_features), in_features, out_features,
                        rng, dtype),
            name=f"{name}.weight",
        )
        self.bias = Param(np.zeros(out_features, dtype=dtype), name=f"{name}.bias")
        self._cache = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ValueError(f"{self.name}: expected {self.in_features} features, "
                             f"got {flat.shape[1]}")
        y = np.einsum("bf,fo->bo", flat, self.weight.value) + self.bias.value
        self._cache = (flat, x.shape)
        _check_finite(self.name, y)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValueError(f"{self.name}: backward called before forward")
        flat, x_shape = self._cache
        self.weight.grad += np.einsum("bf,bo->fo", flat, grad_out)
        self.bias.grad += grad_out.sum(axis=0)
        dx = np.einsum("bo,fo->bf", grad_out, self.weight.value)
        return dx.reshape(x_shape)


class Softplus:
    """Elementwise ln(1+exp(x)), optionally floored to keep outputs positive."""

    def __init__(self, floor: float = 0.0, name: str = "softplus"):
        self.floor = floor
        self.name = name
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y = softplus(x)
        if self.floor > 0.0:
            flo_mask = y > self.floor
            y = np.maximum(y, np.asarray(self.floor, dtype=y.dtype))
        else:
            flo_mask = None
        self._cache = (x, flo_mask)
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ValueError(f"{self.name}: backward called before forward")
        x, flo_mask = self._cache
        dx = grad_out * sigmoid(x)
        if flo_mask is not None:
            dx = dx * flo_mask
        return dx
