"""From-scratch neural network kernels with exact backpropagation.

Layout conventions:
    images   (N, C, H, W)   row-major
    dense    (N, D) inputs, (D, M) weights
    kernels  (K, C, 3, 3)   cross-correlation, no flip

All forward/backward arithmetic runs in float64 so reductions accumulate at
64-bit; trainable parameters are stored at float32 (the checkpoint precision).
Every kernel is a pure function with a fixed accumulation order, which makes
training bitwise reproducible for a given seed.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateBatch, InvalidLabel, ShapeMismatch


class Parameter:
    """A trainable tensor paired with its gradient accumulator."""

    def __init__(self, value: np.ndarray, name: str = "") -> None:
        self.value = np.ascontiguousarray(value, dtype=np.float32)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Parameter({self.name or 'unnamed'}, shape={self.value.shape})"


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Functional kernels (float64 in, float64 out)
# ---------------------------------------------------------------------------

_IM2COL_BUDGET = 8_000_000  # float64 elements per im2col buffer (~64 MB)


def _batch_chunk(c: int, oh: int, ow: int) -> int:
    """Samples per im2col chunk; pure function of shape, so runs are repeatable."""
    per_sample = max(1, oh * ow * c * 9)
    return max(1, _IM2COL_BUDGET // per_sample)


def _im2col(xp: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """(n, C, Hp, Wp) padded images -> (n*oh*ow, C*9) patch matrix.

    Row layout matches w.reshape(K, C*9): channel-major, offset-minor.
    Filled with nine strided copies, which beats a single 6-D gather.
    """
    n, c = xp.shape[0], xp.shape[1]
    buf = np.empty((n, oh, ow, c, 9), dtype=xp.dtype)
    for idx, (di, dj) in enumerate((d, e) for d in range(3) for e in range(3)):
        buf[..., idx] = xp[:, :, di : di + oh, dj : dj + ow].transpose(0, 2, 3, 1)
    return buf.reshape(n * oh * ow, c * 9)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   padding: str = "same") -> tuple[np.ndarray, tuple]:
    """3x3 cross-correlation via im2col + one matrix product per batch chunk.

    padding "same" zero-pads by 1 so the spatial size is preserved; "valid"
    shrinks each spatial dim by 2. Returns (out, cache) with out of shape
    (N, K, H', W').
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeMismatch(f"conv2d expects (N,C,H,W) and (K,C,3,3), got {x.shape}, {w.shape}")
    n, c, h, width = x.shape
    k = w.shape[0]
    if w.shape[1] != c or b.shape != (k,):
        raise ShapeMismatch(f"kernel/bias shapes {w.shape}, {b.shape} do not match input {x.shape}")
    dt = np.result_type(x, w, b)
    if padding == "same":
        if h < 1 or width < 1:
            raise ShapeMismatch("same-padding conv needs H, W >= 1")
        xp = np.zeros((n, c, h + 2, width + 2), dtype=dt)
        xp[:, :, 1:-1, 1:-1] = x
        oh, ow = h, width
    elif padding == "valid":
        if h < 3 or width < 3:
            raise ShapeMismatch("valid conv needs H, W >= 3")
        xp = np.asarray(x, dtype=dt)
        oh, ow = h - 2, width - 2
    else:
        raise ValueError(f"unknown padding {padding!r}")

    w_mat = w.reshape(k, c * 9).T.astype(dt)
    bias_row = b.astype(dt)[None, :]
    out = np.empty((n, k, oh, ow), dtype=dt)
    step = _batch_chunk(c, oh, ow)
    for start in range(0, n, step):
        stop = min(start + step, n)
        rows = _im2col(xp[start:stop], oh, ow) @ w_mat + bias_row
        out[start:stop] = rows.reshape(stop - start, oh, ow, k).transpose(0, 3, 1, 2)
    return out, (xp, w, padding, (n, c, h, width))


def conv2d_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, kernels, and bias."""
    xp, w, padding, (n, c, h, width) = cache
    k = w.shape[0]
    _, _, oh, ow = dout.shape
    w_mat = w.reshape(k, c * 9)
    dt = np.result_type(xp, dout)
    db = dout.sum(axis=(0, 2, 3), dtype=np.float64).astype(dt)
    dw_mat = np.zeros((k, c * 9), dtype=dt)
    dxp = np.zeros(xp.shape, dtype=dt)
    step = _batch_chunk(c, oh, ow)
    for start in range(0, n, step):
        stop = min(start + step, n)
        m = stop - start
        dout_rows = dout[start:stop].transpose(0, 2, 3, 1).reshape(m * oh * ow, k)
        cols = _im2col(xp[start:stop], oh, ow)
        dw_mat += dout_rows.T @ cols
        dcols = (dout_rows @ w_mat).reshape(m, oh, ow, c, 3, 3)
        for di in range(3):
            for dj in range(3):
                dxp[start:stop, :, di : di + oh, dj : dj + ow] += \
                    dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    dw = dw_mat.reshape(k, c, 3, 3)
    dx = dxp[:, :, 1:-1, 1:-1] if padding == "same" else dxp
    return np.ascontiguousarray(dx), dw, db


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Non-overlapping 2x2 max pooling; trailing odd row/column dropped."""
    if x.ndim != 4:
        raise ShapeMismatch(f"maxpool expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeMismatch("maxpool needs H, W >= 2")
    oh, ow = h // 2, w // 2
    windows = (
        x[:, :, : oh * 2, : ow * 2]
        .reshape(n, c, oh, 2, ow, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, oh, ow, 4)
    )
    idx = windows.argmax(axis=-1)  # first occurrence wins on ties
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2x2_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    idx, x_shape = cache
    n, c, h, w = x_shape
    oh, ow = h // 2, w // 2
    dwin = np.zeros((n, c, oh, ow, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros((n, c, h, w), dtype=dout.dtype)
    dx[:, :, : oh * 2, : ow * 2] = (
        dwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * 2, ow * 2)
    )
    return dx


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float,
    epsilon: float,
    train: bool,
) -> tuple[np.ndarray, tuple | None, np.ndarray, np.ndarray]:
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes by batch statistics and returns exponentially
    averaged running stats; eval mode normalizes by the running stats and
    leaves them untouched. Returns (out, cache, running_mean, running_var).
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],):
        raise ShapeMismatch(f"batchnorm expects (N,C,H,W) with per-channel gamma, got {x.shape}")
    axes = (0, 2, 3)
    dt = x.dtype
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise DegenerateBatch(f"batch statistics need >= 2 values per channel, got {m}")
        mean = x.mean(axis=axes, dtype=np.float64)
        delta = x - mean.astype(dt)[None, :, None, None]
        var = np.mean(delta * delta, axis=axes, dtype=np.float64)
        inv_std = (1.0 / np.sqrt(var + epsilon)).astype(dt)
        xhat = delta * inv_std[None, :, None, None]
        new_mean = (1.0 - momentum) * running_mean + momentum * mean
        new_var = (1.0 - momentum) * running_var + momentum * var
        cache = (xhat, gamma, inv_std, m)
    else:
        inv_std = (1.0 / np.sqrt(running_var + epsilon)).astype(dt)
        xhat = (x - running_mean.astype(dt)[None, :, None, None]) * inv_std[None, :, None, None]
        new_mean, new_var = running_mean, running_var
        cache = None
    out = gamma.astype(dt)[None, :, None, None] * xhat + beta.astype(dt)[None, :, None, None]
    return out, cache, new_mean, new_var


def batchnorm_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients for train-mode batchnorm (input, gamma, beta)."""
    xhat, gamma, inv_std, m = cache
    axes = (0, 2, 3)
    dt = dout.dtype
    dbeta = dout.sum(axis=axes, dtype=np.float64)
    dgamma = (dout * xhat).sum(axis=axes, dtype=np.float64)
    dxhat = dout * gamma.astype(dt)[None, :, None, None]
    dx = (
        dxhat
        - dxhat.mean(axis=axes, dtype=np.float64).astype(dt)[None, :, None, None]
        - xhat * (dxhat * xhat).mean(axis=axes, dtype=np.float64).astype(dt)[None, :, None, None]
    ) * inv_std[None, :, None, None]
    return dx, dgamma.astype(dt), dbeta.astype(dt)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Affine map x @ w + b for (N, D) inputs."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense shapes disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w + b[None, :], (x, w)


def dense_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.maximum(0.0, x), x > 0


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Gradient passes where the input was strictly positive (zero at x == 0)."""
    return dout * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable row-wise softmax, evaluated at 64-bit.

    Non-finite logits (a diverged model) yield NaN rows rather than warnings;
    callers detect divergence through the loss.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        z = np.asarray(logits, dtype=np.float64)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of a softmax over the logits.

    Returns (loss, probabilities). Computed via log-sum-exp so the loss stays
    finite even for extremely confident logits.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} vs logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidLabel(f"labels must lie in [0, {k})")
    with np.errstate(over="ignore", invalid="ignore"):
        z = np.asarray(logits, dtype=np.float64)
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(lse - z[np.arange(n), labels]))
    return loss, softmax(logits)


def softmax_cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(loss)/d(logits) = (probs - onehot) / N."""
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return grad / n


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Conv2d:
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 padding: str = "same") -> None:
        fan_in, fan_out = in_channels * 9, out_channels * 9
        self.weight = Parameter(
            glorot_uniform((out_channels, in_channels, 3, 3), fan_in, fan_out, rng), "conv.weight"
        )
        self.bias = Parameter(np.zeros(out_channels), "conv.bias")
        self.padding = padding
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        out, cache = conv2d_forward(x, self.weight.value, self.bias.value, self.padding)
        self._cache = cache if train else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = conv2d_backward(dout, self._cache)
        self.weight.grad += dw.astype(np.float32)
        self.bias.grad += db.astype(np.float32)
        return dx

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class BatchNorm2d:
    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5) -> None:
        self.gamma = Parameter(np.ones(channels), "bn.gamma")
        self.beta = Parameter(np.zeros(channels), "bn.beta")
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.epsilon = epsilon
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        out, cache, new_mean, new_var = batchnorm_forward(
            x, self.gamma.value, self.beta.value,
            self.running_mean, self.running_var,
            self.momentum, self.epsilon, train,
        )
        if train:
            self.running_mean = new_mean.astype(np.float32)
            self.running_var = new_var.astype(np.float32)
        self._cache = cache
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dgamma, dbeta = batchnorm_backward(dout, self._cache)
        self.gamma.grad += dgamma.astype(np.float32)
        self.beta.grad += dbeta.astype(np.float32)
        return dx

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class ReLU:
    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if not train:
            return np.maximum(0.0, x)
        out, mask = relu_forward(x)
        self._mask = mask
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return relu_backward(dout, self._mask)

    def parameters(self) -> list[Parameter]:
        return []


class MaxPool2x2:
    def __init__(self) -> None:
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if not train:
            n, c, h, w = x.shape
            return x[:, :, : h // 2 * 2, : w // 2 * 2] \
                .reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
        out, cache = maxpool2x2_forward(x)
        self._cache = cache
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return maxpool2x2_backward(dout, self._cache)

    def parameters(self) -> list[Parameter]:
        return []


class Flatten:
    def __init__(self) -> None:
        self._shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)

    def parameters(self) -> list[Parameter]:
        return []


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator) -> None:
        self.weight = Parameter(glorot_uniform((in_dim, out_dim), in_dim, out_dim, rng),
                                "dense.weight")
        self.bias = Parameter(np.zeros(out_dim), "dense.bias")
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        out, cache = dense_forward(x, self.weight.value, self.bias.value)
        self._cache = cache if train else None
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = dense_backward(dout, self._cache)
        self.weight.grad += dw.astype(np.float32)
        self.bias.grad += db.astype(np.float32)
        return dx

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def sgd_step(params: list[Parameter], lr: float) -> None:
    """Plain gradient descent: value -= lr * grad, then grads are zeroed."""
    for p in params:
        p.value = (p.value.astype(np.float64) - lr * p.grad.astype(np.float64)).astype(np.float32)
        p.zero_grad()


class AdamState:
    """Bias-corrected first/second moment buffers for a fixed parameter list."""

    def __init__(self, params: list[Parameter], beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8) -> None:
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in params]


def adam_step(state: AdamState, lr: float = 1e-3) -> None:
    """One Adam update over the state's parameters; grads are zeroed after."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(state.params):
        g = p.grad.astype(np.float64)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1**state.t)
        v_hat = state.v[i] / (1.0 - b2**state.t)
        step = lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.value = (p.value.astype(np.float64) - step).astype(np.float32)
        p.zero_grad()
