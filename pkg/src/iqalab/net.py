"""Minimal differentiable-layer toolkit for the two-branch quality model.

Tensors are plain numpy arrays.  Image activations are batched
channel-major ``(N, C, H, W)``; feature vectors are ``(N, F)``.  Every
layer exposes::

    y, cache = layer.forward(x, mode="train"|"eval", rng=...)
    grad_x, param_grads = layer.backward(cache, grad_y)

with exact analytic gradients, so a model is just an explicit wiring of
layer calls.  The closed layer set is conv2d / relu / global average
pool / fully connected / dropout / softmax plus channel concatenation.

Losses (`loss_value_and_grad`) cover mse, mae, mape, msle, logcosh,
huber (delta defaults to 1) and cross_entropy, all mean-reduced so
values are comparable across batch sizes.

`Adam` implements the optimizer used for training with a piecewise
learning-rate schedule (`LrSchedule`): the base rate is multiplied by a
drop factor once per drop period of epochs.

`finite_difference` / `grad_check_layer` verify any gradient against
central differences; run them on float64 instances (`layer.astype`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import (
    ConfigError,
    DegenerateInputError,
    ImageTooSmallError,
    ShapeMismatchError,
)
from .rng import RngStream

MODES = ("train", "eval")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


class Layer:
    """Base class: parameter container plus the forward/backward contract."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def astype(self, dtype) -> "Layer":
        """Cast parameters in place (float64 for gradient checking)."""
        for name in self.params:
            self.params[name] = self.params[name].astype(dtype)
        return self

    def forward(self, x, mode: str = "eval", rng: RngStream | None = None):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        raise NotImplementedError


def _patch_view(x: np.ndarray, k: int, stride: int, dilation: int) -> np.ndarray:
    """Sliding-window view (N, C, OH, OW, k, k) over a contiguous input."""
    n, c, h, w = x.shape
    ke = (k - 1) * dilation + 1
    oh = (h - ke) // stride + 1
    ow = (w - ke) // stride + 1
    sn, sc, sh, sw = x.strides
    return as_strided(
        x,
        shape=(n, c, oh, ow, k, k),
        strides=(sn, sc, sh * stride, sw * stride, sh * dilation, sw * dilation),
        writeable=False,
    )


class Conv2D(Layer):
    """Cross-correlation with bias; square odd kernel, stride and dilation.

    padding "valid" shrinks the map; "same" zero-pads so the output
    spatial size is ceil(input / stride).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, dilation: int = 1, padding: str = "valid",
                 rng: RngStream | None = None, weight_scale: float | None = None,
                 dtype=np.float32):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd and positive, got {kernel_size}")
        if stride < 1 or dilation < 1:
            raise ConfigError("stride and dilation must be >= 1")
        if padding not in ("valid", "same"):
            raise ConfigError(f"padding must be 'valid' or 'same', got {padding!r}")
        if in_channels < 1 or out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        scale = np.sqrt(2.0 / fan_in) if weight_scale is None else weight_scale
        if rng is None:
            w = np.zeros((out_channels, in_channels, kernel_size, kernel_size))
        else:
            w = rng.normal(0.0, scale, (out_channels, in_channels, kernel_size, kernel_size))
        self.params["w"] = np.asarray(w, dtype=dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)

    def _pad_amounts(self, h: int, w: int):
        ke = (self.kernel_size - 1) * self.dilation + 1
        if self.padding == "valid":
            return ke, 0, 0, 0, 0
        oh = -(-h // self.stride)
        ow = -(-w // self.stride)
        ph = max((oh - 1) * self.stride + ke - h, 0)
        pw = max((ow - 1) * self.stride + ke - w, 0)
        return ke, ph // 2, ph - ph // 2, pw // 2, pw - pw // 2

    def forward(self, x, mode: str = "eval", rng: RngStream | None = None):
        _check_mode(mode)
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"conv2d expects (N, {self.in_channels}, H, W), got {x.shape}")
        ke, pt, pb, pl, pr = self._pad_amounts(x.shape[2], x.shape[3])
        xp = x if (pt | pb | pl | pr) == 0 else np.pad(
            x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        if xp.shape[2] < ke or xp.shape[3] < ke:
            raise ImageTooSmallError(
                f"input {x.shape[2]}x{x.shape[3]} smaller than effective kernel {ke}")
        xp = np.ascontiguousarray(xp)
        # im2col + GEMM: copying the strided patch view into a contiguous
        # matrix lets the contraction dispatch to BLAS
        patches = _patch_view(xp, self.kernel_size, self.stride, self.dilation)
        n, _, oh, ow = patches.shape[0], patches.shape[1], patches.shape[2], patches.shape[3]
        cols = np.ascontiguousarray(patches.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * oh * ow, -1)
        w2 = self.params["w"].reshape(self.out_channels, -1)
        y = (cols @ w2.T).reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2)
        y = y + self.params["b"][None, :, None, None]
        return y, (xp, cols, (pt, pl), x.shape)

    def backward(self, cache, grad_out):
        xp, cols, (pt, pl), x_shape = cache
        gy = np.asarray(grad_out)
        n = xp.shape[0]
        ke = (self.kernel_size - 1) * self.dilation + 1
        oh = (xp.shape[2] - ke) // self.stride + 1
        ow = (xp.shape[3] - ke) // self.stride + 1
        if gy.shape != (n, self.out_channels, oh, ow):
            raise ShapeMismatchError(f"upstream grad shape {gy.shape} does not match forward output")
        gy2 = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(n * oh * ow, -1)
        gw = (gy2.T @ cols).reshape(self.params["w"].shape)
        gb = gy.sum(axis=(0, 2, 3))
        # col2im: push column gradients back onto the padded input
        dcols = gy2 @ self.params["w"].reshape(self.out_channels, -1)
        dpatch = dcols.reshape(n, oh, ow, self.in_channels,
                               self.kernel_size, self.kernel_size)
        gxp = np.zeros(xp.shape, dtype=dcols.dtype)
        st, dil, k = self.stride, self.dilation, self.kernel_size
        for i in range(k):
            for j in range(k):
                rows = slice(i * dil, i * dil + (oh - 1) * st + 1, st)
                etc = slice(j * dil, j * dil + (ow - 1) * st + 1, st)
                gxp[:, :, rows, etc] += dpatch[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pt:pt + x_shape[2], pl:pl + x_shape[3]]
        return gx, {"w": gw, "b": gb}


class ReLU(Layer):
    def forward(self, x, mode: str = "eval", rng: RngStream | None = None):
        _check_mode(mode)
        x = np.asarray(x)
        return np.maximum(x, 0), (x > 0)

    def backward(self, cache, grad_out):
        return np.asarray(grad_out) * cache, {}


class GlobalAvgPool(Layer):
    """Per-channel spatial mean: (N, C, H, W) -> (N, C)."""

    def forward(self, x, mode: str = "eval", rng: RngStream | None = None):
        _check_mode(mode)
        x = np.asarray(x)
        if x.ndim != 4:
            raise ShapeMismatchError(f"gap expects (N, C, H, W), got {x.shape}")
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, cache, grad_out):
        n, c, h, w = cache
        gy = np.asarray(grad_out)
        if gy.shape != (n, c):
            raise ShapeMismatchError(f"upstream grad shape {gy.shape}, expected {(n, c)}")
        gx = np.broadcast_to(gy[:, :, None, None], (n, c, h, w)) / (h * w)
        return gx.copy(), {}


class Dense(Layer):
    """Affine map (N, F) -> (N, O)."""

    def __init__(self, in_features: int, out_features: int,
                 rng: RngStream | None = None, weight_scale: float | None = None,
                 dtype=np.float32):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ConfigError("feature counts must be >= 1")
        self.in_features = in_features
        self.out_features = out_features
        scale = np.sqrt(2.0 / in_features) if weight_scale is None else weight_scale
        if rng is None:
            w = np.zeros((in_features, out_features))
        else:
            w = rng.normal(0.0, scale, (in_features, out_features))
        self.params["w"] = np.asarray(w, dtype=dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, mode: str = "eval", rng: RngStream | None = None):
        _check_mode(mode)
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatchError(
                f"dense expects (N, {self.in_features}), got {x.shape}")
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, cache, grad_out):
        x = cache
        gy = np.asarray(grad_out)
        if gy.shape != (x.shape[0], self.out_features):
            raise ShapeMismatchError(f"upstream grad shape {gy.shape} does not match forward output")
        return gy @ self.params["w"].T, {"w": x.T @ gy, "b": gy.sum(axis=0)}


class Dropout(Layer):
    """Inverted dropout: train masks and rescales by 1/(1-p), eval is identity."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"drop probability must be in [0, 1), got {p}")
        self.p = float(p)

    def forward(self, x, mode: str = "eval", rng: RngStream | None = None):
        _check_mode(mode)
        x = np.asarray(x)
        if mode == "eval" or self.p == 0.0:
            return x, None
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng")
        keep = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * keep, keep

    def backward(self, cache, grad_out):
        gy = np.asarray(grad_out)
        return (gy if cache is None else gy * cache), {}


class Softmax(Layer):
    """Row-wise stable softmax over the last axis."""

    def forward(self, x, mode: str = "eval", rng: RngStream | None = None):
        _check_mode(mode)
        x = np.asarray(x)
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, cache, grad_out):
        y = cache
        gy = np.asarray(grad_out)
        inner = (gy * y).sum(axis=-1, keepdims=True)
        return y * (gy - inner), {}


def concat_channels(parts):
    """Concatenate along axis 1; 4-D inputs must share spatial extents."""
    parts = [np.asarray(p) for p in parts]
    if len(parts) < 2:
        raise ShapeMismatchError("concat needs at least two inputs")
    nd = parts[0].ndim
    if nd not in (2, 4) or any(p.ndim != nd for p in parts):
        raise ShapeMismatchError("concat inputs must all be 2-D or all 4-D")
    head = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != head[0] or p.shape[2:] != head[2:]:
            raise ShapeMismatchError(
                f"concat inputs disagree outside the channel axis: {head} vs {p.shape}")
    return np.concatenate(parts, axis=1)


def split_channels(grad, sizes):
    """Inverse of concat_channels for the backward pass."""
    grad = np.asarray(grad)
    if sum(sizes) != grad.shape[1]:
        raise ShapeMismatchError(f"split sizes {sizes} do not cover axis of {grad.shape}")
    out, at = [], 0
    for s in sizes:
        out.append(grad[:, at:at + s])
        at += s
    return out


# --- losses ---------------------------------------------------------------

def _loss_pair(predicted, target):
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"loss shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ShapeMismatchError("loss on empty tensors")
    return p, t


def _mse(p, t):
    e = p - t
    return float(np.mean(e ** 2)), 2.0 * e / e.size


def _mae(p, t):
    e = p - t
    return float(np.mean(np.abs(e))), np.sign(e) / e.size


def _mape(p, t):
    if np.any(t == 0):
        raise DegenerateInputError("mape is undefined for zero targets")
    e = (t - p) / t
    return float(np.mean(np.abs(e))), np.sign(p - t) / (np.abs(t) * t.size)


def _msle(p, t):
    if np.any(p <= -1) or np.any(t <= -1):
        raise DegenerateInputError("msle needs all values > -1")
    d = np.log1p(t) - np.log1p(p)
    return float(np.mean(d ** 2)), -2.0 * d / ((1.0 + p) * d.size)


def _logcosh(p, t):
    e = p - t
    # log(cosh(e)) = |e| + log1p(exp(-2|e|)) - log 2, stable for large |e|
    a = np.abs(e)
    val = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
    return float(np.mean(val)), np.tanh(e) / e.size


def _huber(p, t, delta):
    e = p - t
    a = np.abs(e)
    quad = a <= delta
    val = np.where(quad, 0.5 * e ** 2, delta * a - 0.5 * delta ** 2)
    grad = np.where(quad, e, delta * np.sign(e)) / e.size
    return float(np.mean(val)), grad


def _cross_entropy(p, t):
    # p: predicted class probabilities (N, K); t: one-hot rows.
    # Sum over classes, mean over rows, so a K-way uniform guess scores ln K.
    if p.ndim != 2:
        raise ShapeMismatchError(f"cross_entropy expects (N, K), got {p.shape}")
    n = p.shape[0]
    clipped = np.clip(p, 1e-12, None)
    val = float(-np.sum(t * np.log(clipped)) / n)
    return val, -t / (clipped * n)


LOSS_KINDS = ("mse", "mae", "mape", "msle", "logcosh", "huber", "cross_entropy")


def loss_value_and_grad(kind: str, predicted, target, huber_delta: float = 1.0):
    """Return (scalar loss, gradient w.r.t. predicted) for one loss kind."""
    p, t = _loss_pair(predicted, target)
    if kind == "mse":
        return _mse(p, t)
    if kind == "mae":
        return _mae(p, t)
    if kind == "mape":
        return _mape(p, t)
    if kind == "msle":
        return _msle(p, t)
    if kind == "logcosh":
        return _logcosh(p, t)
    if kind == "huber":
        if huber_delta <= 0:
            raise ConfigError(f"huber delta must be > 0, got {huber_delta}")
        return _huber(p, t, float(huber_delta))
    if kind == "cross_entropy":
        return _cross_entropy(p, t)
    raise ConfigError(f"unknown loss {kind!r}, expected one of {LOSS_KINDS}")


# --- optimizer ------------------------------------------------------------

@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant decay: base_lr * drop_factor ** (epoch // drop_period)."""

    base_lr: float = 1e-2
    drop_factor: float = 0.5
    drop_period: int = 10

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0.0 < self.drop_factor <= 1.0:
            raise ConfigError(f"drop_factor must be in (0, 1], got {self.drop_factor}")
        if self.drop_period < 1:
            raise ConfigError(f"drop_period must be >= 1, got {self.drop_period}")

    def at_epoch(self, epoch: int) -> float:
        if epoch < 0:
            raise ConfigError(f"epoch must be >= 0, got {epoch}")
        return self.base_lr * self.drop_factor ** (epoch // self.drop_period)


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, epsilon=1e-8.

    Parameters are a name -> array dict and are updated in place, so the
    dict can simply reference the live layer parameter arrays.
    """

    def __init__(self, params: dict[str, np.ndarray],
                 schedule: LrSchedule | None = None,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.schedule = schedule if schedule is not None else LrSchedule()
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], epoch: int) -> float:
        """Apply one update; returns the effective learning rate used."""
        if set(grads) != set(self.params):
            raise ShapeMismatchError("gradient keys do not match parameter keys")
        lr = self.schedule.at_epoch(epoch)
        self.step_count += 1
        t = self.step_count
        for k, p in self.params.items():
            g = np.asarray(grads[k], dtype=np.float64)
            if g.shape != p.shape:
                raise ShapeMismatchError(f"grad shape {g.shape} != param shape {p.shape} for {k!r}")
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g ** 2
            m_hat = self.m[k] / (1 - self.beta1 ** t)
            v_hat = self.v[k] / (1 - self.beta2 ** t)
            p -= (lr * m_hat / (np.sqrt(v_hat) + self.epsilon)).astype(p.dtype)
        return lr


# --- gradient checking ----------------------------------------------------

def relative_error(analytic, numeric) -> float:
    """max over elements of |a - n| / max(|a| + |n|, 1e-12)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ShapeMismatchError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-12)
    return float(np.max(np.abs(a - n) / denom))


def finite_difference(scalar_fn, array: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar_fn() w.r.t. array (perturbed in place)."""
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        f_plus = scalar_fn()
        flat[i] = orig - epsilon
        f_minus = scalar_fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * epsilon)
    return grad


def grad_check_layer(layer: Layer, x: np.ndarray, mode: str = "eval",
                     rng: RngStream | None = None, epsilon: float = 1e-5) -> dict[str, float]:
    """Max relative error of analytic vs numeric grads, keyed by 'input' and param names.

    Uses the deterministic probe loss sum(output * probe).  Stochastic
    layers replay the same mask because every evaluation forwards with a
    clone of the supplied rng.
    """
    x = np.asarray(x, dtype=np.float64)

    def run():
        r = rng.clone() if rng is not None else None
        return layer.forward(x, mode=mode, rng=r)

    y0, cache0 = run()
    probe = np.cos(np.arange(y0.size, dtype=np.float64) * 0.7311).reshape(y0.shape)
    gx, gp = layer.backward(cache0, probe)

    def scalar():
        y, _ = run()
        return float(np.sum(y * probe))

    report = {"input": relative_error(gx, finite_difference(scalar, x, epsilon))}
    for name, arr in layer.params.items():
        report[name] = relative_error(gp[name], finite_difference(scalar, arr, epsilon))
    return report
