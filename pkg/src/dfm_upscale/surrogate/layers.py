"""Neural network layers with explicit forward/backward passes.

Data layout is channels-last: (batch, height, width, channels). Convolutions
are 3x3, stride 1, no padding ("valid"); pooling is 2x2 max with stride 2,
truncating an odd trailing row/column. Parameters are stored in the layer's
dtype; reductions accumulate in float64 when dtype is float64 (used by the
finite-difference gradient check).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Base class; layers expose params/grads dicts keyed by name."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def output_shape(self, shape):
        raise NotImplementedError

    def state(self) -> dict:
        """Non-trainable state persisted in checkpoints."""
        return {}

    def load_state(self, state: dict):
        pass


def he_uniform(rng, fan_in, shape, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv3x3(Layer):
    def __init__(self, in_channels, out_channels, rng, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = 9 * in_channels
        self.params["kernel"] = he_uniform(rng, fan_in,
                                           (3, 3, in_channels, out_channels),
                                           dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self._cache = None

    def output_shape(self, shape):
        h, w, c = shape
        if h < 3 or w < 3:
            raise ValueError(f"conv input {h}x{w} too small for a 3x3 kernel")
        if c != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} channels, got {c}")
        return (h - 2, w - 2, self.out_channels)

    @staticmethod
    def _im2col(x):
        # (B, H, W, C) -> (B, H-2, W-2, 3, 3, C) view -> (B*(H-2)*(W-2), 9C)
        win = sliding_window_view(x, (3, 3), axis=(1, 2))
        b, ho, wo, c, kh, kw = win.shape
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo,
                                                       kh * kw * c)
        return cols, (b, ho, wo)

    def forward(self, x, train: bool):
        cols, (b, ho, wo) = self._im2col(x)
        w = self.params["kernel"].reshape(9 * self.in_channels,
                                          self.out_channels)
        out = cols @ w + self.params["bias"]
        self._cache = (cols, x.shape)
        return out.reshape(b, ho, wo, self.out_channels)

    def backward(self, dout):
        cols, x_shape = self._cache
        b, h, w_in, c = x_shape
        ho, wo = h - 2, w_in - 2
        dflat = dout.reshape(b * ho * wo, self.out_channels)
        wmat = self.params["kernel"].reshape(9 * c, self.out_channels)
        self.grads["kernel"] = (cols.T @ dflat).reshape(3, 3, c,
                                                        self.out_channels)
        self.grads["bias"] = dflat.sum(axis=0)
        # input gradient: full correlation of dout with the flipped kernel
        dpad = np.zeros((b, h + 2, w_in + 2, self.out_channels),
                        dtype=dout.dtype)
        dpad[:, 2:2 + ho, 2:2 + wo] = dout.reshape(b, ho, wo,
                                                   self.out_channels)
        wflip = self.params["kernel"][::-1, ::-1].transpose(0, 1, 3, 2)
        cols2, (b2, h2, w2) = self._im2col(dpad)
        dx = cols2 @ wflip.reshape(9 * self.out_channels, c)
        return dx.reshape(b, h, w_in, c)


class BatchNorm(Layer):
    """Per-channel batch normalization over (batch, height, width)."""

    def __init__(self, channels, dtype=np.float32, momentum=0.1,
                 eps=1e-5):
        super().__init__()
        self.params["scale"] = np.ones(channels, dtype=dtype)
        self.params["shift"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def output_shape(self, shape):
        return shape

    def forward(self, x, train: bool):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes, dtype=np.float64)
            var = x.var(axis=axes, dtype=np.float64)
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.astype(x.dtype)) * inv_std.astype(x.dtype)
        self._cache = (xhat, inv_std.astype(x.dtype), axes, train)
        return xhat * self.params["scale"] + self.params["shift"]

    def backward(self, dout):
        xhat, inv_std, axes, train = self._cache
        self.grads["scale"] = (dout * xhat).sum(axis=axes)
        self.grads["shift"] = dout.sum(axis=axes)
        dxhat = dout * self.params["scale"]
        if not train:
            return dxhat * inv_std
        return (dxhat - dxhat.mean(axis=axes)
                - xhat * (dxhat * xhat).mean(axis=axes)) * inv_std

    def state(self):
        return {"running_mean": self.running_mean.copy(),
                "running_var": self.running_var.copy()}

    def load_state(self, state):
        self.running_mean = np.asarray(state["running_mean"], np.float64)
        self.running_var = np.asarray(state["running_var"], np.float64)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def output_shape(self, shape):
        return shape

    def forward(self, x, train: bool):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0)


class MaxPool2(Layer):
    def output_shape(self, shape):
        h, w, c = shape
        if h < 2 or w < 2:
            raise ValueError(f"pool input {h}x{w} too small")
        return (h // 2, w // 2, c)

    def forward(self, x, train: bool):
        b, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        xt = x[:, :2 * ho, :2 * wo]
        win = xt.reshape(b, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(b, ho, wo, c, 4)
        arg = win.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        (b, h, w, c), arg = self._cache
        ho, wo = h // 2, w // 2
        dwin = np.zeros((b, ho, wo, c, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        dx = np.zeros((b, h, w, c), dtype=dout.dtype)
        dx[:, :2 * ho, :2 * wo] = dwin.reshape(b, ho, wo, c, 2, 2) \
            .transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * ho, 2 * wo, c)
        return dx


class Flatten(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train: bool):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = he_uniform(rng, in_features,
                                           (in_features, out_features), dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ValueError(
                f"dense expects {self.in_features} features, got {shape}")
        return (self.out_features,)

    def forward(self, x, train: bool):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] = self._x.T @ dout
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T
