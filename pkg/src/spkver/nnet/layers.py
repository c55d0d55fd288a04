"""Layer kinds with explicit forward and reverse-mode backward passes.

Frame-level layers take ``(batch, frames, dim)`` arrays and shrink the frame
axis by their context extent; utterance-level layers take ``(batch, dim)``.
``forward`` caches what ``backward`` needs; ``backward`` stores parameter
gradients in ``self.grads`` and returns the input gradient.
"""

from __future__ import annotations

import numpy as np

from .arch import LayerSpec

POOL_VARIANCE_FLOOR = 1e-10


def splice(x: np.ndarray, context) -> np.ndarray:
    """(B, T, D) -> (B, T - extent, len(context) * D); output frame j sees input j - min(context) + c."""
    lo, hi = min(context), max(context)
    t_out = x.shape[1] - (hi - lo)
    if t_out < 1:
        raise ValueError(f"{x.shape[1]} frames cannot cover context {tuple(context)}")
    return np.concatenate([x[:, c - lo : c - lo + t_out] for c in context], axis=2)


def unsplice(dout: np.ndarray, context, t_in: int) -> np.ndarray:
    lo = min(context)
    b, t_out, width = dout.shape
    d = width // len(context)
    dx = np.zeros((b, t_in, d), dtype=dout.dtype)
    for i, c in enumerate(context):
        dx[:, c - lo : c - lo + t_out] += dout[:, :, i * d : (i + 1) * d]
    return dx


def mfm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max-feature-map over channel halves; returns output and the first-half mask."""
    k = x.shape[-1]
    if k % 2:
        raise ValueError(f"MFM needs an even channel count, got {k}")
    a, b = x[..., : k // 2], x[..., k // 2 :]
    mask = a >= b
    return np.where(mask, a, b), mask


def mfm_activation(x: np.ndarray) -> np.ndarray:
    return mfm(x)[0]


def mfm_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.concatenate([dout * mask, dout * ~mask], axis=-1)


def _uniform(rng, fan_in, shape, dtype, gain=6.0):
    bound = np.sqrt(gain / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def out_frames(self, t_in: int) -> int:
        return t_in


class TdnnLayer(Layer):
    kind = "tdnn"

    def __init__(self, in_dim: int, out_dim: int, context=(0,), activation: str = "relu", rng=None, dtype=np.float32, init_gain=6.0):
        super().__init__()
        self.context = tuple(context)
        self.activation = activation
        fan_in = in_dim * len(self.context)
        rng = rng or np.random.default_rng(0)
        self.params = {"W": _uniform(rng, fan_in, (fan_in, out_dim), dtype, init_gain), "b": np.zeros(out_dim, dtype)}

    def out_frames(self, t_in):
        return t_in - (max(self.context) - min(self.context))

    def forward(self, x):
        xs = splice(x, self.context)
        z = xs @ self.params["W"] + self.params["b"]
        y = np.maximum(z, 0) if self.activation == "relu" else z
        self._cache = (xs, z, x.shape[1])
        return y

    def backward(self, dy):
        xs, z, t_in = self._cache
        dz = dy * (z > 0) if self.activation == "relu" else dy
        w = self.params["W"]
        self.grads["W"] = xs.reshape(-1, xs.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        self.grads["b"] = dz.sum(axis=(0, 1))
        return unsplice(dz @ w.T, self.context, t_in)


class FtdnnLayer(Layer):
    """Two linear factors (context 1 -> inner, context 2 -> size) then ReLU."""

    kind = "ftdnn"

    def __init__(self, in_dim, out_dim, inner, context1, context2, rng=None, dtype=np.float32):
        super().__init__()
        self.context1, self.context2 = tuple(context1), tuple(context2)
        rng = rng or np.random.default_rng(0)
        f1 = in_dim * len(self.context1)
        f2 = inner * len(self.context2)
        self.params = {
            "W1": _uniform(rng, f1, (f1, inner), dtype, 3.0),
            "W2": _uniform(rng, f2, (f2, out_dim), dtype),
            "b": np.zeros(out_dim, dtype),
        }

    def out_frames(self, t_in):
        e1 = max(self.context1) - min(self.context1)
        e2 = max(self.context2) - min(self.context2)
        return t_in - e1 - e2

    def forward(self, x):
        x1 = splice(x, self.context1)
        h = x1 @ self.params["W1"]
        x2 = splice(h, self.context2)
        z = x2 @ self.params["W2"] + self.params["b"]
        self._cache = (x1, h.shape[1], x2, z, x.shape[1])
        return np.maximum(z, 0)

    def backward(self, dy):
        x1, t_h, x2, z, t_in = self._cache
        dz = dy * (z > 0)
        self.grads["W2"] = x2.reshape(-1, x2.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        self.grads["b"] = dz.sum(axis=(0, 1))
        dh = unsplice(dz @ self.params["W2"].T, self.context2, t_h)
        self.grads["W1"] = x1.reshape(-1, x1.shape[-1]).T @ dh.reshape(-1, dh.shape[-1])
        return unsplice(dh @ self.params["W1"].T, self.context1, t_in)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LstmpLayer(Layer):
    """LSTM with projected recurrence fed back from ``t + delay`` (delay < 0).

    Output per frame is ``concat(recurrent projection, non-recurrent projection)``.
    The input is optionally spliced over ``context`` first.
    """

    kind = "lstm_p"

    def __init__(self, in_dim, cell, rproj, nrproj, delay=-3, context=(0,), rng=None, dtype=np.float32):
        super().__init__()
        if delay >= 0:
            raise ValueError("LSTM recurrence delay must be negative")
        self.cell, self.rproj, self.nrproj, self.lag = cell, rproj, nrproj, -delay
        self.context = tuple(context)
        rng = rng or np.random.default_rng(0)
        d_in = in_dim * len(self.context)
        self.params = {
            "Wx": _uniform(rng, d_in + rproj, (d_in, 4 * cell), dtype, 3.0),
            "Wh": _uniform(rng, d_in + rproj, (rproj, 4 * cell), dtype, 3.0),
            "b": np.zeros(4 * cell, dtype),
            "Wr": _uniform(rng, cell, (cell, rproj), dtype, 3.0),
            "Wp": _uniform(rng, cell, (cell, nrproj), dtype, 3.0),
        }

    def out_frames(self, t_in):
        return t_in - (max(self.context) - min(self.context))

    def forward(self, x):
        p = self.params
        xs = splice(x, self.context)
        b, t, _ = xs.shape
        h, lag = self.cell, self.lag
        zx = xs @ p["Wx"] + p["b"]
        dtype = zx.dtype
        gates = np.zeros((b, t, 4 * h), dtype)
        c = np.zeros((b, t, h), dtype)
        m = np.zeros((b, t, h), dtype)
        r = np.zeros((b, t, self.rproj), dtype)
        for step in range(t):
            z = zx[:, step]
            if step >= lag:
                z = z + r[:, step - lag] @ p["Wh"]
            i, f, o = _sigmoid(z[:, :h]), _sigmoid(z[:, h : 2 * h]), _sigmoid(z[:, 3 * h :])
            g = np.tanh(z[:, 2 * h : 3 * h])
            c_prev = c[:, step - lag] if step >= lag else 0.0
            c[:, step] = f * c_prev + i * g
            m[:, step] = o * np.tanh(c[:, step])
            r[:, step] = m[:, step] @ p["Wr"]
            gates[:, step] = np.concatenate([i, f, g, o], axis=1)
        out = np.concatenate([r, m @ p["Wp"]], axis=2)
        self._cache = (xs, gates, c, m, r, x.shape[1])
        return out

    def backward(self, dy):
        p = self.params
        xs, gates, c, m, r, t_in = self._cache
        b, t, _ = xs.shape
        h, lag, R = self.cell, self.lag, self.rproj
        dr = dy[:, :, :R].copy()
        dp = dy[:, :, R:]
        dc = np.zeros_like(c)
        dz = np.zeros_like(gates)
        dWh = np.zeros_like(p["Wh"])
        for step in range(t - 1, -1, -1):
            i, f, g, o = (gates[:, step, k * h : (k + 1) * h] for k in range(4))
            tc = np.tanh(c[:, step])
            dm = dr[:, step] @ p["Wr"].T + dp[:, step] @ p["Wp"].T
            dct = dc[:, step] + dm * o * (1 - tc**2)
            c_prev = c[:, step - lag] if step >= lag else np.zeros_like(tc)
            dzs = np.concatenate(
                [dct * g * i * (1 - i), dct * c_prev * f * (1 - f), dct * i * (1 - g**2), dm * tc * o * (1 - o)], axis=1
            )
            dz[:, step] = dzs
            if step >= lag:
                dc[:, step - lag] += dct * f
                dr[:, step - lag] += dzs @ p["Wh"].T
                dWh += r[:, step - lag].T @ dzs
        flat_m = m.reshape(-1, h)
        self.grads["Wr"] = flat_m.T @ dr.reshape(-1, R)
        self.grads["Wp"] = flat_m.T @ dp.reshape(-1, dp.shape[-1])
        self.grads["Wh"] = dWh
        self.grads["Wx"] = xs.reshape(-1, xs.shape[-1]).T @ dz.reshape(-1, 4 * h)
        self.grads["b"] = dz.sum(axis=(0, 1))
        return unsplice(dz @ p["Wx"].T, self.context, t_in)


class ResBlock(Layer):
    """y = x + G(x), G = TDNN{-1,0,1} -> MFM [-> TDNN{0} -> MFM] -> TDNN{0}.

    Inner width is ``2 * f * base`` before MFM and ``f * base`` after. Edge
    frames are replicated so the block keeps the frame count.
    """

    kind = "mfm_tdnn_resblock"
    context = (-1, 0, 1)

    def __init__(self, dim, f=1, base=64, extended=False, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        inner = f * base
        self.extended = extended
        self.params = {
            "W1": _uniform(rng, 3 * dim, (3 * dim, 2 * inner), dtype, 3.0),
            "b1": np.zeros(2 * inner, dtype),
        }
        if extended:
            self.params["W2"] = _uniform(rng, inner, (inner, 2 * inner), dtype, 3.0)
            self.params["b2"] = np.zeros(2 * inner, dtype)
        self.params["W3"] = _uniform(rng, inner, (inner, dim), dtype, 0.5)
        self.params["b3"] = np.zeros(dim, dtype)

    def forward(self, x):
        p = self.params
        xp = np.concatenate([x[:, :1], x, x[:, -1:]], axis=1)
        xs = splice(xp, self.context)
        h, mask1 = mfm(xs @ p["W1"] + p["b1"])
        mid = None
        if self.extended:
            mid = h
            h, mask2 = mfm(h @ p["W2"] + p["b2"])
        else:
            mask2 = None
        g = h @ p["W3"] + p["b3"]
        self._cache = (xs, mask1, mid, mask2, h)
        return x + g

    def backward(self, dy):
        p = self.params
        xs, mask1, mid, mask2, h = self._cache
        flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
        self.grads["W3"] = flat(h).T @ flat(dy)
        self.grads["b3"] = dy.sum(axis=(0, 1))
        dh = dy @ p["W3"].T
        if self.extended:
            dz2 = mfm_backward(dh, mask2)
            self.grads["W2"] = flat(mid).T @ flat(dz2)
            self.grads["b2"] = dz2.sum(axis=(0, 1))
            dh = dz2 @ p["W2"].T
        dz1 = mfm_backward(dh, mask1)
        self.grads["W1"] = flat(xs).T @ flat(dz1)
        self.grads["b1"] = dz1.sum(axis=(0, 1))
        dxp = unsplice(dz1 @ p["W1"].T, self.context, xs.shape[1] + 2)
        dx = dy + dxp[:, 1:-1]
        dx[:, 0] += dxp[:, 0]
        dx[:, -1] += dxp[:, -1]
        return dx


class StatsPooling(Layer):
    kind = "stats_pooling"

    def forward(self, x):
        if x.shape[1] < 1:
            raise ValueError("statistics pooling needs at least one frame")
        mu = x.mean(axis=1)
        var = x.var(axis=1)
        std = np.sqrt(np.maximum(var, POOL_VARIANCE_FLOOR))
        self._cache = (x, mu, std, var > POOL_VARIANCE_FLOOR)
        return np.concatenate([mu, std], axis=1)

    def backward(self, dy):
        x, mu, std, live = self._cache
        t, d = x.shape[1], mu.shape[1]
        dmu, dstd = dy[:, :d], dy[:, d:] * live
        return (dmu[:, None, :] + dstd[:, None, :] * (x - mu[:, None, :]) / std[:, None, :]) / t


def stats_pooling(x: np.ndarray) -> np.ndarray:
    """(T, D) or (B, T, D) -> concat(mean, std) over frames."""
    squeeze = x.ndim == 2
    out = StatsPooling().forward(x[None] if squeeze else x)
    return out[0] if squeeze else out


class DenseLayer(Layer):
    kind = "dense"

    def __init__(self, in_dim, out_dim, activation="relu", rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.activation = activation
        self.params = {"W": _uniform(rng, in_dim, (in_dim, out_dim), dtype), "b": np.zeros(out_dim, dtype)}

    def forward(self, x):
        z = x @ self.params["W"] + self.params["b"]
        self._cache = (x, z)
        self.pre_activation = z
        return np.maximum(z, 0) if self.activation == "relu" else z

    def backward(self, dy):
        x, z = self._cache
        dz = dy * (z > 0) if self.activation == "relu" else dy
        self.grads["W"] = x.T @ dz
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"].T


def build_layer(spec: LayerSpec, in_dim: int, num_speakers: int, rng, dtype) -> Layer:
    from .losses import AsoftmaxHead, SoftmaxHead

    k = spec.kind
    if k == "tdnn":
        return TdnnLayer(in_dim, spec.size, spec.context, spec.activation, rng, dtype)
    if k == "ftdnn":
        return FtdnnLayer(in_dim, spec.size, spec.inner_size, spec.context, spec.context2, rng, dtype)
    if k == "lstm_p":
        ls = spec.lstm
        return LstmpLayer(in_dim, ls.cell_dim, ls.recurrent_proj, ls.nonrecurrent_proj, ls.delay, spec.context, rng, dtype)
    if k == "mfm_tdnn_resblock":
        if in_dim != spec.size:
            raise ValueError(f"residual block of width {spec.size} fed {in_dim}-dim input")
        return ResBlock(spec.size, spec.f, spec.base, spec.extended, rng, dtype)
    if k == "stats_pooling":
        return StatsPooling()
    if k == "dense":
        return DenseLayer(in_dim, spec.size, spec.activation, rng, dtype)
    if k == "softmax_head":
        return SoftmaxHead(in_dim, num_speakers, rng, dtype)
    if k == "asoftmax_head":
        return AsoftmaxHead(in_dim, num_speakers, spec.margin, rng, dtype)
    raise ValueError(f"unknown layer kind {k!r}")


def output_dim(spec: LayerSpec, in_dim: int) -> int:
    if spec.kind == "stats_pooling":
        return 2 * in_dim
    if spec.kind == "lstm_p":
        return spec.lstm.recurrent_proj + spec.lstm.nonrecurrent_proj
    if spec.kind == "mfm_tdnn_resblock":
        return in_dim
    return spec.size
