"""Minimal dense-tensor neural-network core.

Layers operate batch-first on float64 numpy arrays and implement exact
analytic backward passes (through time for the recurrent layers). A
forward call in training mode records the intermediates backward needs;
inference-mode forwards keep no state. Weights initialize uniformly in
±1/sqrt(fan_in) with zero biases, deterministically from a seed.

Supported layers are exactly what the model zoo needs: parallel-dilation
1-D convolution banks, GRU/LSTM, dense, group norm, global pooling, and
pointwise activations.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphNotRecorded, ShapeMismatch


# ---------------------------------------------------------------------------
# activations as plain functions


def sigmoid(x):
    # exp may overflow to inf for very negative x; 1/(1+inf) -> 0 is exact
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax: strictly positive, sums to 1 along `axis`."""
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def relu(v):
    return np.maximum(v, 0.0)


def leaky_relu(v: np.ndarray, slope: float = 0.01) -> np.ndarray:
    """v where v >= 0, slope*v elsewhere."""
    return np.where(v >= 0, v, slope * v)


class Layer:
    """Base: owns named parameter arrays and matching gradient arrays."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _register(self, name: str, shape: tuple[int, ...], init: str = "weight", fan_in: int = 0):
        self.params[name] = np.zeros(shape, dtype=np.float64)
        self.grads[name] = np.zeros(shape, dtype=np.float64)
        self._init_plan = getattr(self, "_init_plan", [])
        self._init_plan.append((name, init, fan_in))

    def init(self, rng: np.random.Generator):
        for name, kind, fan_in in getattr(self, "_init_plan", []):
            if kind == "weight":
                bound = 1.0 / np.sqrt(fan_in)
                self.params[name][...] = rng.uniform(-bound, bound, self.params[name].shape)
            elif kind == "one":
                self.params[name][...] = 1.0
            else:  # zero
                self.params[name][...] = 0.0

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise GraphNotRecorded(
                f"{type(self).__name__}.backward() without a recorded forward pass"
            )
        cache, self._cache = self._cache, None
        return cache

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


class Dense(Layer):
    """y = x @ w + b with x of shape (B, in)."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.bias = bias
        self._register("w", (in_features, out_features), fan_in=in_features)
        if bias:
            self._register("b", (out_features,), init="zero")

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"Dense expected (B, {self.in_features}), got {x.shape}")
        y = x @ self.params["w"]
        if self.bias:
            y += self.params["b"]
        if train:
            self._cache = x
        return y

    def backward(self, dy):
        x = self._take_cache()
        self.grads["w"] += x.T @ dy
        if self.bias:
            self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["w"].T


class Activation(Layer):
    """Pointwise nonlinearity; kind in {relu, leaky_relu, tanh, sigmoid}."""

    def __init__(self, kind: str, slope: float = 0.01):
        super().__init__()
        if kind not in ("relu", "leaky_relu", "tanh", "sigmoid"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.slope = slope

    def forward(self, x, train=False):
        if self.kind == "relu":
            y = relu(x)
        elif self.kind == "leaky_relu":
            y = leaky_relu(x, self.slope)
        elif self.kind == "tanh":
            y = np.tanh(x)
        else:
            y = sigmoid(x)
        if train:
            self._cache = (x, y)
        return y

    def backward(self, dy):
        x, y = self._take_cache()
        if self.kind == "relu":
            return dy * (x > 0)
        if self.kind == "leaky_relu":
            return dy * np.where(x >= 0, 1.0, self.slope)
        if self.kind == "tanh":
            return dy * (1.0 - y * y)
        return dy * y * (1.0 - y)


class Conv1dBank(Layer):
    """Parallel dilated 1-D cross-correlations, concatenated along channels.

    Input (B, C_in, T). Each dilation d in `dilations` runs its own
    convolution with the shared kernel size and `out_per_kernel` output
    channels; branch outputs stack in dilation order, so the output is
    (B, len(dilations)*out_per_kernel, T). Zero same-padding keeps the
    time length; for kernel k and dilation d the span (k-1)*d is split
    evenly (left gets the floor).
    """

    def __init__(self, in_channels: int, out_per_kernel: int, kernel_size: int, dilations):
        super().__init__()
        dils = tuple(int(d) for d in dilations)
        if not dils or len(set(dils)) != len(dils) or any(d <= 0 for d in dils):
            raise ValueError("dilations must be non-empty, positive, distinct")
        self.in_channels = in_channels
        self.out_per_kernel = out_per_kernel
        self.kernel_size = kernel_size
        self.dilations = dils
        self.out_channels = len(dils) * out_per_kernel
        self._register(
            "w",
            (len(dils), out_per_kernel, in_channels, kernel_size),
            fan_in=in_channels * kernel_size,
        )
        self._register("b", (len(dils), out_per_kernel), init="zero")

    def _pads(self, d: int) -> tuple[int, int]:
        span = (self.kernel_size - 1) * d
        return span // 2, span - span // 2

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"Conv1dBank expected (B, {self.in_channels}, T), got {x.shape}"
            )
        b, _, t = x.shape
        w, bias = self.params["w"], self.params["b"]
        y = np.empty((b, self.out_channels, t), dtype=np.float64)
        pads = []
        for i, d in enumerate(self.dilations):
            left, right = self._pads(d)
            xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
            pads.append(xp)
            br = np.zeros((b, self.out_per_kernel, t), dtype=np.float64)
            for j in range(self.kernel_size):
                # tap j reads x at offset t + j*d into the padded signal
                seg = xp[:, :, j * d : j * d + t]
                br += np.einsum("bct,oc->bot", seg, w[i, :, :, j], optimize=True)
            br += bias[i][None, :, None]
            y[:, i * self.out_per_kernel : (i + 1) * self.out_per_kernel] = br
        if train:
            self._cache = (x.shape, pads)
        return y

    def backward(self, dy):
        x_shape, pads = self._take_cache()
        b, _, t = x_shape
        w = self.params["w"]
        dx = np.zeros(x_shape, dtype=np.float64)
        for i, d in enumerate(self.dilations):
            left, _ = self._pads(d)
            xp = pads[i]
            dxp = np.zeros_like(xp)
            dy_br = dy[:, i * self.out_per_kernel : (i + 1) * self.out_per_kernel]
            self.grads["b"][i] += dy_br.sum(axis=(0, 2))
            for j in range(self.kernel_size):
                seg = xp[:, :, j * d : j * d + t]
                self.grads["w"][i, :, :, j] += np.einsum(
                    "bot,bct->oc", dy_br, seg, optimize=True
                )
                dxp[:, :, j * d : j * d + t] += np.einsum(
                    "bot,oc->bct", dy_br, w[i, :, :, j], optimize=True
                )
            dx += dxp[:, :, left : left + t]
        return dx


def gru_cell(x, h_prev, params):
    """One GRU step: returns h_t for input x (B, in) and state h_prev (B, h).

    Convention: z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
    cand = tanh(Wh x + Uh (r*h) + bh), h_t = (1 - z)*h_prev + z*cand.
    `params` holds w (in, 3h) and b (3h,) in gate order [z | r | cand],
    u_zr (h, 2h), and u_hh (h, h).
    """
    h_t, _ = _gru_step(x @ params["w"] + params["b"], h_prev, params)
    return h_t


def _gru_step(gx, h_prev, params):
    # gx = x @ w + b, precomputed: (B, 3h)
    h = h_prev.shape[1]
    s = h_prev @ params["u_zr"]
    z = sigmoid(gx[:, :h] + s[:, :h])
    r = sigmoid(gx[:, h : 2 * h] + s[:, h:])
    rh = r * h_prev
    cand = np.tanh(gx[:, 2 * h :] + rh @ params["u_hh"])
    h_t = (1.0 - z) * h_prev + z * cand
    return h_t, (h_prev, z, r, cand)


def lstm_cell(x, state, params):
    """One LSTM step; returns (h_t, c_t). Gate order [i | f | g | o].

    i, f, o are sigmoids, g is tanh; c_t = f*c_prev + i*g, h_t = o*tanh(c_t).
    `params` holds w (in, 4h), u (h, 4h), b (4h,).
    """
    h_prev, c_prev = state
    h_t, c_t, _ = _lstm_step(x @ params["w"] + params["b"], h_prev, c_prev, params)
    return h_t, c_t


def _lstm_step(gx, h_prev, c_prev, params):
    h = h_prev.shape[1]
    a = gx + h_prev @ params["u"]
    i = sigmoid(a[:, :h])
    f = sigmoid(a[:, h : 2 * h])
    g = np.tanh(a[:, 2 * h : 3 * h])
    o = sigmoid(a[:, 3 * h :])
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    return h_t, c_t, (h_prev, c_prev, i, f, g, o, tc)


def _lstm_step_backward(dh, dc, cache, params, grads, da):
    """Fills the (B, 4h) pre-activation grad buffer `da`; returns (dh_prev, dc_prev)."""
    h_prev, c_prev, i, f, g, o, tc = cache
    h = h_prev.shape[1]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dc_prev = dc * f
    np.multiply(dc * g * i, 1.0 - i, out=da[:, :h])
    np.multiply(dc * c_prev * f, 1.0 - f, out=da[:, h : 2 * h])
    np.multiply(dc * i, 1.0 - g * g, out=da[:, 2 * h : 3 * h])
    np.multiply(do * o, 1.0 - o, out=da[:, 3 * h :])
    grads["u"] += h_prev.T @ da
    dh_prev = da @ params["u"].T
    return dh_prev, dc_prev


class Gru(Layer):
    """Full-sequence GRU: (B, T, in) -> (B, T, hidden), h_0 = 0.

    The step loop is the cache-friendly twin of gru_cell: intermediates
    land in preallocated time-major slabs and the gate math reuses scratch
    buffers, which matters because this loop dominates training time.
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self._register("w", (input_size, 3 * hidden_size), fan_in=input_size)
        self._register("u_zr", (hidden_size, 2 * hidden_size), fan_in=hidden_size)
        self._register("u_hh", (hidden_size, hidden_size), fan_in=hidden_size)
        self._register("b", (3 * hidden_size,), init="zero")

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeMismatch(f"Gru expected (B, T, {self.input_size}), got {x.shape}")
        b, t, _ = x.shape
        hs = self.hidden_size
        u_zr, u_hh = self.params["u_zr"], self.params["u_hh"]
        # one GEMM projects every step's input; keep it time-major
        gx = np.matmul(x.transpose(1, 0, 2), self.params["w"])
        gx += self.params["b"]
        hseq = np.zeros((t + 1, b, hs), dtype=np.float64)  # hseq[0] is h_0 = 0
        zs = np.empty((t, b, 2 * hs), dtype=np.float64)  # z and r, side by side
        cands = np.empty((t, b, hs), dtype=np.float64)
        s = np.empty((b, 2 * hs), dtype=np.float64)
        rh = np.empty((b, hs), dtype=np.float64)
        for step in range(t):
            h = hseq[step]
            zr = zs[step]
            np.matmul(h, u_zr, out=s)
            s += gx[step, :, : 2 * hs]
            np.negative(s, out=zr)
            np.exp(zr, out=zr)
            zr += 1.0
            np.reciprocal(zr, out=zr)  # zr = sigmoid(s)
            z, r = zr[:, :hs], zr[:, hs:]
            np.multiply(r, h, out=rh)
            cand = cands[step]
            np.matmul(rh, u_hh, out=cand)
            cand += gx[step, :, 2 * hs :]
            np.tanh(cand, out=cand)
            h_new = hseq[step + 1]
            np.subtract(cand, h, out=h_new)
            h_new *= z
            h_new += h  # h_new = (1 - z)*h + z*cand
        if train:
            self._cache = (x, hseq, zs, cands)
        return hseq[1:].transpose(1, 0, 2)

    def backward(self, dy):
        x, hseq, zs, cands = self._take_cache()
        b, t, _ = x.shape
        hs = self.hidden_size
        u_zr, u_hh = self.params["u_zr"], self.params["u_hh"]
        dy_t = dy.transpose(1, 0, 2)
        dgx = np.empty((t, b, 3 * hs), dtype=np.float64)
        dh = np.zeros((b, hs), dtype=np.float64)
        rh = np.empty((b, hs), dtype=np.float64)
        scratch = np.empty((b, hs), dtype=np.float64)
        for step in range(t - 1, -1, -1):
            dh += dy_t[step]
            h_prev = hseq[step]
            z, r = zs[step, :, :hs], zs[step, :, hs:]
            cand = cands[step]
            dg = dgx[step]
            dg_z, dg_r, dg_c = dg[:, :hs], dg[:, hs : 2 * hs], dg[:, 2 * hs :]
            # candidate path: dcand = dh*z, through tanh
            np.multiply(dh, z, out=dg_c)
            np.multiply(cand, cand, out=scratch)
            np.subtract(1.0, scratch, out=scratch)
            dg_c *= scratch
            np.multiply(r, h_prev, out=rh)
            self.grads["u_hh"] += rh.T @ dg_c
            drh = dg_c @ u_hh.T
            # gate pre-activations
            np.subtract(cand, h_prev, out=scratch)
            scratch *= dh
            np.multiply(scratch, z, out=dg_z)
            np.subtract(scratch, dg_z, out=dg_z)
            dg_z *= z  # dz * z * (1 - z)
            np.multiply(drh, h_prev, out=dg_r)
            np.multiply(dg_r, r, out=scratch)
            dg_r -= scratch
            dg_r *= r  # dr * r * (1 - r)
            # dh_prev = dh*(1 - z) + drh*r + dg_zr @ u_zr.T
            drh *= r
            dh_new = dh - dh * z
            dh_new += drh
            dh_new += dg[:, : 2 * hs] @ u_zr.T
            dh = dh_new
            self.grads["u_zr"] += h_prev.T @ dg[:, : 2 * hs]
        # weight grads sum over (t, b) pairs, so time-major order works and
        # only the (smaller) input needs a contiguous copy
        x_tm = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(t * b, -1)
        flat = dgx.reshape(t * b, -1)
        self.grads["w"] += x_tm.T @ flat
        self.grads["b"] += flat.sum(axis=0)
        return (flat @ self.params["w"].T).reshape(t, b, -1).transpose(1, 0, 2)


class Lstm(Layer):
    """Full-sequence LSTM: (B, T, in) -> (B, T, hidden), h_0 = c_0 = 0."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self._register("w", (input_size, 4 * hidden_size), fan_in=input_size)
        self._register("u", (hidden_size, 4 * hidden_size), fan_in=hidden_size)
        self._register("b", (4 * hidden_size,), init="zero")

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeMismatch(f"Lstm expected (B, T, {self.input_size}), got {x.shape}")
        b, t, _ = x.shape
        gx = np.ascontiguousarray((x @ self.params["w"] + self.params["b"]).transpose(1, 0, 2))
        h = np.zeros((b, self.hidden_size), dtype=np.float64)
        c = np.zeros((b, self.hidden_size), dtype=np.float64)
        out = np.empty((t, b, self.hidden_size), dtype=np.float64)
        caches = [] if train else None
        for step in range(t):
            h, c, cache = _lstm_step(gx[step], h, c, self.params)
            out[step] = h
            if train:
                caches.append(cache)
        if train:
            self._cache = (x, caches)
        return np.ascontiguousarray(out.transpose(1, 0, 2))

    def backward(self, dy):
        x, caches = self._take_cache()
        b, t, _ = x.shape
        dy_t = dy.transpose(1, 0, 2)
        dgx = np.empty((t, b, 4 * self.hidden_size), dtype=np.float64)
        dh = np.zeros((b, self.hidden_size), dtype=np.float64)
        dc = np.zeros((b, self.hidden_size), dtype=np.float64)
        for step in range(t - 1, -1, -1):
            dh = dh + dy_t[step]
            dh, dc = _lstm_step_backward(dh, dc, caches[step], self.params, self.grads, dgx[step])
        flat = np.ascontiguousarray(dgx.transpose(1, 0, 2)).reshape(b * t, -1)
        self.grads["w"] += x.reshape(b * t, -1).T @ flat
        self.grads["b"] += flat.sum(axis=0)
        return (flat @ self.params["w"].T).reshape(b, t, -1)


class GroupNorm(Layer):
    """Per-sample group normalization over (B, C, T) with affine scale/shift."""

    def __init__(self, num_groups: int, num_channels: int, eps: float = 1e-5):
        super().__init__()
        if num_channels % num_groups != 0:
            raise ValueError("num_channels must divide into num_groups")
        self.num_groups = num_groups
        self.num_channels = num_channels
        self.eps = eps
        self._register("gamma", (num_channels,), init="one")
        self._register("beta", (num_channels,), init="zero")

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.num_channels:
            raise ShapeMismatch(
                f"GroupNorm expected (B, {self.num_channels}, T), got {x.shape}"
            )
        b, c, t = x.shape
        g = self.num_groups
        xg = x.reshape(b, g, (c // g) * t)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = ((xg - mu) * inv).reshape(b, c, t)
        y = xhat * self.params["gamma"][None, :, None] + self.params["beta"][None, :, None]
        if train:
            self._cache = (xhat, inv, x.shape)
        return y

    def backward(self, dy):
        xhat, inv, shape = self._take_cache()
        b, c, t = shape
        g = self.num_groups
        self.grads["gamma"] += (dy * xhat).sum(axis=(0, 2))
        self.grads["beta"] += dy.sum(axis=(0, 2))
        dxhat = (dy * self.params["gamma"][None, :, None]).reshape(b, g, (c // g) * t)
        xh = xhat.reshape(b, g, (c // g) * t)
        m = dxhat.shape[2]
        dxg = inv * (
            dxhat
            - dxhat.mean(axis=2, keepdims=True)
            - xh * (dxhat * xh).sum(axis=2, keepdims=True) / m
        )
        return dxg.reshape(b, c, t)


class GlobalPool(Layer):
    """Collapse the time axis of (B, C, T) to (B, C); kind in {average, max}."""

    def __init__(self, kind: str = "average"):
        super().__init__()
        if kind not in ("average", "max"):
            raise ValueError(f"unknown pool kind {kind!r}")
        self.kind = kind

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ShapeMismatch(f"GlobalPool expected (B, C, T), got {x.shape}")
        if self.kind == "average":
            y = x.mean(axis=2)
            if train:
                self._cache = ("average", x.shape)
        else:
            idx = x.argmax(axis=2)
            y = np.take_along_axis(x, idx[:, :, None], axis=2)[:, :, 0]
            if train:
                self._cache = ("max", x.shape, idx)
        return y

    def backward(self, dy):
        cache = self._take_cache()
        if cache[0] == "average":
            _, shape = cache
            return np.broadcast_to(dy[:, :, None] / shape[2], shape).copy()
        _, shape, idx = cache
        dx = np.zeros(shape, dtype=np.float64)
        np.put_along_axis(dx, idx[:, :, None], dy[:, :, None], axis=2)
        return dx


class TimeMajor(Layer):
    """Swap channel and time axes: (B, C, T) <-> (B, T, C)."""

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ShapeMismatch(f"TimeMajor expected rank-3 input, got {x.shape}")
        if train:
            self._cache = True
        return np.ascontiguousarray(x.transpose(0, 2, 1))

    def backward(self, dy):
        self._take_cache()
        return np.ascontiguousarray(dy.transpose(0, 2, 1))


class LastStep(Layer):
    """Select the final time step: (B, T, H) -> (B, H)."""

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ShapeMismatch(f"LastStep expected (B, T, H), got {x.shape}")
        if train:
            self._cache = x.shape
        return x[:, -1].copy()

    def backward(self, dy):
        shape = self._take_cache()
        dx = np.zeros(shape, dtype=np.float64)
        dx[:, -1] = dy
        return dx


class Sequential(Layer):
    """Chain of layers sharing the forward/backward protocol."""

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def init(self, rng):
        for layer in self.layers:
            layer.init(rng)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self, prefix: str = ""):
        """Yield (name, param, grad) triples in deterministic layer order."""
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Sequential):
                yield from layer.named_params(f"{prefix}{i}.")
            else:
                for name, p in layer.params.items():
                    yield f"{prefix}{i}.{type(layer).__name__.lower()}.{name}", p, layer.grads[name]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)


def init_params(net: Layer, seed: int) -> dict[str, np.ndarray]:
    """Initialize a network in place; returns the named parameter set.

    Deterministic given the seed: weights are uniform in ±1/sqrt(fan_in),
    biases zero, norm scales one, drawn in fixed layer order.
    """
    rng = np.random.default_rng(seed)
    net.init(rng)
    if isinstance(net, Sequential):
        return {name: p for name, p, _ in net.named_params()}
    return dict(net.params)
