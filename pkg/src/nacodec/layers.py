"""Neural network building blocks on top of the tensor engine.

Convolutions are lowered to matrix multiplies through strided im2col views;
their backward passes scatter-add column gradients back onto the input.
Padding is always explicit and caller-controlled so the codec can choose
causal or centered layouts. Modules hold parameters (tracked tensors) and
buffers (plain arrays updated outside the graph, e.g. EMA statistics).
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor,
    as_tensor,
    matmul,
    node,
    sigmoid,
    stack,
    tanh,
    tracks,
)


# -- convolution ops --------------------------------------------------------


def conv1d(x, w, b=None, stride=1, dilation=1, padding=(0, 0)):
    """1-D convolution. x: [B, Cin, T], w: [Cout, Cin, K], b: [Cout]."""
    x, w = as_tensor(x), as_tensor(w)
    bias = None if b is None else as_tensor(b)
    batch, cin, t_in = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, weight {cin_w}")
    pl, pr = padding
    xp = x.data if (pl == 0 and pr == 0) else np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    t_pad = xp.shape[-1]
    eff = dilation * (k - 1) + 1
    if t_pad < eff:
        raise ValueError("padded input shorter than the effective kernel")
    t_out = (t_pad - eff) // stride + 1

    xp = np.ascontiguousarray(xp)
    sb, sc, st = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, cin, k, t_out),
        strides=(sb, sc, st * dilation, st * stride),
    )
    cols = cols.reshape(batch, cin * k, t_out)  # materializes
    w2 = w.data.reshape(cout, cin * k)
    y = np.matmul(w2, cols)
    if bias is not None:
        y = y + bias.data[:, None]
    if not tracks(x, w) and (bias is None or not tracks(bias)):
        return Tensor(y)

    def bw(g):
        if bias is not None and (bias.requires_grad or bias._parents):
            bias._accum(g.sum(axis=(0, 2)))
        if w.requires_grad or w._parents:
            gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accum(gw.reshape(w.shape))
        if x.requires_grad or x._parents:
            gcols = np.matmul(w2.T, g).reshape(batch, cin, k, t_out)
            gxp = np.zeros((batch, cin, t_pad), dtype=g.dtype)
            span = stride * (t_out - 1) + 1
            for kk in range(k):
                lo = kk * dilation
                gxp[:, :, lo : lo + span : stride] += gcols[:, :, kk, :]
            x._accum(gxp[:, :, pl : t_pad - pr] if (pl or pr) else gxp)

    parents = tuple(
        t for t in (x, w, bias) if t is not None and (t.requires_grad or t._parents)
    )
    return node(y, parents, bw)


def conv_transpose1d(x, w, b=None, stride=1, trim=(0, 0)):
    """Transposed 1-D convolution. x: [B, Cin, T], w: [Cin, Cout, K].

    Produces the full [(T-1)*stride + K] output, then cuts ``trim`` samples
    from the ends. Bias is added after trimming (once per emitted sample).
    """
    x, w = as_tensor(x), as_tensor(w)
    bias = None if b is None else as_tensor(b)
    batch, cin, t_in = x.shape
    cin_w, cout, k = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, weight {cin_w}")
    tl, tr = trim
    full = (t_in - 1) * stride + k
    if tl + tr >= full:
        raise ValueError("trim removes the entire output")

    w2 = w.data.reshape(cin, cout * k)
    u = np.matmul(w2.T, x.data).reshape(batch, cout, k, t_in)
    y_full = np.zeros((batch, cout, full), dtype=x.data.dtype)
    span = stride * (t_in - 1) + 1
    for kk in range(k):
        y_full[:, :, kk : kk + span : stride] += u[:, :, kk, :]
    y = y_full[:, :, tl : full - tr]
    if bias is not None:
        y = y + bias.data[:, None]
    if not tracks(x, w) and (bias is None or not tracks(bias)):
        return Tensor(np.ascontiguousarray(y))
    y = np.ascontiguousarray(y)

    def bw(g):
        if bias is not None and (bias.requires_grad or bias._parents):
            bias._accum(g.sum(axis=(0, 2)))
        gf = np.zeros((batch, cout, full), dtype=g.dtype)
        gf[:, :, tl : full - tr] = g
        gu = np.empty((batch, cout, k, t_in), dtype=g.dtype)
        for kk in range(k):
            gu[:, :, kk, :] = gf[:, :, kk : kk + span : stride]
        gu = gu.reshape(batch, cout * k, t_in)
        if w.requires_grad or w._parents:
            gw = np.matmul(x.data, gu.transpose(0, 2, 1)).sum(axis=0)
            w._accum(gw.reshape(w.shape))
        if x.requires_grad or x._parents:
            x._accum(np.matmul(w2, gu))

    parents = tuple(
        t for t in (x, w, bias) if t is not None and (t.requires_grad or t._parents)
    )
    return node(y, parents, bw)


def conv2d(x, w, b=None, stride=(1, 1), dilation=(1, 1), padding=((0, 0), (0, 0))):
    """2-D convolution. x: [B, Cin, F, T], w: [Cout, Cin, Kf, Kt]."""
    x, w = as_tensor(x), as_tensor(w)
    bias = None if b is None else as_tensor(b)
    batch, cin, f_in, t_in = x.shape
    cout, cin_w, kf, kt = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, weight {cin_w}")
    sf, st_ = stride
    df, dt = dilation
    (pf_l, pf_r), (pt_l, pt_r) = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pf_l, pf_r), (pt_l, pt_r)))
    f_pad, t_pad = xp.shape[2], xp.shape[3]
    eff_f = df * (kf - 1) + 1
    eff_t = dt * (kt - 1) + 1
    if f_pad < eff_f or t_pad < eff_t:
        raise ValueError("padded input smaller than the effective kernel")
    f_out = (f_pad - eff_f) // sf + 1
    t_out = (t_pad - eff_t) // st_ + 1

    xp = np.ascontiguousarray(xp)
    sb, sc, s_f, s_t = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, cin, kf, kt, f_out, t_out),
        strides=(sb, sc, s_f * df, s_t * dt, s_f * sf, s_t * st_),
    )
    cols = cols.reshape(batch, cin * kf * kt, f_out * t_out)
    w2 = w.data.reshape(cout, cin * kf * kt)
    y = np.matmul(w2, cols).reshape(batch, cout, f_out, t_out)
    if bias is not None:
        y = y + bias.data[:, None, None]
    if not tracks(x, w) and (bias is None or not tracks(bias)):
        return Tensor(y)

    def bw(g):
        g2 = g.reshape(batch, cout, f_out * t_out)
        if bias is not None and (bias.requires_grad or bias._parents):
            bias._accum(g.sum(axis=(0, 2, 3)))
        if w.requires_grad or w._parents:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accum(gw.reshape(w.shape))
        if x.requires_grad or x._parents:
            gcols = np.matmul(w2.T, g2).reshape(batch, cin, kf, kt, f_out, t_out)
            gxp = np.zeros((batch, cin, f_pad, t_pad), dtype=g.dtype)
            span_f = sf * (f_out - 1) + 1
            span_t = st_ * (t_out - 1) + 1
            for i in range(kf):
                fsl = slice(i * df, i * df + span_f, sf)
                for j in range(kt):
                    tsl = slice(j * dt, j * dt + span_t, st_)
                    gxp[:, :, fsl, tsl] += gcols[:, :, i, j]
            x._accum(gxp[:, :, pf_l : f_pad - pf_r or None, pt_l : t_pad - pt_r or None])

    parents = tuple(
        t for t in (x, w, bias) if t is not None and (t.requires_grad or t._parents)
    )
    return node(y, parents, bw)


# -- module infrastructure --------------------------------------------------


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


class Module:
    """Container tracking parameters, buffers and child modules."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def set_buffer(self, name: str, array: np.ndarray):
        if name not in self._buffers:
            raise KeyError(name)
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, buf in self._buffers.items():
            yield prefix + name, buf
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict:
        out = {}
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, buf in self.named_buffers():
            out["~" + name] = buf
        return out

    def load_state_dict(self, state: dict, strict: bool = True):
        own_params = dict(self.named_parameters())
        own_bufs = dict(self.named_buffers())
        seen = set()
        for key, array in state.items():
            if key.startswith("~"):
                name = key[1:]
                if name not in own_bufs:
                    if strict:
                        raise KeyError(f"unexpected buffer {name}")
                    continue
                if own_bufs[name].shape != array.shape:
                    raise ValueError(f"shape mismatch for buffer {name}")
                self._assign_buffer(name, array)
            else:
                if key not in own_params:
                    if strict:
                        raise KeyError(f"unexpected parameter {key}")
                    continue
                p = own_params[key]
                if p.data.shape != array.shape:
                    raise ValueError(f"shape mismatch for parameter {key}")
                p.data = array.astype(p.data.dtype, copy=True)
            seen.add(key)
        if strict:
            missing = (set(own_params) | {"~" + n for n in own_bufs}) - seen
            if missing:
                raise KeyError(f"missing entries: {sorted(missing)}")

    def _assign_buffer(self, dotted: str, array: np.ndarray):
        mod = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            mod = mod._children[part]
        mod.set_buffer(parts[-1], array.astype(mod._buffers[parts[-1]].dtype, copy=True))

    def param_checksum(self) -> float:
        """Cheap fingerprint of all parameters, for update-isolation tests."""
        return float(sum(np.abs(p.data).sum() for p in self.parameters()))


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, "_list", [])
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        self._children[str(len(self._list))] = module
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __getitem__(self, i):
        return self._list[i]

    def __len__(self):
        return len(self._list)


# -- layers -----------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, bound: float, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Module):
    """Stateless 1-D convolution; padding is supplied per call.

    ``norm="weight"`` reparameterizes the kernel as direction * magnitude
    per output channel, which keeps the layer usable sample-by-sample in
    streaming mode (no activation statistics involved).
    """

    def __init__(self, cin, cout, kernel, stride=1, dilation=1, bias=True,
                 norm="none", rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.cin, self.cout, self.kernel = cin, cout, kernel
        self.stride, self.dilation = stride, dilation
        self.norm = norm
        bound = 1.0 / np.sqrt(cin * kernel)
        w0 = _uniform(rng, (cout, cin, kernel), bound, dtype)
        if norm == "weight":
            self.w_v = Parameter(w0)
            self.w_g = Parameter(
                np.sqrt((w0.astype(np.float64) ** 2).sum(axis=(1, 2))).astype(dtype)
            )
        else:
            self.w = Parameter(w0)
        self.b = Parameter(_uniform(rng, (cout,), bound, dtype)) if bias else None

    def weight(self) -> Tensor:
        if self.norm != "weight":
            return self.w
        from .tensor import sqrt as tsqrt

        norm = tsqrt((self.w_v**2).sum(axis=(1, 2), keepdims=True) + 1e-12)
        return self.w_v * (self.w_g.reshape(-1, 1, 1) / norm)

    def forward(self, x, padding=(0, 0)):
        return conv1d(x, self.weight(), self.b, self.stride, self.dilation, padding)


class ConvTranspose1d(Module):
    def __init__(self, cin, cout, kernel, stride=1, bias=True, norm="none",
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.norm = norm
        bound = 1.0 / np.sqrt(cout * kernel)
        w0 = _uniform(rng, (cin, cout, kernel), bound, dtype)
        if norm == "weight":
            self.w_v = Parameter(w0)
            self.w_g = Parameter(
                np.sqrt((w0.astype(np.float64) ** 2).sum(axis=(0, 2))).astype(dtype)
            )
        else:
            self.w = Parameter(w0)
        self.b = Parameter(_uniform(rng, (cout,), bound, dtype)) if bias else None

    def weight(self) -> Tensor:
        if self.norm != "weight":
            return self.w
        from .tensor import sqrt as tsqrt

        norm = tsqrt((self.w_v**2).sum(axis=(0, 2), keepdims=True) + 1e-12)
        return self.w_v * (self.w_g.reshape(1, -1, 1) / norm)

    def forward(self, x, trim=(0, 0), bias=True):
        return conv_transpose1d(
            x, self.weight(), self.b if bias else None, self.stride, trim
        )


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=(1, 1), dilation=(1, 1),
                 bias=True, norm="none", rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.kernel, self.stride, self.dilation = kernel, stride, dilation
        self.norm = norm
        kf, kt = kernel
        bound = 1.0 / np.sqrt(cin * kf * kt)
        w0 = _uniform(rng, (cout, cin, kf, kt), bound, dtype)
        if norm == "weight":
            self.w_v = Parameter(w0)
            self.w_g = Parameter(
                np.sqrt((w0.astype(np.float64) ** 2).sum(axis=(1, 2, 3))).astype(dtype)
            )
        else:
            self.w = Parameter(w0)
        self.b = Parameter(_uniform(rng, (cout,), bound, dtype)) if bias else None

    def weight(self) -> Tensor:
        if self.norm != "weight":
            return self.w
        from .tensor import sqrt as tsqrt

        norm = tsqrt((self.w_v**2).sum(axis=(1, 2, 3), keepdims=True) + 1e-12)
        return self.w_v * (self.w_g.reshape(-1, 1, 1, 1) / norm)

    def forward(self, x, padding=((0, 0), (0, 0))):
        return conv2d(x, self.weight(), self.b, self.stride, self.dilation, padding)


class Linear(Module):
    def __init__(self, cin, cout, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(cin)
        self.w = Parameter(_uniform(rng, (cin, cout), bound, dtype))
        self.b = Parameter(_uniform(rng, (cout,), bound, dtype)) if bias else None

    def forward(self, x):
        y = matmul(x, self.w)
        return y if self.b is None else y + self.b


class Embedding(Module):
    def __init__(self, n_rows, dim, rng=None, dtype=np.float32, scale=1.0):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.table = Parameter(
            (rng.standard_normal((n_rows, dim)) * scale).astype(dtype)
        )

    def forward(self, idx):
        from .tensor import embedding

        return embedding(self.table, idx)


class LayerNorm(Module):
    """Normalization over the last axis with per-feature affine."""

    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc**2).mean(axis=-1, keepdims=True)
        from .tensor import sqrt as tsqrt

        return xc / tsqrt(var + self.eps) * self.gamma + self.beta


class ChannelTimeNorm(Module):
    """Normalization with statistics over (channels, time), per sample.

    Input [B, C, T]; affine parameters are per channel. Statistics couple
    all time steps, so this layout is reserved for the non-streaming codec.
    """

    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones((channels, 1), dtype=dtype))
        self.beta = Parameter(np.zeros((channels, 1), dtype=dtype))

    def forward(self, x):
        mu = x.mean(axis=(1, 2), keepdims=True)
        xc = x - mu
        var = (xc**2).mean(axis=(1, 2), keepdims=True)
        from .tensor import sqrt as tsqrt

        return xc / tsqrt(var + self.eps) * self.gamma + self.beta


class LSTM(Module):
    """Multi-layer LSTM over [B, C, T] with explicit carried state."""

    def __init__(self, dim, n_layers=2, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.dim, self.n_layers = dim, n_layers
        bound = 1.0 / np.sqrt(dim)
        for layer in range(n_layers):
            setattr(self, f"w_ih{layer}",
                    Parameter(_uniform(rng, (dim, 4 * dim), bound, dtype)))
            setattr(self, f"w_hh{layer}",
                    Parameter(_uniform(rng, (dim, 4 * dim), bound, dtype)))
            setattr(self, f"bias{layer}",
                    Parameter(_uniform(rng, (4 * dim,), bound, dtype)))

    def init_state(self, batch: int, dtype=np.float32):
        zero = lambda: Tensor(np.zeros((batch, self.dim), dtype=dtype))
        return [(zero(), zero()) for _ in range(self.n_layers)]

    def forward(self, x, state=None):
        """Returns ([B, H, T], final_state). Gate order: input, forget,
        cell, output."""
        batch = x.shape[0]
        if state is None:
            state = self.init_state(batch, dtype=x.data.dtype)
        new_state = []
        h_seq = x
        d = self.dim
        for layer in range(self.n_layers):
            w_ih = getattr(self, f"w_ih{layer}")
            w_hh = getattr(self, f"w_hh{layer}")
            bias = getattr(self, f"bias{layer}")
            pre_all = matmul(h_seq.transpose(0, 2, 1), w_ih) + bias  # [B, T, 4H]
            h, c = state[layer]
            outs = []
            for t in range(x.shape[2]):
                gates = pre_all[:, t, :] + matmul(h, w_hh)
                i_g = sigmoid(gates[:, :d])
                f_g = sigmoid(gates[:, d : 2 * d])
                g_g = tanh(gates[:, 2 * d : 3 * d])
                o_g = sigmoid(gates[:, 3 * d :])
                c = f_g * c + i_g * g_g
                h = o_g * tanh(c)
                outs.append(h)
            new_state.append((h, c))
            h_seq = stack(outs, axis=2)  # [B, H, T]
        return h_seq, new_state


class Adam:
    """Adam with bias correction; skips parameters with no gradient."""

    def __init__(self, params, lr=3e-4, betas=(0.5, 0.9), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = np.asarray(p.grad, dtype=p.data.dtype)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
