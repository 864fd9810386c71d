"""Latent quantizers: residual VQ (the default), plus two fully
differentiable alternatives (uniform noise-based and Gumbel-softmax).

The residual quantizer cascades identical 1024-entry codebooks; stage c
quantizes the residual left by stages 1..c-1. Codebooks are buffers, not
parameters: they learn through an exponential moving average of assigned
vectors, so no gradient ever reaches an entry. Unused entries (zero
assignments in the current batch) are restarted from random batch
residuals. Encoding with the first n_q stages of a stack trained with more
stages yields a nested family of bitrates: n_q codebooks at 10 bits each,
75 steps/s gives n_q * 0.75 kbps at 24 kHz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Module, ModuleList, Parameter
from .tensor import Tensor, straight_through

LOG2 = float(np.log(2.0))


@dataclass
class RvqConfig:
    n_entries: int = 1024
    max_n_q: int = 32
    decay: float = 0.99
    count_floor: float = 1e-5
    kmeans_iters: int = 10

    @property
    def bits_per_index(self) -> int:
        bits = int(np.log2(self.n_entries))
        if 2**bits != self.n_entries:
            raise ValueError("codebook size must be a power of two")
        return bits

    @classmethod
    def for_sample_rate(cls, sample_rate: int) -> "RvqConfig":
        return cls(max_n_q=16 if sample_rate >= 48000 else 32)


def bitrate_bps(n_q: int, frame_rate: float, bits_per_index: int = 10) -> float:
    """Raw index bitrate: n_q codebooks * bits * latent steps per second."""
    return n_q * bits_per_index * frame_rate


def n_q_for_bandwidth(bandwidth_kbps: float, frame_rate: float,
                      bits_per_index: int = 10, max_n_q: int = 32,
                      allow_low_bandwidth: bool = True) -> int:
    """Codebook count whose raw bitrate matches the requested bandwidth.

    Valid targets use a multiple of four codebooks; the two-codebook setting
    (1.5 kbps at 24 kHz) is additionally allowed unless disabled.
    """
    n_q = int(round(bandwidth_kbps * 1000.0 / (bits_per_index * frame_rate)))
    if n_q < 1 or abs(n_q * bits_per_index * frame_rate - bandwidth_kbps * 1000.0) > 1.0:
        raise ValueError(
            f"bandwidth {bandwidth_kbps} kbps is not an integer codebook count"
        )
    ok = (n_q % 4 == 0) or (allow_low_bandwidth and n_q == 2)
    if not ok:
        raise ValueError(f"unsupported codebook count {n_q} for this rate family")
    if n_q > max_n_q:
        raise ValueError(f"codebook count {n_q} exceeds the maximum {max_n_q}")
    return n_q


def _kmeans(data: np.ndarray, k: int, iters: int, rng: np.random.Generator):
    """Plain Lloyd iterations; returns (centers [k, D], counts [k]).

    With fewer samples than centers the remainder is drawn uniformly from
    the observed value range.
    """
    m, d = data.shape
    if m >= k:
        centers = data[rng.choice(m, size=k, replace=False)].copy()
    else:
        lo = data.min(axis=0, initial=-1.0)
        hi = data.max(axis=0, initial=1.0)
        centers = rng.uniform(lo, hi, size=(k, d)).astype(data.dtype)
        centers[:m] = data
    counts = np.zeros(k)
    for _ in range(iters):
        idx = _nearest(data, centers)
        counts = np.bincount(idx, minlength=k).astype(np.float64)
        sums = np.zeros_like(centers)
        np.add.at(sums, idx, data)
        nonzero = counts > 0
        centers[nonzero] = sums[nonzero] / counts[nonzero, None]
    counts = np.maximum(counts, 1.0)
    return centers, counts


def _nearest(x: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Index of the closest entry (squared Euclidean) for each row of x."""
    # ||x - e||^2 = ||x||^2 - 2 x.e + ||e||^2; the x term is constant in e.
    scores = x @ entries.T
    scores *= 2.0
    scores -= (entries**2).sum(axis=1)[None, :]
    return np.argmax(scores, axis=1)


class EmaCodebook(Module):
    """Single vector-quantization stage with EMA updates."""

    def __init__(self, cfg: RvqConfig, dim: int, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("entries", np.zeros((cfg.n_entries, dim), dtype=dtype))
        self.register_buffer("ema_count", np.zeros(cfg.n_entries, dtype=np.float64))
        self.register_buffer("ema_sum", np.zeros((cfg.n_entries, dim), np.float64))
        self.register_buffer("initialized", np.zeros(1, dtype=np.int8))

    def init_from_batch(self, vectors: np.ndarray, rng: np.random.Generator):
        centers, counts = _kmeans(
            vectors.astype(np.float64), self.cfg.n_entries, self.cfg.kmeans_iters, rng
        )
        self.entries[...] = centers.astype(self.entries.dtype)
        self.ema_count[...] = counts
        self.ema_sum[...] = centers * counts[:, None]
        self.initialized[0] = 1

    def quantize(self, vectors: np.ndarray) -> np.ndarray:
        return _nearest(vectors.astype(self.entries.dtype), self.entries)

    def lookup(self, idx: np.ndarray) -> np.ndarray:
        return self.entries[idx]

    def update(self, vectors: np.ndarray, idx: np.ndarray,
               rng: np.random.Generator):
        """EMA step plus restart of entries unused in this batch."""
        cfg = self.cfg
        counts = np.bincount(idx, minlength=cfg.n_entries).astype(np.float64)
        sums = np.zeros((cfg.n_entries, vectors.shape[1]), dtype=np.float64)
        np.add.at(sums, idx, vectors.astype(np.float64))

        self.ema_count[...] = cfg.decay * self.ema_count + (1 - cfg.decay) * counts
        self.ema_sum[...] = cfg.decay * self.ema_sum + (1 - cfg.decay) * sums
        denom = np.maximum(self.ema_count, cfg.count_floor)
        self.entries[...] = (self.ema_sum / denom[:, None]).astype(self.entries.dtype)

        dead = np.flatnonzero(counts == 0)
        if dead.size:
            picks = rng.integers(0, vectors.shape[0], size=dead.size)
            chosen = vectors[picks].astype(np.float64)
            self.entries[dead] = chosen.astype(self.entries.dtype)
            self.ema_sum[dead] = chosen
            self.ema_count[dead] = 1.0
        return dead.size


class ResidualVQ(Module):
    """Cascade of EMA codebooks quantizing successive residuals."""

    def __init__(self, cfg: RvqConfig, dim: int, rng=None, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dim = dim
        self.rng = np.random.default_rng() if rng is None else rng
        self.stages = ModuleList(
            [EmaCodebook(cfg, dim, dtype=dtype) for _ in range(cfg.max_n_q)]
        )

    def _check_n_q(self, n_q: int):
        if not 1 <= n_q <= self.cfg.max_n_q:
            raise ValueError(f"n_q must be in [1, {self.cfg.max_n_q}]")

    def encode(self, z: np.ndarray, n_q: int) -> np.ndarray:
        """Latent [D, T'] -> indices [n_q, T'] (also accepts [B, D, T'])."""
        self._check_n_q(n_q)
        if z.ndim == 3:
            return np.stack([self.encode(zb, n_q) for zb in z])
        vectors = np.ascontiguousarray(z.T)  # [T', D]
        out = np.empty((n_q, vectors.shape[0]), dtype=np.int64)
        residual = vectors
        for c in range(n_q):
            idx = self.stages[c].quantize(residual)
            out[c] = idx
            residual = residual - self.stages[c].lookup(idx)
        return out

    def decode(self, indices: np.ndarray) -> np.ndarray:
        """Indices [n_q, T'] -> latent [D, T'] (sum of stage entries)."""
        if indices.ndim == 3:
            return np.stack([self.decode(ib) for ib in indices])
        n_q, t = indices.shape
        self._check_n_q(n_q)
        acc = np.zeros((t, self.dim), dtype=self.stages[0].entries.dtype)
        for c in range(n_q):
            acc += self.stages[c].lookup(indices[c])
        return acc.T.copy()

    def train_forward(self, z: Tensor, n_q: int, update: bool = True):
        """Quantize with gradient pass-through; returns
        (quantized Tensor, commitment loss Tensor, indices [B, n_q, T']).

        The commitment term is sum over latent dims, mean over batch/time,
        of the squared distance between each stage's input residual and its
        chosen entry; entries receive no gradient (they are buffers).
        """
        self._check_n_q(n_q)
        batch, dim, t = z.shape
        flat = z.data.transpose(0, 2, 1).reshape(batch * t, dim)
        residual = flat.copy()
        acc = np.zeros_like(flat)
        commit = None
        indices = np.empty((batch, n_q, t), dtype=np.int64)
        for c in range(n_q):
            stage = self.stages[c]
            if update and not stage.initialized[0]:
                stage.init_from_batch(residual, self.rng)
            idx = stage.quantize(residual)
            chosen = stage.lookup(idx)
            if update:
                # EMA/restart apply after this batch's forward.
                stage.update(residual, idx, self.rng)
            indices[:, c, :] = idx.reshape(batch, t)
            acc += chosen
            residual = residual - chosen
            target = np.ascontiguousarray(
                acc.reshape(batch, t, dim).transpose(0, 2, 1)
            )
            diff = z - Tensor(target.astype(z.data.dtype))
            term = (diff**2).sum(axis=1).mean()
            commit = term if commit is None else commit + term
        z_q = np.ascontiguousarray(acc.reshape(batch, t, dim).transpose(0, 2, 1))
        return straight_through(z, z_q.astype(z.data.dtype)), commit, indices


# -- noise-based scalar quantizer -------------------------------------------


class NoiseBitsQuantizer(Module):
    """Per-dimension uniform quantizer with a learnable bit depth.

    Each latent dimension d owns a logit v_d mapped to a bit depth
    B_d = 15 * sigmoid(5 v_d). Training adds uniform noise matching the
    quantization step inside a clamped range of +/- 3 running standard
    deviations around the running mean (EMA decay 0.9, seeded from the
    first batch). Dimensions with B_d < 1 fade out: the signal is scaled by
    min(B_d, 1) and the noise by its square root. Evaluation snaps to the
    nearest of round(2^B_d) levels on the same range.
    """

    B_MAX = 15.0
    GAIN = 5.0
    SPAN = 3.0
    EMA_DECAY = 0.9

    def __init__(self, dim: int, rng=None, dtype=np.float32, init_v: float = 0.0):
        super().__init__()
        self.dim = dim
        self.rng = np.random.default_rng() if rng is None else rng
        self.v = Parameter(np.full(dim, init_v, dtype=dtype))
        self.register_buffer("mean", np.zeros(dim, dtype=np.float64))
        self.register_buffer("std", np.ones(dim, dtype=np.float64))
        self.register_buffer("warm", np.zeros(1, dtype=np.int8))

    def bits(self) -> Tensor:
        return T.sigmoid(self.v * self.GAIN) * self.B_MAX

    def bits_np(self) -> np.ndarray:
        v = self.v.data.astype(np.float64)
        return self.B_MAX / (1.0 + np.exp(-self.GAIN * v))

    def update_stats(self, z: np.ndarray):
        """z: [B, D, T']; running mean/std per dimension."""
        m = z.mean(axis=(0, 2)).astype(np.float64)
        s = z.std(axis=(0, 2)).astype(np.float64)
        if not self.warm[0]:
            self.mean[...] = m
            self.std[...] = s
            self.warm[0] = 1
        else:
            self.mean[...] = self.EMA_DECAY * self.mean + (1 - self.EMA_DECAY) * m
            self.std[...] = self.EMA_DECAY * self.std + (1 - self.EMA_DECAY) * s
        np.maximum(self.std, 1e-8, out=self.std)

    def train_forward(self, z: Tensor, update: bool = True) -> Tensor:
        if update:
            self.update_stats(z.data)
        mean = self.mean[None, :, None]
        span = self.SPAN * self.std[None, :, None]
        bits = self.bits().reshape(1, self.dim, 1)
        scale = T.clip(bits, None, 1.0)
        clamped = T.clip(z, mean - span, mean + span)
        noise = self.rng.uniform(-1.0, 1.0, size=z.shape).astype(z.data.dtype)
        step = T.exp(bits * (-LOG2))  # 2^-B
        return scale * clamped + Tensor(span * noise) * T.sqrt(scale) * step

    def quantize(self, z: np.ndarray) -> np.ndarray:
        """[D, T'] (or [B, D, T']) -> level indices, same leading shape."""
        mean = self.mean[:, None]
        std = self.std[:, None]
        if z.ndim == 3:
            mean, std = mean[None], std[None]
        u = (self.SPAN + (z - mean) / std) / (2.0 * self.SPAN)
        u = np.clip(u, 0.0, 1.0)
        n_levels = np.round(2.0 ** self.bits_np())
        n_levels = n_levels[:, None] if z.ndim == 2 else n_levels[None, :, None]
        idx = np.minimum(np.floor(n_levels * u), n_levels - 1)
        return idx.astype(np.int64)

    def dequantize(self, idx: np.ndarray) -> np.ndarray:
        mean = self.mean[:, None]
        std = self.std[:, None]
        if idx.ndim == 3:
            mean, std = mean[None], std[None]
        n_levels = np.round(2.0 ** self.bits_np())
        n_levels = n_levels[:, None] if idx.ndim == 2 else n_levels[None, :, None]
        centered = 2.0 * (idx + 0.5) / n_levels - 1.0
        return mean + self.SPAN * std * centered

    def bandwidth_bits_per_second(self, n_steps: int, duration_s: float) -> Tensor:
        """Differentiable bit cost of coding n_steps latent frames."""
        return self.bits().sum() * (n_steps / duration_s)


# -- Gumbel-softmax quantizer -----------------------------------------------


class GumbelQuantizer(Module):
    """Parallel codebooks with softmax assignments and a learned prior.

    Codebook i scores entries by C_i z + b_i; training draws a relaxed
    one-hot sample at temperature tau and reconstructs as its weighted sum
    of centroids. Evaluation samples the entry index from the posterior.
    The coding cost term is the cross entropy between the learned prior
    softmax(l_i) and the posterior, summed over codebooks and entries.
    """

    TAU = 0.5

    def __init__(self, n_codebooks: int, n_entries: int, dim: int, rng=None,
                 dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.n_codebooks, self.n_entries, self.dim = n_codebooks, n_entries, dim
        self.rng = rng
        scale = 1.0 / np.sqrt(dim)
        for i in range(n_codebooks):
            setattr(self, f"centroids{i}", Parameter(
                (rng.standard_normal((n_entries, dim)) * scale).astype(dtype)))
            setattr(self, f"bias{i}", Parameter(np.zeros(n_entries, dtype=dtype)))
            setattr(self, f"prior{i}", Parameter(np.zeros(n_entries, dtype=dtype)))

    def posteriors(self, z: Tensor):
        """List of [B, Omega, T'] posteriors, one per codebook."""
        out = []
        for i in range(self.n_codebooks):
            c = getattr(self, f"centroids{i}")
            b = getattr(self, f"bias{i}")
            logits = T.matmul(c, z) + b.reshape(1, self.n_entries, 1)
            out.append(T.softmax(logits, axis=1))
        return out

    def train_forward(self, z: Tensor):
        """Returns (relaxed reconstruction, coding cost per latent step)."""
        recon = None
        cost = None
        for i, q in enumerate(self.posteriors(z)):
            c = getattr(self, f"centroids{i}")
            gumbel = -np.log(-np.log(
                self.rng.uniform(1e-12, 1.0, size=q.shape)
            )).astype(z.data.dtype)
            y = T.softmax((T.log(q + 1e-20) + Tensor(gumbel)) * (1.0 / self.TAU),
                          axis=1)
            piece = T.matmul(y.transpose(0, 2, 1), c).transpose(0, 2, 1)
            recon = piece if recon is None else recon + piece
            log_prior = T.log_softmax(getattr(self, f"prior{i}"), axis=-1)
            ce = -(q * log_prior.reshape(1, self.n_entries, 1)).sum(axis=1)
            term = ce.mean()
            cost = term if cost is None else cost + term
        return recon, cost

    def prior_probs(self) -> np.ndarray:
        """[N_C, Omega] prior distributions (for entropy coding)."""
        out = np.empty((self.n_codebooks, self.n_entries), dtype=np.float64)
        for i in range(self.n_codebooks):
            logit = getattr(self, f"prior{i}").data.astype(np.float64)
            e = np.exp(logit - logit.max())
            out[i] = e / e.sum()
        return out

    def encode(self, z: np.ndarray) -> np.ndarray:
        """Latent [D, T'] -> sampled indices [N_C, T']."""
        zt = Tensor(z[None] if z.ndim == 2 else z)
        with T.no_grad():
            qs = self.posteriors(zt)
        out = np.empty((self.n_codebooks, zt.shape[-1]), dtype=np.int64)
        for i, q in enumerate(qs):
            probs = q.data[0].T  # [T', Omega]
            cdf = np.cumsum(probs, axis=1)
            cdf[:, -1] = 1.0
            u = self.rng.random((probs.shape[0], 1))
            out[i] = (u <= cdf).argmax(axis=1)
        return out

    def decode(self, indices: np.ndarray) -> np.ndarray:
        acc = None
        for i in range(self.n_codebooks):
            c = getattr(self, f"centroids{i}").data
            piece = c[indices[i]]
            acc = piece if acc is None else acc + piece
        return acc.T.copy()
