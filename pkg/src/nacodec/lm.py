"""Causal index language model driving the entropy coder.

A small pre-norm Transformer predicts, per latent step, one categorical
distribution per codebook.  The input at step ``t`` is the sum of the
per-codebook embeddings of step ``t-1``'s indices (a dedicated start token
at the first step), plus a sinusoidal position code.  Context is processed
in fixed-length blocks — the receptive-field budget in latent steps — and
attention never crosses a block boundary, though block-start inputs still
condition on the previous step's indices.  Batch (training, bulk
compression) and streaming (decompression) paths produce the same
probabilities up to floating-point noise far below the 1e-6 rounding used
for coding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Embedding, LayerNorm, Linear, Module, ModuleList
from .rangecoder import RangeDecoder, RangeEncoder, quantize_pdf
from .tensor import Tensor

_EMBED_SCALE = 0.02


@dataclass(frozen=True)
class LmConfig:
    """Shape of the index language model."""

    n_layers: int = 5
    n_heads: int = 8
    model_dim: int = 200
    ff_dim: int = 800
    dropout: float = 0.0
    n_entries: int = 1024
    max_n_q: int = 32
    context_seconds: float = 3.5
    train_seconds: float = 5.0

    def __post_init__(self):
        if self.dropout != 0.0:
            raise ValueError("dropout is fixed at 0 in this model")
        if self.model_dim % self.n_heads:
            raise ValueError("model_dim must divide evenly into heads")

    def context_steps(self, frame_rate: float) -> int:
        """Receptive-field budget in latent steps (floor of seconds*rate)."""
        return int(self.context_seconds * frame_rate)

    def train_steps(self, frame_rate: float) -> int:
        return int(self.train_seconds * frame_rate)


def sinusoidal_positions(positions, dim: int, dtype=np.float64) -> np.ndarray:
    """Classic interleaved sine/cosine position code, shape [len, dim]."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = (dim + 1) // 2
    freqs = 1.0 / (10000.0 ** (2.0 * np.arange(half) / dim))
    angles = positions * freqs[None, :]
    out = np.zeros((positions.shape[0], dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles[:, : dim // 2])
    return out.astype(dtype)


def causal_mask(n: int, dtype=np.float64) -> np.ndarray:
    """Additive attention mask: 0 at or below the diagonal, -inf above."""
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = -np.inf
    return mask


class TransformerLayer(Module):
    """Pre-norm block: self-attention then a two-layer feed-forward."""

    def __init__(self, dim, n_heads, ff_dim, rng, dtype=np.float64):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.norm_attn = LayerNorm(dim, dtype=dtype)
        self.w_qkv = Linear(dim, 3 * dim, rng=rng, dtype=dtype)
        self.w_out = Linear(dim, dim, rng=rng, dtype=dtype)
        self.norm_ff = LayerNorm(dim, dtype=dtype)
        self.ff_in = Linear(dim, ff_dim, rng=rng, dtype=dtype)
        self.ff_out = Linear(ff_dim, dim, rng=rng, dtype=dtype)

    def _split_heads(self, x):
        # [B, L, D] -> [B, heads, L, head_dim]
        b, length, _ = x.shape
        return x.reshape(b, length, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge_heads(self, x):
        b, _, length, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, length, self.n_heads * self.head_dim)

    def _qkv(self, x):
        dim = self.n_heads * self.head_dim
        qkv = self.w_qkv.forward(x)
        q = self._split_heads(qkv[:, :, 0:dim])
        k = self._split_heads(qkv[:, :, dim : 2 * dim])
        v = self._split_heads(qkv[:, :, 2 * dim : 3 * dim])
        return q, k, v

    def _attend(self, q, k, v, mask=None):
        scale = 1.0 / np.sqrt(self.head_dim)
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * scale
        if mask is not None:
            scores = scores + Tensor(mask)
        weights = T.softmax(scores, axis=-1)
        return T.matmul(weights, v)

    def forward_block(self, x, mask):
        h = self.norm_attn.forward(x)
        q, k, v = self._qkv(h)
        attended = self._merge_heads(self._attend(q, k, v, mask))
        x = x + self.w_out.forward(attended)
        h = self.norm_ff.forward(x)
        return x + self.ff_out.forward(T.relu(self.ff_in.forward(h)))

    def forward_step(self, x, cache):
        """One-step inference: ``x`` is [B, 1, D]; cache holds past K/V."""
        h = self.norm_attn.forward(x)
        q, k, v = self._qkv(h)
        if cache["k"] is not None:
            k = T.concat([cache["k"], k], axis=2)
            v = T.concat([cache["v"], v], axis=2)
        cache["k"], cache["v"] = k, v
        attended = self._merge_heads(self._attend(q, k, v))
        x = x + self.w_out.forward(attended)
        h = self.norm_ff.forward(x)
        return x + self.ff_out.forward(T.relu(self.ff_in.forward(h)))


class IndexLanguageModel(Module):
    """Predicts per-codebook index distributions for entropy coding."""

    def __init__(self, cfg: LmConfig = None, frame_rate: float = 75.0,
                 rng=None, dtype=np.float64):
        super().__init__()
        self.cfg = cfg if cfg is not None else LmConfig()
        self.frame_rate = frame_rate
        self.block_len = self.cfg.context_steps(frame_rate)
        if self.block_len < 1:
            raise ValueError("context window must cover at least one step")
        rng = np.random.default_rng() if rng is None else rng
        cfg = self.cfg
        self.start_index = cfg.n_entries
        self.embeddings = ModuleList(
            [
                Embedding(cfg.n_entries + 1, cfg.model_dim, rng=rng,
                          dtype=dtype, scale=_EMBED_SCALE)
                for _ in range(cfg.max_n_q)
            ]
        )
        self.layers = ModuleList(
            [
                TransformerLayer(cfg.model_dim, cfg.n_heads, cfg.ff_dim, rng, dtype)
                for _ in range(cfg.n_layers)
            ]
        )
        self.final_norm = LayerNorm(cfg.model_dim, dtype=dtype)
        self.heads = ModuleList(
            [
                Linear(cfg.model_dim, cfg.n_entries, rng=rng, dtype=dtype)
                for _ in range(cfg.max_n_q)
            ]
        )
        self.dtype = dtype

    # -- shared pieces -------------------------------------------------------

    def _check_n_q(self, n_q: int):
        if not 1 <= n_q <= self.cfg.max_n_q:
            raise ValueError(f"n_q must be in [1, {self.cfg.max_n_q}]")

    def _embed(self, idx) -> Tensor:
        """Sum per-codebook embeddings: idx [B, n_q, L] -> [B, L, D]."""
        idx = np.asarray(idx)
        total = None
        for q in range(idx.shape[1]):
            e = self.embeddings[q].forward(idx[:, q, :])
            total = e if total is None else total + e
        return total

    def _input_indices(self, indices, t0: int, t1: int) -> np.ndarray:
        """Model inputs for global steps [t0, t1): step t is predicted from
        step t-1's indices, with the start token at global step 0."""
        n_q = indices.shape[0]
        prev = np.empty((1, n_q, t1 - t0), dtype=np.int64)
        if t0 == 0:
            prev[0, :, 0] = self.start_index
            prev[0, :, 1:] = indices[:, 0 : t1 - 1]
        else:
            prev[0] = indices[:, t0 - 1 : t1 - 1]
        return prev

    def _block_hidden(self, input_idx, offset: int = 0) -> Tensor:
        """[B, n_q, L] previous-step indices -> hidden states [B, L, D]."""
        length = input_idx.shape[2]
        x = self._embed(input_idx)
        pe = sinusoidal_positions(
            np.arange(offset, offset + length), self.cfg.model_dim, self.dtype
        )
        x = x + Tensor(pe)
        mask = causal_mask(length, self.dtype)
        for layer in self.layers:
            x = layer.forward_block(x, mask)
        return self.final_norm.forward(x)

    # -- batch path ----------------------------------------------------------

    def batch_probs(self, indices, n_q: int = None) -> np.ndarray:
        """Per-step distributions for a whole stream: [n_q, T, n_entries].

        ``indices`` is [n_q, T]; entry ``[:, t]`` of the result conditions
        only on indices strictly before ``t`` within the same context block
        (plus the boundary-conditioning input).
        """
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 2:
            raise ValueError("indices must be [n_q, T]")
        n_q = indices.shape[0] if n_q is None else n_q
        self._check_n_q(n_q)
        indices = indices[:n_q]
        if np.any(indices < 0) or np.any(indices >= self.cfg.n_entries):
            raise ValueError("index outside codebook range")
        n_steps = indices.shape[1]
        out = np.empty((n_q, n_steps, self.cfg.n_entries), dtype=np.float64)
        with T.no_grad():
            for t0 in range(0, n_steps, self.block_len):
                t1 = min(n_steps, t0 + self.block_len)
                hidden = self._block_hidden(self._input_indices(indices, t0, t1))
                for q in range(n_q):
                    logits = self.heads[q].forward(hidden)
                    probs = T.softmax(logits, axis=-1)
                    out[q, t0:t1] = probs.data[0].astype(np.float64)
        return out

    def predict_probs(self, context, n_q: int) -> np.ndarray:
        """Distributions for the next step given a (possibly empty) prefix.

        ``context`` is [n_q, t]; only the tail of the current context block
        influences the result, so arbitrarily long prefixes are accepted.
        """
        context = np.asarray(context, dtype=np.int64).reshape(n_q, -1)
        self._check_n_q(n_q)
        t = context.shape[1]
        t0 = (t // self.block_len) * self.block_len
        with T.no_grad():
            # Inputs for steps t0 .. t inclusive; predict the last one.
            if t0 == t:
                if t0 == 0:
                    prev = np.full((1, n_q, 1), self.start_index, dtype=np.int64)
                else:
                    prev = context[None, :, t - 1 : t]
            else:
                prev = self._input_indices(context, t0, t + 1)
            hidden = self._block_hidden(prev)
            out = np.empty((n_q, self.cfg.n_entries), dtype=np.float64)
            for q in range(n_q):
                probs = T.softmax(self.heads[q].forward(hidden), axis=-1)
                out[q] = probs.data[0, -1].astype(np.float64)
        return out

    # -- streaming path ------------------------------------------------------

    def stream_start(self, n_q: int) -> "LmStream":
        self._check_n_q(n_q)
        return LmStream(self, n_q)

    # -- training ------------------------------------------------------------

    def train_loss(self, indices, n_q: int = None, rng=None) -> Tensor:
        """Mean cross-entropy of next-index prediction over a batch.

        ``indices`` is [B, n_q, T].  The position code is shifted by a
        random offset per call when an ``rng`` is supplied.
        """
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 3:
            raise ValueError("indices must be [B, n_q, T]")
        n_batch, total_q, n_steps = indices.shape
        n_q = total_q if n_q is None else n_q
        self._check_n_q(n_q)
        offset = int(rng.integers(0, self.block_len)) if rng is not None else 0
        total = None
        for t0 in range(0, n_steps, self.block_len):
            t1 = min(n_steps, t0 + self.block_len)
            length = t1 - t0
            prev = np.empty((n_batch, n_q, length), dtype=np.int64)
            if t0 == 0:
                prev[:, :, 0] = self.start_index
                prev[:, :, 1:] = indices[:, :n_q, 0 : t1 - 1]
            else:
                prev[:, :, :] = indices[:, :n_q, t0 - 1 : t1 - 1]
            hidden = self._block_hidden(prev, offset=offset)
            for q in range(n_q):
                logits = self.heads[q].forward(hidden)
                flat = logits.reshape(n_batch * length, self.cfg.n_entries)
                targets = indices[:, q, t0:t1].reshape(-1)
                ce = T.cross_entropy_logits(flat, targets)
                weight = float(length) / float(n_steps * n_q)
                term = ce * weight
                total = term if total is None else total + term
        return total


class LmStream:
    """Step-by-step probability stream with per-layer key/value caches.

    Matches the batch path: caches reset at context-block boundaries while
    the first input of a block still carries the previous step's indices.
    """

    def __init__(self, lm: IndexLanguageModel, n_q: int):
        self.lm = lm
        self.n_q = n_q
        self.global_t = 0
        self.local_t = 0
        self._caches = [{"k": None, "v": None} for _ in lm.layers]

    def next_probs(self, prev_indices) -> np.ndarray:
        """Distributions for the current step: [n_q, n_entries].

        ``prev_indices`` are the previous step's indices ([n_q]) — required
        for every step after the first, ignored at step 0 where the start
        token is used.
        """
        lm = self.lm
        if self.global_t == 0:
            idx = np.full((1, self.n_q, 1), lm.start_index, dtype=np.int64)
        else:
            if prev_indices is None:
                raise ValueError("previous indices required after step 0")
            prev = np.asarray(prev_indices, dtype=np.int64).reshape(self.n_q)
            idx = prev[None, :, None]
        if self.local_t == lm.block_len:
            self._caches = [{"k": None, "v": None} for _ in lm.layers]
            self.local_t = 0
        with T.no_grad():
            x = lm._embed(idx)
            pe = sinusoidal_positions([self.local_t], lm.cfg.model_dim, lm.dtype)
            x = x + Tensor(pe)
            for layer, cache in zip(lm.layers, self._caches):
                x = layer.forward_step(x, cache)
            hidden = lm.final_norm.forward(x)
            out = np.empty((self.n_q, lm.cfg.n_entries), dtype=np.float64)
            for q in range(self.n_q):
                probs = T.softmax(lm.heads[q].forward(hidden), axis=-1)
                out[q] = probs.data[0, 0].astype(np.float64)
        self.global_t += 1
        self.local_t += 1
        return out


# -- entropy-coding entry points --------------------------------------------


def compress_indices(indices, lm: IndexLanguageModel) -> bytes:
    """Entropy-code an index tensor [n_q, T] against the model's
    predictions; the encoder uses the bulk probability path."""
    indices = np.asarray(indices, dtype=np.int64)
    n_q, n_steps = indices.shape
    if n_steps == 0:
        return RangeEncoder().finish()
    probs = lm.batch_probs(indices, n_q)
    enc = RangeEncoder()
    for t in range(n_steps):
        for q in range(n_q):
            table = quantize_pdf(probs[q, t])
            enc.encode(int(indices[q, t]), table)
    return enc.finish()


def decompress_indices(data: bytes, lm: IndexLanguageModel, n_steps: int,
                       n_q: int) -> np.ndarray:
    """Invert ``compress_indices``: runs the model in streaming order,
    reproducing the encoder's table sequence after 1e-6 rounding."""
    lm._check_n_q(n_q)
    out = np.zeros((n_q, n_steps), dtype=np.int64)
    if n_steps == 0:
        return out
    dec = RangeDecoder(data)
    stream = lm.stream_start(n_q)
    prev = None
    for t in range(n_steps):
        probs = stream.next_probs(prev)
        for q in range(n_q):
            table = quantize_pdf(probs[q])
            out[q, t] = dec.decode(table)
        prev = out[:, t]
    return out
