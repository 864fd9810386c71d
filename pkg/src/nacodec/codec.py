"""Convolutional encoder/decoder with a streaming-capable causal layout.

Two layouts share one topology:

* ``streamable``: every convolution is causal (all padding ahead of the
  first sample), normalization is weight reparameterization only, and each
  layer can carry per-session state so audio is processed hop by hop with
  bit-identical results to the batch pass.
* ``non_streamable``: padding is split around the signal (one extra sample
  ahead when odd), convolutions are followed by normalization with
  statistics over (channels, time), and whole recordings are processed in
  overlapping one-second chunks normalized per chunk.

The encoder halves time by each block's stride and doubles channels; with
strides (2, 4, 5, 8) one latent step covers 320 samples, i.e. 75 latent
steps per second at 24 kHz and 150 at 48 kHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import (
    LSTM,
    ChannelTimeNorm,
    Conv1d,
    ConvTranspose1d,
    Module,
    ModuleList,
)
from .tensor import Tensor, elu, no_grad


@dataclass
class ArchConfig:
    sample_rate: int = 24000
    audio_channels: int = 1
    base_channels: int = 32
    strides: tuple = (2, 4, 5, 8)
    latent_dim: int = 128
    kernel_io: int = 7
    kernel_res: int = 3
    lstm_layers: int = 2
    mode: str = "streamable"

    def __post_init__(self):
        if self.mode not in ("streamable", "non_streamable"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be positive")
        if self.base_channels % 2:
            raise ValueError("base_channels must be even")

    @property
    def n_blocks(self) -> int:
        return len(self.strides)

    @property
    def hop(self) -> int:
        return int(np.prod(self.strides))

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def norm(self) -> str:
        # Streaming forbids activation statistics over time.
        return "weight" if self.mode == "streamable" else "layer"

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2**self.n_blocks


def _split_pad(total: int) -> tuple:
    return ((total + 1) // 2, total // 2)


class CodecConv(Module):
    """Convolution with the codec's padding policy and streaming state."""

    def __init__(self, cin, cout, kernel, stride, mode, rng, dtype=np.float32,
                 normed=True):
        super().__init__()
        self.mode = mode
        self.kernel, self.stride = kernel, stride
        norm = "weight" if (mode == "streamable" and normed) else "none"
        self.conv = Conv1d(cin, cout, kernel, stride=stride, norm=norm,
                           rng=rng, dtype=dtype)
        self.post_norm = (
            ChannelTimeNorm(cout, dtype=dtype)
            if (mode == "non_streamable" and normed)
            else None
        )

    def forward(self, x):
        total = self.kernel - self.stride
        padding = (total, 0) if self.mode == "streamable" else _split_pad(total)
        y = self.conv.forward(x, padding=padding)
        if self.post_norm is not None:
            y = self.post_norm.forward(y)
        return y

    def init_stream(self, batch: int, dtype=np.float32):
        if self.mode != "streamable":
            raise RuntimeError("streaming requires the causal layout")
        ctx = self.kernel - self.stride
        return {"prev": np.zeros((batch, self.conv.cin, ctx), dtype=dtype)}

    def stream_step(self, x: Tensor, state: dict) -> Tensor:
        if x.shape[-1] % self.stride:
            raise ValueError("streaming chunk must be a stride multiple")
        joined = T.concat([Tensor(state["prev"]), x], axis=2)
        y = self.conv.forward(joined, padding=(0, 0))
        ctx = self.kernel - self.stride
        if ctx:
            state["prev"] = joined.data[:, :, joined.shape[-1] - ctx :]
        return y


class CodecConvTranspose(Module):
    """Transposed convolution with right-trim (causal) or centered trim."""

    def __init__(self, cin, cout, kernel, stride, mode, rng, dtype=np.float32,
                 normed=True):
        super().__init__()
        self.mode = mode
        self.kernel, self.stride = kernel, stride
        norm = "weight" if (mode == "streamable" and normed) else "none"
        self.conv = ConvTranspose1d(cin, cout, kernel, stride=stride, norm=norm,
                                    rng=rng, dtype=dtype)
        self.post_norm = (
            ChannelTimeNorm(cout, dtype=dtype)
            if (mode == "non_streamable" and normed)
            else None
        )

    def forward(self, x):
        total = self.kernel - self.stride
        trim = (0, total) if self.mode == "streamable" else _split_pad(total)
        y = self.conv.forward(x, trim=trim)
        if self.post_norm is not None:
            y = self.post_norm.forward(y)
        return y

    def init_stream(self, batch: int, dtype=np.float32):
        if self.mode != "streamable":
            raise RuntimeError("streaming requires the causal layout")
        ctx = self.kernel - self.stride
        return {"carry": np.zeros((batch, self.conv.cout, ctx), dtype=dtype)}

    def stream_step(self, x: Tensor, state: dict) -> Tensor:
        # Full overlap-add tail is carried; bias is added only on emitted
        # samples so overlapping regions receive it exactly once.
        n = x.shape[-1]
        full = self.conv.forward(x, trim=(0, 0), bias=False)
        ctx = self.kernel - self.stride
        emit_len = n * self.stride
        out = full.data.copy()
        out[:, :, :ctx] += state["carry"]
        if ctx:
            state["carry"] = out[:, :, emit_len:]
        emitted = Tensor(out[:, :, :emit_len])
        if self.conv.b is not None:
            emitted = emitted + Tensor(self.conv.b.data[:, None])
        return emitted


class ResidualUnit(Module):
    """Two kernel-3 convolutions with pre-activations and a skip path."""

    def __init__(self, channels, kernel, mode, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = CodecConv(channels, channels // 2, kernel, 1, mode, rng, dtype)
        self.conv2 = CodecConv(channels // 2, channels, kernel, 1, mode, rng, dtype)

    def forward(self, x):
        h = self.conv1.forward(elu(x))
        h = self.conv2.forward(elu(h))
        return x + h

    def init_stream(self, batch, dtype=np.float32):
        return [self.conv1.init_stream(batch, dtype),
                self.conv2.init_stream(batch, dtype)]

    def stream_step(self, x, state):
        h = self.conv1.stream_step(elu(x), state[0])
        h = self.conv2.stream_step(elu(h), state[1])
        return x + h


class Encoder(Module):
    """Audio [B, Ca, T] -> latent [B, D, T / hop]."""

    def __init__(self, cfg: ArchConfig, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.cfg = cfg
        ch = cfg.base_channels
        self.conv_in = CodecConv(cfg.audio_channels, ch, cfg.kernel_io, 1,
                                 cfg.mode, rng, dtype)
        res, downs = [], []
        for s in cfg.strides:
            res.append(ResidualUnit(ch, cfg.kernel_res, cfg.mode, rng, dtype))
            downs.append(CodecConv(ch, ch * 2, 2 * s, s, cfg.mode, rng, dtype))
            ch *= 2
        self.res = ModuleList(res)
        self.downs = ModuleList(downs)
        self.lstm = LSTM(ch, cfg.lstm_layers, rng=rng, dtype=dtype)
        self.conv_out = CodecConv(ch, cfg.latent_dim, cfg.kernel_io, 1,
                                  cfg.mode, rng, dtype, normed=False)

    def forward(self, x, lstm_state=None):
        h = self.conv_in.forward(x)
        for unit, down in zip(self.res, self.downs):
            h = unit.forward(h)
            h = down.forward(elu(h))
        y, lstm_state = self.lstm.forward(h, lstm_state)
        h = h + y
        return self.conv_out.forward(elu(h))

    def init_stream(self, batch: int = 1, dtype=np.float32):
        return {
            "conv_in": self.conv_in.init_stream(batch, dtype),
            "res": [u.init_stream(batch, dtype) for u in self.res],
            "downs": [d.init_stream(batch, dtype) for d in self.downs],
            "lstm": self.lstm.init_state(batch, dtype),
            "conv_out": self.conv_out.init_stream(batch, dtype),
        }

    def stream_step(self, x: Tensor, state: dict) -> Tensor:
        if x.shape[-1] % self.cfg.hop:
            raise ValueError("streaming chunk must be a hop multiple")
        h = self.conv_in.stream_step(x, state["conv_in"])
        for i, (unit, down) in enumerate(zip(self.res, self.downs)):
            h = unit.stream_step(h, state["res"][i])
            h = down.stream_step(elu(h), state["downs"][i])
        y, state["lstm"] = self.lstm.forward(h, state["lstm"])
        h = h + y
        return self.conv_out.stream_step(elu(h), state["conv_out"])


class Decoder(Module):
    """Latent [B, D, T'] -> audio [B, Ca, T' * hop]."""

    def __init__(self, cfg: ArchConfig, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.cfg = cfg
        ch = cfg.bottleneck_channels
        self.conv_in = CodecConv(cfg.latent_dim, ch, cfg.kernel_io, 1,
                                 cfg.mode, rng, dtype)
        self.lstm = LSTM(ch, cfg.lstm_layers, rng=rng, dtype=dtype)
        ups, res = [], []
        for s in reversed(cfg.strides):
            ups.append(CodecConvTranspose(ch, ch // 2, 2 * s, s, cfg.mode,
                                          rng, dtype))
            res.append(ResidualUnit(ch // 2, cfg.kernel_res, cfg.mode, rng, dtype))
            ch //= 2
        self.ups = ModuleList(ups)
        self.res = ModuleList(res)
        self.conv_out = CodecConv(ch, cfg.audio_channels, cfg.kernel_io, 1,
                                  cfg.mode, rng, dtype, normed=False)

    def forward(self, z, lstm_state=None):
        h = self.conv_in.forward(z)
        y, lstm_state = self.lstm.forward(h, lstm_state)
        h = h + y
        for up, unit in zip(self.ups, self.res):
            h = up.forward(elu(h))
            h = unit.forward(h)
        return self.conv_out.forward(elu(h))

    def init_stream(self, batch: int = 1, dtype=np.float32):
        return {
            "conv_in": self.conv_in.init_stream(batch, dtype),
            "lstm": self.lstm.init_state(batch, dtype),
            "ups": [u.init_stream(batch, dtype) for u in self.ups],
            "res": [u.init_stream(batch, dtype) for u in self.res],
            "conv_out": self.conv_out.init_stream(batch, dtype),
        }

    def stream_step(self, z: Tensor, state: dict) -> Tensor:
        h = self.conv_in.stream_step(z, state["conv_in"])
        y, state["lstm"] = self.lstm.forward(h, state["lstm"])
        h = h + y
        for i, (up, unit) in enumerate(zip(self.ups, self.res)):
            h = up.stream_step(elu(h), state["ups"][i])
            h = unit.stream_step(h, state["res"][i])
        return self.conv_out.stream_step(elu(h), state["conv_out"])


# -- chunked (non-streaming) pipeline ---------------------------------------

CHUNK_SECONDS = 1.0
CHUNK_OVERLAP_SECONDS = 0.01


def chunk_bounds(n_samples: int, sample_rate: int):
    """[(start, end)] covering the signal with 1 s chunks, 10 ms overlap.

    The number of chunks is ceil(T / chunk_len); the last chunk stretches to
    the end of the signal.
    """
    chunk = int(round(CHUNK_SECONDS * sample_rate))
    overlap = int(round(CHUNK_OVERLAP_SECONDS * sample_rate))
    stride = chunk - overlap
    n = max(1, math.ceil(n_samples / chunk))
    bounds = []
    for k in range(n):
        start = k * stride
        end = start + chunk if k < n - 1 else n_samples
        bounds.append((start, end))
    return bounds


def chunk_scale(chunk: np.ndarray) -> float:
    """RMS (over all channels and samples) plus a floor."""
    return float(np.sqrt(np.mean(chunk.astype(np.float64) ** 2)) + 1e-8)


def crossfade_join(chunks, bounds, n_samples: int) -> np.ndarray:
    """Join decoded chunks, linearly cross-fading over each overlap."""
    ca = chunks[0].shape[0]
    dtype = chunks[0].dtype
    out = np.zeros((ca, n_samples), dtype=np.float64)
    filled = 0  # samples finalized so far
    for (start, end), piece in zip(bounds, chunks):
        piece = piece[:, : end - start].astype(np.float64)
        if start >= filled:
            out[:, start:end] = piece
        else:
            v = filled - start  # overlap length
            ramp = np.linspace(0.0, 1.0, v, endpoint=False)
            out[:, start:filled] = out[:, start:filled] * (1 - ramp) + piece[:, :v] * ramp
            out[:, filled:end] = piece[:, v:]
        filled = end
    return out.astype(dtype)


class NeuralCodec(Module):
    """Encoder + residual vector quantizer + decoder."""

    def __init__(self, cfg: ArchConfig, quantizer=None, rng=None,
                 dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng=rng, dtype=dtype)
        self.decoder = Decoder(cfg, rng=rng, dtype=dtype)
        if quantizer is None:
            from .quantizers import ResidualVQ, RvqConfig

            quantizer = ResidualVQ(
                RvqConfig.for_sample_rate(cfg.sample_rate), cfg.latent_dim,
                rng=np.random.default_rng(rng.integers(0, 2**63)),
            )
        self.quantizer = quantizer

    # -- batch paths --------------------------------------------------------

    def pad_to_hop(self, audio: np.ndarray) -> np.ndarray:
        t = audio.shape[-1]
        rem = (-t) % self.cfg.hop
        if rem == 0:
            return audio
        return np.pad(audio, ((0, 0), (0, rem)))

    def encode_latent(self, audio) -> Tensor:
        """[B, Ca, T] audio (T a hop multiple) -> [B, D, T/hop]."""
        x = audio if isinstance(audio, Tensor) else Tensor(audio)
        if x.shape[-1] % self.cfg.hop:
            raise ValueError("audio length must be a hop multiple; pad first")
        return self.encoder.forward(x)

    def decode_latent(self, z) -> Tensor:
        return self.decoder.forward(z if isinstance(z, Tensor) else Tensor(z))

    # -- index-level file paths (inference) ---------------------------------

    def encode_indices(self, audio: np.ndarray, n_q: int):
        """Audio [Ca, T] -> (indices [n_q, T'], scales or None).

        Streamable mode encodes in one pass; otherwise the signal is cut
        into overlapping chunks, each normalized by its RMS.
        """
        if audio.ndim != 2 or audio.shape[0] != self.cfg.audio_channels:
            raise ValueError("expected [channels, samples] audio")
        dtype = self.encoder.conv_in.conv.weight().data.dtype
        with no_grad():
            if self.cfg.mode == "streamable":
                x = self.pad_to_hop(audio).astype(dtype)
                z = self.encode_latent(x[None]).data[0]
                return self.quantizer.encode(z, n_q), None
            parts, scales = [], []
            for start, end in chunk_bounds(audio.shape[-1], self.cfg.sample_rate):
                chunk = audio[:, start:end]
                s = chunk_scale(chunk)
                x = self.pad_to_hop(chunk / s).astype(dtype)
                z = self.encode_latent(x[None]).data[0]
                parts.append(self.quantizer.encode(z, n_q))
                scales.append(s)
            return np.concatenate(parts, axis=1), np.asarray(scales, np.float32)

    def decode_indices(self, indices: np.ndarray, scales, n_samples: int):
        """Inverse of :meth:`encode_indices`; returns [Ca, n_samples]."""
        with no_grad():
            if self.cfg.mode == "streamable":
                z = self.quantizer.decode(indices)
                audio = self.decode_latent(z[None]).data[0]
                return audio[:, :n_samples]
            bounds = chunk_bounds(n_samples, self.cfg.sample_rate)
            if scales is None or len(scales) != len(bounds):
                raise ValueError("chunk scale count does not match the layout")
            counts = [
                math.ceil((end - start) / self.cfg.hop) for start, end in bounds
            ]
            if sum(counts) != indices.shape[1]:
                raise ValueError("latent step count does not match the layout")
            chunks, offset = [], 0
            for (start, end), count, s in zip(bounds, counts, scales):
                z = self.quantizer.decode(indices[:, offset : offset + count])
                offset += count
                audio = self.decode_latent(z[None]).data[0]
                chunks.append(audio * s)
            return crossfade_join(chunks, bounds, n_samples)


def build_codec(cfg: ArchConfig, seed: int = 0, dtype=np.float32,
                quantizer=None) -> NeuralCodec:
    """Deterministically initialized codec (same seed, same weights)."""
    return NeuralCodec(cfg, quantizer=quantizer,
                       rng=np.random.default_rng(seed), dtype=dtype)
