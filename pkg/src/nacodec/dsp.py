"""Spectral front end: STFT, magnitudes and mel filterbanks.

The STFT is a single fused autodiff op. Frames start at sample 0 with no
centering, use a periodic Hann window, and hop by ``hop`` samples; the
output stacks the real and imaginary planes as two channels, which is the
layout both the spectral losses and the spectrogram discriminator consume.
The backward pass is the analytic adjoint (inverse FFT of the half-spectrum
cotangent with interior bins halved, then windowed overlap-add).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, node, tracks


def hann_window(window_size: int, dtype=np.float64) -> np.ndarray:
    """Periodic Hann window: 0.5 * (1 - cos(2 pi n / W))."""
    n = np.arange(window_size, dtype=np.float64)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / window_size))
    return w.astype(dtype)


def n_frames(n_samples: int, window_size: int, hop: int) -> int:
    if n_samples < window_size:
        return 0
    return 1 + (n_samples - window_size) // hop


def _frame(x: np.ndarray, window_size: int, hop: int) -> np.ndarray:
    """View [B, T] as [B, Tf, W] without copying."""
    b, t = x.shape
    tf = n_frames(t, window_size, hop)
    sb, st = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(b, tf, window_size), strides=(sb, hop * st, st)
    )


def _overlap_add(frames: np.ndarray, n_samples: int, hop: int) -> np.ndarray:
    """Scatter-add [B, Tf, W] frames back onto a [B, n_samples] signal."""
    b, tf, w = frames.shape
    out = np.zeros((b, n_samples), dtype=frames.dtype)
    if w % hop == 0:
        # Frames split into W/hop sub-blocks tile the signal without overlap.
        for j in range(w // hop):
            span = out[:, j * hop : j * hop + tf * hop]
            span.reshape(b, tf, hop)[...] += frames[:, :, j * hop : (j + 1) * hop]
    else:
        for t in range(tf):
            out[:, t * hop : t * hop + w] += frames[:, t, :]
    return out


def stft(x, window_size: int, hop: int, normalized: bool = True) -> Tensor:
    """Short-time Fourier transform as a [..., 2, F, Tf] tensor.

    For input [T] returns [2, F, Tf]; for [B, T] returns [B, 2, F, Tf], with
    F = window_size // 2 + 1. ``normalized`` divides by the window L2 norm.
    """
    x = as_tensor(x)
    squeeze = x.ndim == 1
    data = x.data[None, :] if squeeze else x.data
    if data.ndim != 2:
        raise ValueError("stft expects a [T] or [B, T] input")
    if data.shape[-1] < window_size:
        raise ValueError("signal shorter than the analysis window")
    data = np.ascontiguousarray(data)
    win = hann_window(window_size, dtype=data.dtype)
    if normalized:
        win = win / np.linalg.norm(win)

    frames = _frame(data, window_size, hop) * win
    spec = np.fft.rfft(frames, axis=-1)  # [B, Tf, F]
    re = spec.real.swapaxes(1, 2).astype(data.dtype)
    im = spec.imag.swapaxes(1, 2).astype(data.dtype)
    out = np.stack((re, im), axis=1)  # [B, 2, F, Tf]
    if squeeze:
        out = out[0]
    if not tracks(x):
        return Tensor(out)

    n_samples = data.shape[-1]

    def bw(g):
        gg = g[None] if squeeze else g
        c = gg[:, 0].swapaxes(1, 2) + 1j * gg[:, 1].swapaxes(1, 2)  # [B, Tf, F]
        c = c.copy()
        c[..., 1:-1] *= 0.5
        # Imaginary cotangents at DC/Nyquist correspond to constant-zero
        # outputs; irfft of the real part alone drops them, as required.
        adj = np.fft.irfft(c, n=window_size, axis=-1) * window_size
        adj = (adj * win).astype(data.dtype)
        gx = _overlap_add(adj, n_samples, hop)
        x._accum(gx[0] if squeeze else gx)

    return node(out, (x,), bw)


def magnitude(spec) -> Tensor:
    """Complex magnitude of a [..., 2, F, Tf] stacked spectrum."""
    spec = as_tensor(spec)
    re = spec.data[..., 0, :, :]
    im = spec.data[..., 1, :, :]
    out = np.sqrt(re * re + im * im)
    if not tracks(spec):
        return Tensor(out)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(out > 0, 1.0 / np.where(out > 0, out, 1.0), 0.0)

    def bw(g):
        buf = np.empty_like(spec.data)
        buf[..., 0, :, :] = g * re * inv
        buf[..., 1, :, :] = g * im * inv
        spec._accum(buf)

    return node(out, (spec,), bw)


def mel_filterbank(
    window_size: int, n_mels: int, sample_rate: int, dtype=np.float64
) -> np.ndarray:
    """[n_mels, F] triangular filters on the mel scale, rows summing to 1.

    Each triangle is integrated exactly over every FFT-bin frequency cell
    rather than sampled at bin centers, so no filter row is all zero even
    when n_mels far exceeds the number of bins (e.g. 64 mels at W=32).
    """
    f_max = sample_rate / 2.0
    n_bins = window_size // 2 + 1

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_pts = np.linspace(to_mel(0.0), to_mel(f_max), n_mels + 2)
    f_pts = from_mel(mel_pts)

    df = sample_rate / window_size
    centers = np.arange(n_bins) * df
    cell_lo = np.clip(centers - df / 2.0, 0.0, f_max)
    cell_hi = np.clip(centers + df / 2.0, 0.0, f_max)

    def ramp_integral(lo, hi, f_a, f_b, rising):
        """Integral over cell [lo, hi] of the linear ramp on [f_a, f_b]."""
        a = np.maximum(lo, f_a)
        b = np.minimum(hi, f_b)
        length = np.maximum(b - a, 0.0)
        mid = 0.5 * (a + b)
        if rising:
            val = (mid - f_a) / (f_b - f_a)
        else:
            val = (f_b - mid) / (f_b - f_a)
        return np.where(length > 0, val * length, 0.0)

    bank = np.zeros((n_mels, n_bins))
    for j in range(n_mels):
        f_lo, f_c, f_hi = f_pts[j], f_pts[j + 1], f_pts[j + 2]
        acc = ramp_integral(cell_lo, cell_hi, f_lo, f_c, rising=True)
        acc = acc + ramp_integral(cell_lo, cell_hi, f_c, f_hi, rising=False)
        bank[j] = acc
    bank /= bank.sum(axis=1, keepdims=True)
    return bank.astype(dtype)


def mel_spectrogram(
    x, window_size: int, hop: int, n_mels: int, sample_rate: int,
    normalized: bool = True,
) -> Tensor:
    """Mel magnitude spectrogram, [..., n_mels, Tf]."""
    x = as_tensor(x)
    spec = stft(x, window_size, hop, normalized=normalized)
    mag = magnitude(spec)
    bank = Tensor(mel_filterbank(window_size, n_mels, sample_rate, dtype=x.data.dtype))
    from .tensor import matmul

    return matmul(bank, mag)
