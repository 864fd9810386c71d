"""Multi-scale short-time-spectrum discriminator.

Five identically structured 2D convolutional networks score complex
spectrograms computed at window lengths (2048, 1024, 512, 256, 128) — twice
those at 48 kHz — with real and imaginary parts stacked as two input
channels.  Each network exposes five post-activation feature maps for the
feature-matching loss plus a single-channel logit map.  Multi-channel audio
is scored per channel independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dsp import stft
from .layers import Conv2d, Module, ModuleList
from .tensor import Tensor

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class MsStftConfig:
    """Structure of the multi-scale spectral discriminator."""

    window_lengths: tuple = (2048, 1024, 512, 256, 128)
    channels: int = 32
    input_kernel: tuple = (3, 8)
    time_dilations: tuple = (1, 2, 4)
    freq_stride: int = 2
    final_kernel: tuple = (3, 3)

    @classmethod
    def for_sample_rate(cls, sample_rate: int, **kwargs) -> "MsStftConfig":
        windows = (2048, 1024, 512, 256, 128)
        if sample_rate >= 48_000:
            windows = tuple(2 * w for w in windows)
        return cls(window_lengths=windows, **kwargs)


def _same_padding(n: int, kernel: int, stride: int, dilation: int):
    """Padding (before, after) so output length is ``ceil(n / stride)``."""
    effective = dilation * (kernel - 1) + 1
    out = -(-n // stride)
    total = max((out - 1) * stride + effective - n, 0)
    return (total // 2, total - total // 2)


class SpectrogramScorer(Module):
    """One scale's network: 5 feature convolutions plus a logit projection.

    Input is a two-channel (real, imaginary) spectrogram [B, 2, F, T].
    Layers: an input convolution, three time-dilated convolutions with
    stride 2 along frequency, and a 3x3 convolution — each followed by a
    leaky rectifier whose output is a feature map — then a final 3x3
    projection to a one-channel logit map.  All convolutions use weight
    normalization and same-padding on both axes.
    """

    def __init__(self, cfg: MsStftConfig, rng, dtype=np.float32):
        super().__init__()
        ch = cfg.channels
        self.convs = ModuleList(
            [Conv2d(2, ch, cfg.input_kernel, norm="weight", rng=rng, dtype=dtype)]
        )
        for dilation in cfg.time_dilations:
            self.convs.append(
                Conv2d(
                    ch,
                    ch,
                    cfg.input_kernel,
                    stride=(cfg.freq_stride, 1),
                    dilation=(1, dilation),
                    norm="weight",
                    rng=rng,
                    dtype=dtype,
                )
            )
        self.convs.append(
            Conv2d(ch, ch, cfg.final_kernel, norm="weight", rng=rng, dtype=dtype)
        )
        self.conv_logit = Conv2d(
            ch, 1, cfg.final_kernel, norm="weight", rng=rng, dtype=dtype
        )

    @staticmethod
    def _same_pad_2d(x, conv: Conv2d):
        _, _, n_freq, n_time = x.shape
        pad_f = _same_padding(n_freq, conv.kernel[0], conv.stride[0], conv.dilation[0])
        pad_t = _same_padding(n_time, conv.kernel[1], conv.stride[1], conv.dilation[1])
        return (pad_f, pad_t)

    def forward(self, spec: Tensor):
        features = []
        h = spec
        for conv in self.convs:
            h = conv.forward(h, padding=self._same_pad_2d(h, conv))
            h = T.leaky_relu(h, LEAKY_SLOPE)
            features.append(h)
        logit_map = self.conv_logit.forward(
            h, padding=self._same_pad_2d(h, self.conv_logit)
        )
        return logit_map, features


class MsStftDiscriminator(Module):
    """Scores audio at five spectral resolutions.

    ``forward(audio)`` accepts [T], [C, T], or [B, C, T] waveforms and
    returns aligned lists of logit maps and per-scale feature-map lists, one
    entry per (scale, channel) pair — channels of multi-channel audio are
    scored independently by the same networks.
    """

    def __init__(self, cfg: MsStftConfig = None, rng=None, dtype=np.float32):
        super().__init__()
        self.cfg = cfg if cfg is not None else MsStftConfig()
        rng = np.random.default_rng() if rng is None else rng
        self.scorers = ModuleList(
            [SpectrogramScorer(self.cfg, rng, dtype) for _ in self.cfg.window_lengths]
        )

    def forward(self, audio):
        audio = T.as_tensor(audio)
        if audio.ndim == 1:
            audio = audio.reshape(1, 1, audio.shape[0])
        elif audio.ndim == 2:
            audio = audio.reshape(1, *audio.shape)
        if audio.ndim != 3:
            raise ValueError("audio must be [T], [C, T], or [B, C, T]")
        n_batch, n_channels, n_samples = audio.shape
        largest = max(self.cfg.window_lengths)
        if n_samples < largest:
            raise ValueError(
                f"audio length {n_samples} shorter than the largest analysis "
                f"window {largest}"
            )
        logit_maps = []
        feature_lists = []
        for window, scorer in zip(self.cfg.window_lengths, self.scorers):
            for channel in range(n_channels):
                mono = audio[:, channel, :]
                spec = stft(mono, window, window // 4, normalized=False)
                logit_map, features = scorer.forward(spec)
                logit_maps.append(logit_map)
                feature_lists.append(features)
        return logit_maps, feature_lists

    def zero_logit_layers(self):
        """Zero every logit projection so all scores start at exactly 0."""
        for scorer in self.scorers:
            conv = scorer.conv_logit
            conv.w_g.data = np.zeros_like(conv.w_g.data)
            if conv.b is not None:
                conv.b.data = np.zeros_like(conv.b.data)
