"""WAV ingestion and emission, restricted to 16-bit PCM mono/stereo.

Samples map between int16 and floats in [-1, 1] with a fixed scale of
32768, so a write/read round trip is exact to one quantization step.
"""

from __future__ import annotations

import wave

import numpy as np


class WavFormatError(ValueError):
    """The file is not 16-bit PCM mono/stereo RIFF audio."""


def read_wav(path) -> tuple:
    """Read a PCM16 WAV file; returns (audio [channels, T] float64, rate)."""
    try:
        with wave.open(str(path), "rb") as handle:
            n_channels = handle.getnchannels()
            width = handle.getsampwidth()
            rate = handle.getframerate()
            n_frames = handle.getnframes()
            if width != 2:
                raise WavFormatError(
                    f"only 16-bit PCM is supported, got sample width {width}"
                )
            if n_channels not in (1, 2):
                raise WavFormatError(
                    f"only mono or stereo is supported, got {n_channels} channels"
                )
            raw = handle.readframes(n_frames)
    except wave.Error as exc:
        raise WavFormatError(f"not a readable WAV file: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    audio = samples.reshape(-1, n_channels).T
    return np.ascontiguousarray(audio), rate


def write_wav(path, audio, sample_rate: int):
    """Write [T] or [channels, T] float audio as PCM16; values are clipped
    to [-1, 1] and scaled by 32768."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 1:
        audio = audio[None, :]
    if audio.ndim != 2 or audio.shape[0] not in (1, 2):
        raise WavFormatError("audio must be [T] or [channels, T] with 1-2 channels")
    scaled = np.round(np.clip(audio, -1.0, 1.0) * 32768.0)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(pcm.shape[0])
        handle.setsampwidth(2)
        handle.setframerate(int(sample_rate))
        handle.writeframes(pcm.T.tobytes())
