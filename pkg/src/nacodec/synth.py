"""Synthetic audio sources and the on-the-fly training mix sampler.

Real dataset pools are replaced by four deterministic-given-a-generator
synthetic pools: harmonic tone stacks (the music-like pool), frequency
sweeps, band-limited noise, and amplitude-modulated harmonics.  A mix is
drawn by first picking one of four strategies (single music-like source,
single source from the other pools, a two-source mix from all pools, or a
three-source mix from the non-music pools), peak-normalizing each source,
applying an independent random gain, and summing.  Candidates whose peak
reaches full scale are rejected and redrawn within the same strategy, so
emitted samples always lie strictly inside [-1, 1] and the empirical
strategy frequencies match the configured probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Fixed length of one training example, in seconds.
EXAMPLE_SECONDS = 1.0

#: Strategy indices, in probability order.
SINGLE_MUSIC, SINGLE_OTHER, MIX_TWO, MIX_THREE = range(4)


@dataclass(frozen=True)
class SynthMixConfig:
    """Strategy probabilities and per-source gain range for mix sampling."""

    p_single_music: float = 0.32
    p_single_other: float = 0.32
    p_mix_two: float = 0.24
    p_mix_three: float = 0.12
    gain_db_min: float = -10.0
    gain_db_max: float = 6.0
    reject_clipped: bool = True
    max_attempts: int = 1000

    def __post_init__(self):
        probs = self.probabilities
        if np.any(probs < 0):
            raise ValueError("strategy probabilities must be non-negative")
        if not np.isclose(probs.sum(), 1.0, atol=1e-9):
            raise ValueError("strategy probabilities must sum to 1")
        if self.gain_db_min > self.gain_db_max:
            raise ValueError("gain_db_min must not exceed gain_db_max")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")

    @property
    def probabilities(self) -> np.ndarray:
        return np.asarray(
            [self.p_single_music, self.p_single_other, self.p_mix_two,
             self.p_mix_three],
            dtype=np.float64,
        )


def _normalize_peak(x: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(x)))
    return x / max(peak, 1e-12)


def _times(n_samples: int, sample_rate: int) -> np.ndarray:
    return np.arange(n_samples, dtype=np.float64) / sample_rate


def tone_stack(rng: np.random.Generator, n_samples: int,
               sample_rate: int) -> np.ndarray:
    """Music-like pool: a harmonic stack with power-law partial decay."""
    t = _times(n_samples, sample_rate)
    f0 = float(np.exp(rng.uniform(np.log(80.0), np.log(1000.0))))
    n_harmonics = int(rng.integers(2, 7))
    decay = float(rng.uniform(0.5, 2.0))
    x = np.zeros(n_samples, dtype=np.float64)
    for k in range(1, n_harmonics + 1):
        freq = k * f0
        if freq > 0.45 * sample_rate:
            break
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += k ** (-decay) * np.sin(2.0 * np.pi * freq * t + phase)
    return _normalize_peak(x)


def sweep(rng: np.random.Generator, n_samples: int,
          sample_rate: int) -> np.ndarray:
    """Linear frequency sweep between two log-uniform endpoints."""
    t = _times(n_samples, sample_rate)
    lo, hi = np.log(50.0), np.log(min(8000.0, 0.45 * sample_rate))
    f0 = float(np.exp(rng.uniform(lo, hi)))
    f1 = float(np.exp(rng.uniform(lo, hi)))
    duration = n_samples / sample_rate
    phase = 2.0 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2.0 * duration))
    return _normalize_peak(np.sin(phase + rng.uniform(0.0, 2.0 * np.pi)))


def band_noise(rng: np.random.Generator, n_samples: int,
               sample_rate: int) -> np.ndarray:
    """Gaussian noise band-limited by zeroing spectrum bins outside a band."""
    white = rng.standard_normal(n_samples)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    low = float(np.exp(rng.uniform(np.log(50.0), np.log(2000.0))))
    high = low * float(np.exp(rng.uniform(np.log(1.5), np.log(8.0))))
    high = min(max(high, low + 20.0), 0.45 * sample_rate)
    spectrum[(freqs < low) | (freqs > high)] = 0.0
    return _normalize_peak(np.fft.irfft(spectrum, n=n_samples))


def am_harmonics(rng: np.random.Generator, n_samples: int,
                 sample_rate: int) -> np.ndarray:
    """Small harmonic carrier under slow sinusoidal amplitude modulation."""
    t = _times(n_samples, sample_rate)
    f0 = float(np.exp(rng.uniform(np.log(200.0), np.log(2000.0))))
    carrier = np.zeros(n_samples, dtype=np.float64)
    for k in range(1, int(rng.integers(1, 4)) + 1):
        freq = k * f0
        if freq > 0.45 * sample_rate:
            break
        carrier += np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
    rate = float(rng.uniform(2.0, 20.0))
    depth = float(rng.uniform(0.3, 1.0))
    envelope = (1.0 - depth) + depth * 0.5 * (
        1.0 + np.sin(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi))
    )
    return _normalize_peak(carrier * envelope)


#: The music-like pool and the three other pools.
MUSIC_POOL = tone_stack
OTHER_POOLS = (sweep, band_noise, am_harmonics)
ALL_POOLS = (tone_stack, sweep, band_noise, am_harmonics)


def draw_strategy(cfg: SynthMixConfig, rng: np.random.Generator) -> int:
    """Pick a mixing strategy index according to the configured weights."""
    return int(rng.choice(4, p=cfg.probabilities))


def draw_gain_db(cfg: SynthMixConfig, rng: np.random.Generator) -> float:
    """Per-source gain in decibels, uniform over the configured range."""
    return float(rng.uniform(cfg.gain_db_min, cfg.gain_db_max))


def _strategy_generators(strategy: int, rng: np.random.Generator):
    if strategy == SINGLE_MUSIC:
        return [MUSIC_POOL]
    if strategy == SINGLE_OTHER:
        return [OTHER_POOLS[int(rng.integers(len(OTHER_POOLS)))]]
    if strategy == MIX_TWO:
        return [ALL_POOLS[int(rng.integers(len(ALL_POOLS)))] for _ in range(2)]
    if strategy == MIX_THREE:
        return [OTHER_POOLS[int(rng.integers(len(OTHER_POOLS)))]
                for _ in range(3)]
    raise ValueError(f"unknown strategy {strategy}")


def synth_example(cfg: SynthMixConfig, rng: np.random.Generator,
                  sample_rate: int = 24000):
    """One mixed example; returns ``(audio [T], strategy index)``.

    The strategy is fixed on the first draw; clipped candidates redraw only
    the sources and gains so rejection cannot skew strategy frequencies.
    """
    strategy = draw_strategy(cfg, rng)
    n_samples = int(round(sample_rate * EXAMPLE_SECONDS))
    for _ in range(cfg.max_attempts):
        generators = _strategy_generators(strategy, rng)
        mix = np.zeros(n_samples, dtype=np.float64)
        for generate in generators:
            gain = 10.0 ** (draw_gain_db(cfg, rng) / 20.0)
            mix += gain * generate(rng, n_samples, sample_rate)
        peak = float(np.max(np.abs(mix)))
        if peak < 1.0:
            return mix, strategy
        if not cfg.reject_clipped:
            return np.clip(mix, -1.0, 1.0), strategy
    raise RuntimeError(
        f"no unclipped candidate after {cfg.max_attempts} attempts"
    )


def synth_batch(cfg: SynthMixConfig, rng: np.random.Generator,
                batch_size: int = 1, sample_rate: int = 24000) -> np.ndarray:
    """Batch of mixed examples, ``[batch, T]`` with T = 1 s of samples."""
    return np.stack([
        synth_example(cfg, rng, sample_rate)[0] for _ in range(batch_size)
    ])


def tone_batch(rng: np.random.Generator, batch_size: int = 1,
               sample_rate: int = 24000, duration_s: float = 0.5,
               f_lo: float = 100.0, f_hi: float = 4000.0) -> np.ndarray:
    """Batch of single random sinusoids, ``[batch, T]`` (toy training data).

    Frequency is log-uniform in ``[f_lo, f_hi]``, amplitude uniform in
    [0.3, 0.9], phase uniform; every sample lies strictly inside [-1, 1].
    """
    n_samples = int(round(sample_rate * duration_s))
    t = _times(n_samples, sample_rate)
    out = np.empty((batch_size, n_samples), dtype=np.float64)
    for b in range(batch_size):
        freq = float(np.exp(rng.uniform(np.log(f_lo), np.log(f_hi))))
        amp = float(rng.uniform(0.3, 0.9))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        out[b] = amp * np.sin(2.0 * np.pi * freq * t + phase)
    return out


#: Fundamental frequencies for :func:`note_batch`: eight pitches dividing
#: the octave above A3 (220 Hz) evenly on the log scale.
NOTE_GRID_HZ = tuple(220.0 * 2.0 ** (k / 8.0) for k in range(8))


def note_batch(rng: np.random.Generator, batch_size: int = 1,
               sample_rate: int = 24000, duration_s: float = 0.25,
               pitches=NOTE_GRID_HZ, n_harmonics: int = 1) -> np.ndarray:
    """Batch of decaying pitched notes, ``[batch, T]`` (toy training data).

    Each note draws its fundamental uniformly from the fixed ``pitches``
    grid and stacks ``n_harmonics`` partials with halving amplitudes under
    an exponential decay envelope; oscillation starts at phase zero.  Peak
    amplitude is uniform in [0.3, 0.9], the decay constant uniform in
    [0.15, 0.4] s.  Unlike :func:`tone_batch` there is no random phase:
    given a draw (pitch, amplitude, decay) the waveform is deterministic,
    so pitches repeat across examples while the continuous nuisances never
    do -- held-out draws remain unseen, yet every example of a pitch pulls
    the model toward the same target waveform.
    """
    n_samples = int(round(sample_rate * duration_s))
    t = _times(n_samples, sample_rate)
    pitches = np.asarray(pitches, dtype=np.float64)
    out = np.empty((batch_size, n_samples), dtype=np.float64)
    for b in range(batch_size):
        f0 = float(pitches[int(rng.integers(len(pitches)))])
        amp = float(rng.uniform(0.3, 0.9))
        decay_s = float(rng.uniform(0.15, 0.4))
        wave = np.zeros(n_samples, dtype=np.float64)
        for h in range(1, n_harmonics + 1):
            wave += 0.5 ** (h - 1) * np.sin(2.0 * np.pi * h * f0 * t)
        wave /= max(float(np.max(np.abs(wave))), 1e-12)
        out[b] = amp * np.exp(-t / decay_s) * wave
    return out
