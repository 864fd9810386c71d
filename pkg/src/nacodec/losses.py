"""Training objective terms and the evaluation metric.

All reconstruction terms use mean reduction over elements so their scale is
independent of batch size and signal length.  Adversarial terms reduce each
logit map to a scalar by averaging before the hinge.  The relative feature
matching loss follows the sum-over-elements / mean-of-reference form (a
single layer with reference features (2, 2) against (0, 0) scores exactly
2.0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dsp import mel_spectrogram
from .tensor import Tensor

EPS = 1e-8

#: Multi-window spectral loss scales: window sizes 2**5 .. 2**11.
SPECTRAL_SCALES = tuple(range(5, 12))
SPECTRAL_N_MELS = 64


@dataclass(frozen=True)
class LossWeights:
    """Scalar coefficients for the weighted training objective.

    ``time``/``freq`` weight the waveform and spectral reconstruction terms,
    ``adv``/``feat`` the adversarial and feature-matching terms, and
    ``commit`` the quantizer commitment term (kept outside gradient
    balancing).
    """

    time: float = 0.1
    freq: float = 1.0
    adv: float = 3.0
    feat: float = 3.0
    commit: float = 1.0

    def __post_init__(self):
        for name in ("time", "freq", "adv", "feat", "commit"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name!r} must be non-negative")

    @classmethod
    def for_sample_rate(cls, sample_rate: int) -> "LossWeights":
        """Default weights; the adversarial pair is raised to 4 at 48 kHz."""
        if sample_rate >= 48_000:
            return cls(adv=4.0, feat=4.0)
        return cls()

    def balanced(self) -> dict:
        """The weights handled by the gradient balancer (commit excluded)."""
        return {
            "time": self.time,
            "freq": self.freq,
            "adv": self.adv,
            "feat": self.feat,
        }


def _check_same_shape(est: Tensor, ref: Tensor):
    if est.shape != ref.shape:
        raise ValueError(
            f"shape mismatch: estimate {est.shape} vs reference {ref.shape}"
        )


def time_loss(est, ref) -> Tensor:
    """Mean absolute error between waveforms."""
    est = T.as_tensor(est)
    ref = T.as_tensor(ref)
    _check_same_shape(est, ref)
    return T.tmean(T.absval(est - ref))


def freq_loss(est, ref, sample_rate: int, scales=SPECTRAL_SCALES,
              n_mels: int = SPECTRAL_N_MELS) -> Tensor:
    """Multi-window mel-spectrogram reconstruction loss.

    For each window size ``2**i`` (``i`` in ``scales``, hop a quarter
    window) the L1 and squared-L2 distances between 64-bin mel spectrograms
    are averaged over elements; the total is normalized by the number of
    scales times the two distance terms.
    """
    est = T.as_tensor(est)
    ref = T.as_tensor(ref)
    _check_same_shape(est, ref)
    n_samples = est.shape[-1]
    required = 2 ** max(scales)
    if n_samples < required:
        raise ValueError(
            f"input length {n_samples} below required minimum {required} "
            f"samples for the largest spectral window"
        )
    total = None
    for i in scales:
        window = 2 ** i
        hop = window // 4
        mel_est = mel_spectrogram(est, window, hop, n_mels, sample_rate)
        mel_ref = mel_spectrogram(ref, window, hop, n_mels, sample_rate)
        diff = mel_est - mel_ref
        term = T.tmean(T.absval(diff)) + T.tmean(diff * diff)
        total = term if total is None else total + term
    return total / float(len(scales) * 2)


def _mean_logit(logit_map) -> Tensor:
    return T.tmean(T.as_tensor(logit_map))


def gen_adv_loss(fake_logit_maps) -> Tensor:
    """Hinge generator loss: ``(1/K) sum_k max(0, 1 - D_k)``.

    Each entry of ``fake_logit_maps`` is one discriminator's logit map for
    the generated audio; the map is averaged to a scalar first.
    """
    if len(fake_logit_maps) == 0:
        raise ValueError("gen_adv_loss requires at least one logit map")
    total = None
    for logit_map in fake_logit_maps:
        term = T.relu(1.0 - _mean_logit(logit_map))
        total = term if total is None else total + term
    return total / float(len(fake_logit_maps))


def feat_match_loss(real_feats, fake_feats) -> Tensor:
    """Relative feature matching loss over discriminator activations.

    ``real_feats``/``fake_feats`` are nested lists: one list of L feature
    maps per discriminator.  Each layer contributes
    ``sum|real - fake| / (mean|real| + eps)``; the result is averaged over
    all K*L layers.  Reference features are treated as constants.
    """
    if len(real_feats) != len(fake_feats) or len(real_feats) == 0:
        raise ValueError("feature lists must be non-empty and aligned")
    total = None
    n_layers = 0
    for real_list, fake_list in zip(real_feats, fake_feats):
        if len(real_list) != len(fake_list) or len(real_list) == 0:
            raise ValueError("feature lists must be non-empty and aligned")
        for real, fake in zip(real_list, fake_list):
            real = T.as_tensor(real)
            fake = T.as_tensor(fake)
            _check_same_shape(fake, real)
            denom = float(np.mean(np.abs(real.data)) + EPS)
            term = T.tsum(T.absval(real.detach() - fake)) / denom
            total = term if total is None else total + term
            n_layers += 1
    return total / float(n_layers)


def disc_loss(real_logit_maps, fake_logit_maps) -> Tensor:
    """Hinge discriminator loss averaged over discriminators.

    ``(1/K) sum_k max(0, 1 - D_k(real)) + max(0, 1 + D_k(fake))`` with each
    logit map averaged to a scalar.
    """
    if len(real_logit_maps) != len(fake_logit_maps) or not real_logit_maps:
        raise ValueError("logit lists must be non-empty and aligned")
    total = None
    for real_map, fake_map in zip(real_logit_maps, fake_logit_maps):
        term = T.relu(1.0 - _mean_logit(real_map)) + T.relu(
            1.0 + _mean_logit(fake_map)
        )
        total = term if total is None else total + term
    return total / float(len(real_logit_maps))


def total_generator_loss(time, freq, adv, feat, commit,
                         weights: LossWeights) -> Tensor:
    """Plain weighted sum of the generator terms (no gradient balancing)."""
    total = (
        T.as_tensor(time) * weights.time
        + T.as_tensor(freq) * weights.freq
        + T.as_tensor(adv) * weights.adv
        + T.as_tensor(feat) * weights.feat
        + T.as_tensor(commit) * weights.commit
    )
    return total


def si_snr(ref, est, eps: float = EPS) -> float:
    """Scale-invariant signal-to-noise ratio in dB.

    Both signals are mean-removed, the estimate is projected onto the
    reference, and the energy ratio of projection to residual is reported in
    decibels.  The reference must not be identically zero.
    """
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    if ref.shape != est.shape:
        raise ValueError("si_snr requires equal-length signals")
    if not np.any(ref):
        raise ValueError("si_snr reference must not be all zero")
    ref = ref - ref.mean()
    est = est - est.mean()
    scale = np.dot(est, ref) / (np.dot(ref, ref) + eps)
    target = scale * ref
    residual = est - target
    power_target = np.dot(target, target)
    power_residual = np.dot(residual, residual)
    return float(10.0 * np.log10((power_target + eps) / (power_residual + eps)))
