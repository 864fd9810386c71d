"""Multi-scale spectral discriminator tests: scale/channel fan-out, feature
map shapes, frequency downsampling arithmetic, zero-logit composition with
the hinge loss, determinism, and gradient flow into the input audio."""

import numpy as np
import pytest

from nacodec import tensor as T
from nacodec.discriminator import (
    MsStftConfig,
    MsStftDiscriminator,
    _same_padding,
)
from nacodec.dsp import n_frames
from nacodec.losses import disc_loss, gen_adv_loss
from nacodec.tensor import Tensor


def small_disc(seed=0, windows=(64, 32)):
    cfg = MsStftConfig(window_lengths=windows, channels=4)
    return MsStftDiscriminator(cfg, rng=np.random.default_rng(seed))


class TestConfig:
    def test_default_windows(self):
        assert MsStftConfig().window_lengths == (2048, 1024, 512, 256, 128)

    def test_windows_double_at_high_rate(self):
        cfg = MsStftConfig.for_sample_rate(48000)
        assert cfg.window_lengths == (4096, 2048, 1024, 512, 256)
        assert MsStftConfig.for_sample_rate(24000).window_lengths == (
            2048, 1024, 512, 256, 128,
        )


class TestSamePadding:
    def test_output_is_ceil_of_ratio(self):
        for n in (7, 8, 1025):
            for k, s, d in ((3, 2, 1), (8, 1, 4), (3, 1, 1)):
                before, after = _same_padding(n, k, s, d)
                eff = d * (k - 1) + 1
                out = (n + before + after - eff) // s + 1
                assert out == -(-n // s)


class TestFanOut:
    def test_five_scales_five_logit_maps(self):
        disc = MsStftDiscriminator(rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).standard_normal(2400) * 0.1)
        logits, features = disc.forward(x)
        assert len(logits) == 5
        assert len(features) == 5
        assert all(len(f) == 5 for f in features)

    def test_stereo_scored_per_channel(self):
        disc = small_disc()
        x = Tensor(np.random.default_rng(2).standard_normal((2, 100)) * 0.1)
        logits, features = disc.forward(x)
        assert len(logits) == 2 * 2  # scales x channels
        assert len(features) == 4

    def test_too_short_audio_rejected(self):
        disc = small_disc()
        with pytest.raises(ValueError, match="shorter"):
            disc.forward(Tensor(np.zeros(63)))


class TestShapes:
    def test_frequency_halves_per_strided_layer(self):
        # Window 2048 -> 1025 frequency bins; each of the three strided
        # layers takes the ceiling of half.
        disc = MsStftDiscriminator(rng=np.random.default_rng(3))
        x = Tensor(np.random.default_rng(4).standard_normal(2400) * 0.1)
        _, features = disc.forward(x)
        freqs = [f.shape[2] for f in features[0]]
        assert freqs == [1025, 513, 257, 129, 129]

    def test_time_axis_preserved(self):
        disc = small_disc()
        n = 96
        x = Tensor(np.random.default_rng(5).standard_normal(n) * 0.1)
        logits, features = disc.forward(x)
        t64 = n_frames(n, 64, 16)
        t32 = n_frames(n, 32, 8)
        assert [f.shape[3] for f in features[0]] == [t64] * 5
        assert [f.shape[3] for f in features[1]] == [t32] * 5
        assert logits[0].shape == (1, 1, features[0][-1].shape[2], t64)

    def test_feature_channels(self):
        disc = small_disc()
        x = Tensor(np.random.default_rng(6).standard_normal(80) * 0.1)
        _, features = disc.forward(x)
        assert all(f.shape[1] == 4 for f in features[0])

    def test_scale_networks_identically_shaped(self):
        disc = small_disc()
        shapes = []
        for scorer in disc.scorers:
            shapes.append(
                tuple((k, v.data.shape) for k, v in sorted(scorer.state_dict().items()))
            )
        assert shapes[0] == shapes[1]


class TestZeroLogits:
    def test_zeroed_projection_gives_zero_logits_and_hinge_two(self):
        disc = small_disc(seed=7)
        disc.zero_logit_layers()
        rng = np.random.default_rng(8)
        real = Tensor(rng.standard_normal(100) * 0.2)
        fake = Tensor(rng.standard_normal(100) * 0.2)
        logits_real, _ = disc.forward(real)
        logits_fake, _ = disc.forward(fake)
        for m in logits_real + logits_fake:
            np.testing.assert_array_equal(m.data, 0.0)
        np.testing.assert_allclose(
            float(disc_loss(logits_real, logits_fake).data), 2.0
        )


class TestDeterminismAndGradients:
    def test_same_input_same_logits(self):
        disc = small_disc(seed=9)
        x = np.random.default_rng(10).standard_normal(100) * 0.1
        a, _ = disc.forward(Tensor(x))
        b, _ = disc.forward(Tensor(x.copy()))
        for ma, mb in zip(a, b):
            np.testing.assert_array_equal(ma.data, mb.data)

    def test_adversarial_gradient_reaches_audio(self):
        disc = small_disc(seed=11)
        x = Tensor(
            np.random.default_rng(12).standard_normal(100) * 0.1,
            requires_grad=True,
        )
        logits, _ = disc.forward(x)
        gen_adv_loss(logits).backward()
        assert x.grad is not None
        assert np.any(x.grad != 0.0)
        assert np.all(np.isfinite(x.grad))

    def test_parameters_receive_gradients(self):
        disc = small_disc(seed=13)
        x = Tensor(np.random.default_rng(14).standard_normal(80) * 0.1)
        real = Tensor(np.random.default_rng(15).standard_normal(80) * 0.1)
        logits_fake, _ = disc.forward(x)
        logits_real, _ = disc.forward(real)
        disc_loss(logits_real, logits_fake).backward()
        got = [p.grad is not None for _, p in disc.named_parameters()]
        # Every feature conv sits upstream of the logits, so all weights
        # should see a gradient.
        assert all(got)
