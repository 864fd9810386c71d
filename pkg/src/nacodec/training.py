"""Toy-scale adversarial training loop and checkpoint plumbing.

One step synthesizes a batch, runs encoder -> quantizer -> decoder, scores
real and generated audio with the multi-scale spectrogram discriminator for
one sampled bandwidth, and applies:

* a generator update where the four balanced terms (waveform L1, spectral,
  adversarial hinge, feature matching) share the output-gradient budget via
  :class:`~nacodec.balancer.GradientBalancer` while the quantizer objective
  (commitment / bit-depth / coding cost) is added outside the balancer, and
* with a configured probability, a discriminator update for the sampled
  bandwidth only -- other bandwidths' discriminators are never touched.

Randomness is split into independent named streams (data, bandwidth,
disc-update coin, model init) derived from one seed, so runs are
reproducible and toggling one feature does not shift the others.  The
default seed can be overridden with the ``NACODEC_SEED`` environment
variable.  Metrics are exposed as dictionaries and as line-delimited
``"step name value"`` records.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, fields as dataclass_fields, replace

import numpy as np

from . import synth
from .balancer import GradientBalancer, per_loss_output_grads
from .checkpoint import load_checkpoint, namespaced, save_checkpoint, split_namespace
from .codec import ArchConfig, NeuralCodec, build_codec
from .discriminator import MsStftConfig, MsStftDiscriminator
from .layers import Adam
from .lm import IndexLanguageModel, LmConfig
from .losses import (
    LossWeights,
    disc_loss,
    feat_match_loss,
    freq_loss,
    gen_adv_loss,
    si_snr,
    time_loss,
    total_generator_loss,
)
from .quantizers import (
    GumbelQuantizer,
    NoiseBitsQuantizer,
    ResidualVQ,
    RvqConfig,
    bitrate_bps,
)
from .tensor import Tensor

#: Environment variable that overrides the default seed when set.
SEED_ENV_VAR = "NACODEC_SEED"

#: Codebook counts offered to bandwidth sampling (multiples of four).
BANDWIDTH_N_Q = (4, 8, 16, 32)
#: The extra low-bandwidth setting (1.5 kbps at 24 kHz), offered when the
#: low-bandwidth flag is on.
LOW_BANDWIDTH_N_Q = 2

QUANTIZER_KINDS = ("rvq", "diffq", "gs")
_GS_CODEBOOKS = 8
_GS_ENTRIES = 1024

#: Codebook sizing for the toy training recipe.  Entries a batch never
#: assigns are re-seeded from that batch's residuals, so books must be small
#: enough that a couple of 0.25 s examples (~19 latent frames each) keep most
#: entries live; the product sizing (1024 entries, 32 books) churns endlessly
#: at that scale.
TOY_RVQ = RvqConfig(n_entries=16, max_n_q=8)

#: Loss weighting for the toy recipe.  Phase alignment -- what reconstruction
#: quality is scored on -- reaches the generator only through the waveform
#: term, so it carries half the balanced gradient budget; the adversarial
#: pair still participates but no longer dominates, and the commitment pull
#: is softened while the codebooks settle.
TOY_WEIGHTS = LossWeights(time=2.0, freq=1.0, adv=0.5, feat=0.5, commit=0.25)


def resolve_seed(explicit=None) -> int:
    """Explicit seed if given, else ``NACODEC_SEED`` from the environment,
    else 0."""
    if explicit is not None:
        return int(explicit)
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(
            f"{SEED_ENV_VAR} must be an integer, got {raw!r}"
        ) from None


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a shared seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def sample_bandwidth(rng: np.random.Generator,
                     include_low: bool = False) -> int:
    """Uniform codebook count from {4, 8, 16, 32} (plus 2 when enabled)."""
    choices = ((LOW_BANDWIDTH_N_Q,) + BANDWIDTH_N_Q if include_low
               else BANDWIDTH_N_Q)
    return int(rng.choice(choices))


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for the toy trainer.

    ``disc_update_prob=None`` resolves by sample rate: 2/3 below 48 kHz,
    1/2 at and above.  ``weights=None`` resolves via
    :meth:`LossWeights.for_sample_rate`.
    """

    steps: int = 2000
    batch_size: int = 1
    segment_seconds: float = 0.25
    sample_rate: int = 24000
    learning_rate: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.9
    disc_update_prob: float = None
    use_balancer: bool = True
    weights: LossWeights = None
    n_q_choices: tuple = (8,)
    data: str = "tones"
    disc_channels: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.disc_update_prob is not None and not (
            0.0 <= self.disc_update_prob <= 1.0
        ):
            raise ValueError("disc_update_prob must lie in [0, 1]")
        if not self.n_q_choices:
            raise ValueError("n_q_choices must be non-empty")
        if self.data not in ("notes", "tones", "mix"):
            raise ValueError(f"unknown data kind {self.data!r}")

    @property
    def disc_prob(self) -> float:
        if self.disc_update_prob is not None:
            return self.disc_update_prob
        return 0.5 if self.sample_rate >= 48000 else 2.0 / 3.0

    @property
    def loss_weights(self) -> LossWeights:
        if self.weights is not None:
            return self.weights
        return LossWeights.for_sample_rate(self.sample_rate)


def toy_train_config(steps: int = 2000, seed: int = 0,
                     **overrides) -> TrainConfig:
    """Training configuration that converges at desk scale.

    The :class:`TrainConfig` class defaults mirror the full-scale recipe
    (lr 3e-4, β=(0.5, 0.9), paper-strength adversarial weighting); at toy
    size those leave reconstruction quality flat within a few thousand
    steps.  This recipe instead trains on the pitched-note family with a
    higher learning rate and heavier momentum, the :data:`TOY_WEIGHTS`
    budget, an 8-channel discriminator, and batches of two 0.25 s segments
    at a fixed 8-codebook bandwidth.  Keyword overrides replace individual
    fields.
    """
    base = dict(steps=steps, batch_size=2, segment_seconds=0.25,
                learning_rate=1e-3, beta1=0.9, beta2=0.999,
                n_q_choices=(8,), data="notes", disc_channels=8,
                weights=TOY_WEIGHTS, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


def quantizer_kind(quantizer) -> str:
    if isinstance(quantizer, ResidualVQ):
        return "rvq"
    if isinstance(quantizer, NoiseBitsQuantizer):
        return "diffq"
    if isinstance(quantizer, GumbelQuantizer):
        return "gs"
    raise TypeError(f"unknown quantizer type {type(quantizer).__name__}")


def build_quantizer(kind: str, arch: ArchConfig, seed: int,
                    rvq_cfg: RvqConfig = None):
    """Quantizer instance for a codec of the given architecture."""
    rng = rng_stream(seed, "quantizer")
    if kind == "rvq":
        if rvq_cfg is None:
            rvq_cfg = RvqConfig.for_sample_rate(arch.sample_rate)
        return ResidualVQ(rvq_cfg, arch.latent_dim, rng=rng)
    if kind == "diffq":
        return NoiseBitsQuantizer(arch.latent_dim, rng=rng)
    if kind == "gs":
        return GumbelQuantizer(_GS_CODEBOOKS, _GS_ENTRIES, arch.latent_dim,
                               rng=rng)
    raise ValueError(f"unknown quantizer kind {kind!r}; "
                     f"expected one of {QUANTIZER_KINDS}")


def build_toy_codec(seed: int = 0, sample_rate: int = 24000,
                    quantizer: str = "rvq", base_channels: int = 16,
                    mode: str = "streamable",
                    rvq_cfg: RvqConfig = None) -> NeuralCodec:
    """Desk-scale codec: full topology with reduced channel width.

    ``rvq_cfg`` overrides the product codebook sizing for the RVQ variant;
    the toy training recipe uses small codebooks (see :data:`TOY_RVQ`)
    because entries a batch never assigns are re-seeded from that batch, so
    books much larger than the per-batch latent count churn endlessly.
    """
    arch = ArchConfig(sample_rate=sample_rate, base_channels=base_channels,
                      mode=mode)
    quant = build_quantizer(quantizer, arch, seed, rvq_cfg=rvq_cfg)
    return build_codec(arch, seed=seed, quantizer=quant)


def format_metric_lines(step: int, metrics: dict) -> list:
    """``"step name value"`` records for every numeric metric."""
    lines = []
    for name, value in metrics.items():
        if name == "step":
            continue
        if isinstance(value, (bool, np.bool_)):
            lines.append(f"{step} {name} {int(value)}")
        elif isinstance(value, (int, np.integer)):
            lines.append(f"{step} {name} {int(value)}")
        elif isinstance(value, (float, np.floating)):
            lines.append(f"{step} {name} {float(value):.10g}")
    return lines


class Trainer:
    """Adversarial toy trainer over synthetic audio.

    ``discs`` maps each offered codebook count to its own discriminator; a
    training step evaluates and updates only the discriminator of the
    bandwidth sampled for that batch.
    """

    def __init__(self, codec: NeuralCodec, cfg: TrainConfig, discs=None):
        self.codec = codec
        self.cfg = cfg
        self.weights = cfg.loss_weights
        self.kind = quantizer_kind(codec.quantizer)
        if discs is None:
            # Same five analysis windows as the library default, with the
            # channel width desk-scaled alongside the codec's.
            disc_cfg = replace(MsStftConfig.for_sample_rate(cfg.sample_rate),
                               channels=cfg.disc_channels)
            discs = {}
            for n_q in cfg.n_q_choices:
                disc = MsStftDiscriminator(
                    disc_cfg, rng=rng_stream(cfg.seed, f"disc{n_q}")
                )
                # Zero final projections: training starts from logits of
                # exactly 0 (hinge loss 2), a stable adversarial origin.
                disc.zero_logit_layers()
                discs[n_q] = disc
        if set(discs) != set(cfg.n_q_choices):
            raise ValueError("discriminators must cover n_q_choices exactly")
        self.discs = dict(discs)
        betas = (cfg.beta1, cfg.beta2)
        self.gen_opt = Adam(self.codec.parameters(), lr=cfg.learning_rate,
                            betas=betas)
        self.disc_opts = {
            n_q: Adam(d.parameters(), lr=cfg.learning_rate, betas=betas)
            for n_q, d in self.discs.items()
        }
        self.balancer = (GradientBalancer(self.weights.balanced())
                         if cfg.use_balancer else None)
        self.data_rng = rng_stream(cfg.seed, "data")
        self.bandwidth_rng = rng_stream(cfg.seed, "bandwidth")
        self.coin_rng = rng_stream(cfg.seed, "coin")
        self.mix_cfg = synth.SynthMixConfig()
        self.step_count = 0
        self.metric_lines = []

    # -- data ----------------------------------------------------------------

    def make_batch(self) -> np.ndarray:
        """[batch, channels, T] training audio from the configured source."""
        cfg = self.cfg
        if cfg.data == "notes":
            batch = synth.note_batch(self.data_rng, cfg.batch_size,
                                     cfg.sample_rate, cfg.segment_seconds)
        elif cfg.data == "tones":
            batch = synth.tone_batch(self.data_rng, cfg.batch_size,
                                     cfg.sample_rate, cfg.segment_seconds)
        else:
            batch = synth.synth_batch(self.mix_cfg, self.data_rng,
                                      cfg.batch_size, cfg.sample_rate)
        return batch[:, None, :]

    # -- one optimization step ----------------------------------------------

    def _quantize(self, z: Tensor, n_q: int):
        """(decoder input, unbalanced quantizer objective) for any kind."""
        quantizer = self.codec.quantizer
        if self.kind == "rvq":
            z_q, commit, _ = quantizer.train_forward(z, n_q)
            return z_q, commit
        if self.kind == "diffq":
            return quantizer.train_forward(z), quantizer.bits().mean()
        z_q, cost = quantizer.train_forward(z)
        return z_q, cost

    def _check_finite(self, values: dict, losses: dict, output: Tensor):
        bad = {k: v for k, v in values.items() if not np.isfinite(v)}
        if not bad:
            return
        report = [f"step {self.step_count}: non-finite loss "
                  + ", ".join(f"{k}={v}" for k, v in bad.items())]
        for name, loss in losses.items():
            norm = "unreachable"
            try:
                grads = per_loss_output_grads({name: loss}, output)
                norm = f"{np.linalg.norm(grads[name].ravel()):.6g}"
            except (ValueError, FloatingPointError):
                pass
            report.append(
                f"  {name}: value={values.get(name)} output_grad_norm={norm}"
            )
        raise RuntimeError("\n".join(report))

    def train_step(self, batch: np.ndarray = None) -> dict:
        """One generator update (+ maybe one discriminator update).

        Returns a metrics dictionary; the same values are appended to
        ``metric_lines`` as ``"step name value"`` records.
        """
        cfg = self.cfg
        self.step_count += 1
        n_q = int(self.bandwidth_rng.choice(cfg.n_q_choices))
        coin = float(self.coin_rng.random())
        if batch is None:
            batch = self.make_batch()
        dtype = self.codec.encoder.conv_in.conv.weight().data.dtype
        pad = (-batch.shape[-1]) % self.codec.cfg.hop
        if pad:
            batch = np.pad(batch, ((0, 0), (0, 0), (0, pad)))
        x = Tensor(batch.astype(dtype))

        z = self.codec.encode_latent(x)
        z_q, quant = self._quantize(z, n_q)
        x_hat = self.codec.decode_latent(z_q)

        n_batch, n_channels, n_samples = x.shape
        flat = (n_batch * n_channels, n_samples)
        l_time = time_loss(x_hat, x)
        l_freq = freq_loss(x_hat.reshape(*flat), x.reshape(*flat),
                           cfg.sample_rate)
        disc = self.discs[n_q]
        real_logits, real_feats = disc.forward(x)
        fake_logits, fake_feats = disc.forward(x_hat)
        l_adv = gen_adv_loss(fake_logits)
        l_feat = feat_match_loss(real_feats, fake_feats)

        balanced = {"time": l_time, "freq": l_freq, "adv": l_adv,
                    "feat": l_feat}
        values = {name: float(t.data) for name, t in balanced.items()}
        values["quant"] = float(quant.data)
        self._check_finite(values, balanced, x_hat)

        metrics = {"step": self.step_count, "n_q": n_q,
                   "kbps": bitrate_bps(n_q, self.codec.cfg.frame_rate) / 1000.0}
        self.gen_opt.zero_grad()
        if self.balancer is not None:
            quant_scaled = quant * self.weights.commit
            info = self.balancer.backward(balanced, x_hat,
                                          unbalanced={"quant": quant_scaled})
            info["loss_quant"] = values["quant"]
            metrics.update(info)
        else:
            total = total_generator_loss(l_time, l_freq, l_adv, l_feat, quant,
                                         self.weights)
            metrics["loss_total"] = float(total.data)
            for name, value in values.items():
                metrics[f"loss_{name}"] = value
            total.backward()
        self.gen_opt.step()

        disc_updated = coin < cfg.disc_prob
        metrics["disc_updated"] = int(disc_updated)
        if disc_updated:
            opt = self.disc_opts[n_q]
            opt.zero_grad()
            # Reuses the generator-side logit graphs: the backward pass also
            # deposits gradients in codec parameters, but those are dead
            # values -- the generator already stepped this round and zeroes
            # its gradients before the next backward.
            d_loss = disc_loss(real_logits, fake_logits)
            d_value = float(d_loss.data)
            if not np.isfinite(d_value):
                raise RuntimeError(
                    f"step {self.step_count}: non-finite discriminator "
                    f"loss {d_value}"
                )
            d_loss.backward()
            opt.step()
            metrics["loss_disc"] = d_value

        self.metric_lines.extend(format_metric_lines(self.step_count, metrics))
        return metrics

    def train(self, steps: int = None, on_step=None) -> list:
        """Run ``steps`` training steps (config default); returns metrics."""
        steps = self.cfg.steps if steps is None else steps
        history = []
        for _ in range(steps):
            metrics = self.train_step()
            history.append(metrics)
            if on_step is not None:
                on_step(metrics)
        return history


def eval_si_snr(codec: NeuralCodec, n_q: int, rng: np.random.Generator,
                n_examples: int = 8, duration_s: float = 0.5,
                data: str = "notes") -> float:
    """Mean SI-SNR (dB) over fresh random examples, full encode/decode path.

    ``data`` selects the same families as :class:`TrainConfig`; fresh draws
    from ``rng`` act as held-out material for a codec trained on that
    family.
    """
    sample_rate = codec.cfg.sample_rate
    if data == "notes":
        batch = synth.note_batch(rng, n_examples, sample_rate, duration_s)
    elif data == "tones":
        batch = synth.tone_batch(rng, n_examples, sample_rate, duration_s)
    else:
        batch = synth.synth_batch(synth.SynthMixConfig(), rng, n_examples,
                                  sample_rate)
    scores = []
    for example in batch:
        audio = example[None, :]
        indices, scales = codec.encode_indices(audio, n_q)
        decoded = codec.decode_indices(indices, scales, audio.shape[-1])
        scores.append(si_snr(audio, decoded.astype(np.float64)))
    return float(np.mean(scores))


# -- checkpoint plumbing ------------------------------------------------------


def _arch_meta(arch: ArchConfig) -> dict:
    meta = {f.name: getattr(arch, f.name) for f in dataclass_fields(ArchConfig)}
    meta["strides"] = list(meta["strides"])
    return meta


def _quantizer_meta(quantizer) -> dict:
    kind = quantizer_kind(quantizer)
    if kind == "rvq":
        cfg = quantizer.cfg
        return {"kind": kind, "n_entries": cfg.n_entries,
                "max_n_q": cfg.max_n_q, "decay": cfg.decay,
                "count_floor": cfg.count_floor,
                "kmeans_iters": cfg.kmeans_iters}
    if kind == "diffq":
        return {"kind": kind}
    return {"kind": kind, "n_codebooks": quantizer.n_codebooks,
            "n_entries": quantizer.n_entries}


def _quantizer_from_meta(meta: dict, arch: ArchConfig):
    kind = meta["kind"]
    if kind == "rvq":
        cfg = RvqConfig(n_entries=meta["n_entries"], max_n_q=meta["max_n_q"],
                        decay=meta["decay"], count_floor=meta["count_floor"],
                        kmeans_iters=meta["kmeans_iters"])
        return ResidualVQ(cfg, arch.latent_dim, rng=np.random.default_rng(0))
    if kind == "diffq":
        return NoiseBitsQuantizer(arch.latent_dim,
                                  rng=np.random.default_rng(0))
    if kind == "gs":
        return GumbelQuantizer(meta["n_codebooks"], meta["n_entries"],
                               arch.latent_dim, rng=np.random.default_rng(0))
    raise ValueError(f"unknown quantizer kind {kind!r}")


def save_model_checkpoint(path, codec: NeuralCodec, discs=None,
                          lm: IndexLanguageModel = None, extra: dict = None):
    """Serialize codec (and optionally discriminators / index model)."""
    meta = {
        "kind": "nacodec-model",
        "arch": _arch_meta(codec.cfg),
        "quantizer": _quantizer_meta(codec.quantizer),
    }
    tensors = dict(namespaced("codec", codec.state_dict()))
    if discs:
        meta["disc_bandwidths"] = sorted(int(k) for k in discs)
        for n_q, disc in discs.items():
            tensors.update(namespaced(f"disc{int(n_q)}", disc.state_dict()))
    if lm is not None:
        lm_meta = {f.name: getattr(lm.cfg, f.name)
                   for f in dataclass_fields(LmConfig)}
        meta["lm"] = {"config": lm_meta, "frame_rate": lm.frame_rate}
        tensors.update(namespaced("lm", lm.state_dict()))
    if extra:
        meta["extra"] = extra
    save_checkpoint(path, tensors, meta)


def load_model_checkpoint(path):
    """Returns ``(codec, lm or None, metadata)`` from a saved model file."""
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "nacodec-model":
        raise ValueError(f"{path} is not a model checkpoint")
    arch_meta = dict(meta["arch"])
    arch_meta["strides"] = tuple(arch_meta["strides"])
    arch = ArchConfig(**arch_meta)
    quantizer = _quantizer_from_meta(meta["quantizer"], arch)
    codec = NeuralCodec(arch, quantizer=quantizer,
                        rng=np.random.default_rng(0))
    codec.load_state_dict(split_namespace(tensors, "codec"))
    lm = None
    if "lm" in meta:
        lm_cfg = LmConfig(**meta["lm"]["config"])
        lm = IndexLanguageModel(lm_cfg, frame_rate=meta["lm"]["frame_rate"],
                                rng=np.random.default_rng(0))
        lm.load_state_dict(split_namespace(tensors, "lm"))
    return codec, lm, meta
