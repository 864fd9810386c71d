"""Toy training walkthrough: a short balanced run that audibly improves.

This is a scaled-down version of the 2000-step recipe behind
``nacodec train-toy``: a 16-channel codec with small codebooks learns the
pitched-note family (eight fixed pitches, random amplitude and decay) under
the full objective — waveform L1, multi-scale mel loss, adversarial hinge
and feature-matching terms shared out by the gradient balancer, plus the
commitment term outside it.  A few hundred steps are enough to watch the
spectral loss fall and held-out SI-SNR climb out of the noise; the full
run reaches well past the +5 dB mark.

Run time: a few minutes on one CPU core (400 steps).
"""

import numpy as np

from nacodec.training import (
    TOY_RVQ,
    Trainer,
    build_toy_codec,
    eval_si_snr,
    rng_stream,
    toy_train_config,
)

STEPS = 400
EVERY = 100

cfg = toy_train_config(steps=STEPS, seed=0)
codec = build_toy_codec(seed=0, rvq_cfg=TOY_RVQ)
trainer = Trainer(codec, cfg)

print(f"codec: base_channels=16, {TOY_RVQ.n_entries}-entry codebooks, "
      f"n_q={cfg.n_q_choices[0]}")
print(f"recipe: lr {cfg.learning_rate}, batch {cfg.batch_size} x "
      f"{cfg.segment_seconds}s, weights t={cfg.weights.time} "
      f"f={cfg.weights.freq} adv={cfg.weights.adv} feat={cfg.weights.feat}")
print()

window = []
for step in range(1, STEPS + 1):
    metrics = trainer.train_step()
    window.append(metrics["loss_freq"])
    if step % EVERY == 0:
        si = eval_si_snr(codec, n_q=8, rng=rng_stream(0, "demo-heldout"),
                         n_examples=4, duration_s=0.25)
        print(f"step {step:4d}  spectral loss (mean of last {EVERY}) "
              f"{np.mean(window):.4f}  held-out SI-SNR {si:+.2f} dB")
        window = []

print()
print("The SI-SNR trend continues with more steps; the acceptance gate's")
print("2000-step run requires > +5 dB on held-out notes and a >= 60% drop")
print("in the spectral loss, and the same recipe is what `nacodec")
print("train-toy` uses by default.")
