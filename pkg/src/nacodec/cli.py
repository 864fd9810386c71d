"""Command-line front end.

Subcommands::

    nacodec encode <wav> -o <file> --bandwidth <kbps> [--entropy] [--model M]
    nacodec decode <file> -o <wav> [--model M]
    nacodec train-toy [--steps N --seed S --no-balancer --quantizer rvq|diffq|gs]
    nacodec eval <ref.wav> <est.wav>
    nacodec inspect <file>
    nacodec latency --streamable

Without ``--model``, encode/decode build the deterministic default model
from the seed (``--seed`` or the ``NACODEC_SEED`` environment variable), so
separate invocations agree as long as they use the same seed.  Errors from
malformed inputs print one message to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import synth
from .bitstream import BITS_PER_INDEX, decode_file, encode_file, parse_frame
from .codec import ArchConfig, build_codec
from .lm import IndexLanguageModel, LmConfig
from .losses import si_snr
from .quantizers import ResidualVQ, n_q_for_bandwidth
from .tensor import Tensor, no_grad
from .training import (
    QUANTIZER_KINDS,
    TOY_RVQ,
    LossWeights,
    Trainer,
    build_toy_codec,
    eval_si_snr,
    load_model_checkpoint,
    resolve_seed,
    rng_stream,
    toy_train_config,
    save_model_checkpoint,
)
from .wavio import read_wav


def _default_codec(seed: int, sample_rate: int):
    return build_codec(ArchConfig(sample_rate=sample_rate), seed=seed)


def _default_lm(seed: int, frame_rate: float) -> IndexLanguageModel:
    return IndexLanguageModel(LmConfig(), frame_rate=frame_rate,
                              rng=rng_stream(seed, "lm"))


def _load_model(args, sample_rate: int, need_lm: bool):
    """(codec, lm or None) from ``--model`` or the deterministic default."""
    if args.model is not None:
        codec, lm, _ = load_model_checkpoint(args.model)
        if need_lm and lm is None:
            lm = _default_lm(resolve_seed(args.seed), codec.cfg.frame_rate)
        return codec, lm
    seed = resolve_seed(args.seed)
    codec = _default_codec(seed, sample_rate)
    lm = _default_lm(seed, codec.cfg.frame_rate) if need_lm else None
    return codec, lm


# -- subcommands --------------------------------------------------------------


def _cmd_encode(args) -> int:
    probe_rate = read_wav(args.wav)[1]
    codec, lm = _load_model(args, probe_rate, need_lm=args.entropy)
    if not isinstance(codec.quantizer, ResidualVQ):
        raise ValueError(
            "file encoding requires a model with the residual vector "
            "quantizer (10-bit codebook indices)"
        )
    n_q = n_q_for_bandwidth(args.bandwidth, codec.cfg.frame_rate,
                            max_n_q=codec.quantizer.cfg.max_n_q)
    header = encode_file(args.wav, args.output, codec, n_q,
                         entropy=args.entropy, lm=lm)
    with open(args.output, "rb") as handle:
        n_bytes = len(handle.read())
    duration = header.n_samples / header.sample_rate
    kbps = n_bytes * 8 / duration / 1000.0 if duration else 0.0
    print(f"wrote {args.output}: {n_bytes} bytes, n_q={header.n_q}, "
          f"{duration:.2f} s, {kbps:.2f} kbps on disk")
    return 0


def _cmd_decode(args) -> int:
    with open(args.file, "rb") as handle:
        header, _ = parse_frame(handle.read())
    codec, lm = _load_model(args, header.sample_rate,
                            need_lm=header.entropy_coded)
    audio, rate = decode_file(args.file, codec, lm=lm, out_path=args.output)
    print(f"wrote {args.output}: {audio.shape[-1] / rate:.2f} s at {rate} Hz")
    return 0


def _cmd_train_toy(args) -> int:
    seed = resolve_seed(args.seed)
    overrides = {}
    if args.adv_weight is not None:
        overrides["weights"] = LossWeights(time=2.0, freq=1.0,
                                           adv=args.adv_weight, feat=0.5,
                                           commit=0.25)
    cfg = toy_train_config(steps=args.steps, seed=seed,
                           use_balancer=not args.no_balancer,
                           sample_rate=args.sample_rate, **overrides)
    codec = build_toy_codec(seed=seed, sample_rate=args.sample_rate,
                            quantizer=args.quantizer, rvq_cfg=TOY_RVQ)
    trainer = Trainer(codec, cfg)

    def on_step(metrics):
        step = metrics["step"]
        if args.log_every and (step % args.log_every == 0 or step == 1):
            loss = metrics.get("loss_freq")
            print(f"step {step}/{cfg.steps} loss_freq {loss:.5g}", flush=True)

    trainer.train(on_step=on_step)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as handle:
            handle.write("\n".join(trainer.metric_lines) + "\n")
        print(f"wrote metric trace {args.metrics}")
    if args.quantizer == "rvq":
        score = eval_si_snr(codec, n_q=8, rng=rng_stream(seed, "eval"))
        print(f"eval si_snr_db {score:.2f}")
    if args.out:
        save_model_checkpoint(args.out, codec, discs=trainer.discs,
                              extra={"steps": cfg.steps, "seed": seed})
        print(f"wrote checkpoint {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ref, ref_rate = read_wav(args.ref)
    est, est_rate = read_wav(args.est)
    if ref_rate != est_rate:
        raise ValueError(f"sample rates differ: {ref_rate} vs {est_rate}")
    if ref.shape != est.shape:
        raise ValueError(f"shapes differ: {ref.shape} vs {est.shape}")
    print(f"si_snr_db {si_snr(ref, est):.2f}")
    return 0


def _cmd_inspect(args) -> int:
    with open(args.file, "rb") as handle:
        header, payload = parse_frame(handle.read())
    duration = header.n_samples / header.sample_rate
    if header.entropy_coded:
        bits = len(payload) * 8
    else:
        bits = header.n_q * header.n_latent_steps * BITS_PER_INDEX
    kbps = bits / duration / 1000.0 if duration else 0.0
    print(f"mode {'streamable' if header.streamable else 'chunked'}")
    print(f"entropy_coded {'yes' if header.entropy_coded else 'no'}")
    print(f"channels {2 if header.stereo else 1}")
    print(f"sample_rate {header.sample_rate}")
    print(f"n_q {header.n_q}")
    print(f"frames {header.n_latent_steps}")
    print(f"samples {header.n_samples}")
    print(f"duration_s {duration:.3f}")
    print(f"chunk_scales {len(header.scales)}")
    print(f"payload_bytes {len(payload)}")
    print(f"bitrate_kbps {kbps:.1f}")
    return 0


def _cmd_latency(args) -> int:
    if not args.streamable:
        raise ValueError(
            "only the streamable mode has a fixed algorithmic latency; "
            "pass --streamable"
        )
    seed = resolve_seed(args.seed)
    codec = _default_codec(seed, args.sample_rate)
    hop = codec.cfg.hop
    ms = 1000.0 * hop / args.sample_rate

    # Feed exactly one hop of audio through the streaming pipeline and
    # report when the first decoded samples appear.
    tone = synth.tone_batch(np.random.default_rng(seed), 1,
                            args.sample_rate, duration_s=1.0)
    dtype = codec.encoder.conv_in.conv.weight().data.dtype
    first_chunk = Tensor(tone[:, None, :hop].astype(dtype))
    with no_grad():
        enc_state = codec.encoder.init_stream(1, dtype=dtype)
        dec_state = codec.decoder.init_stream(1, dtype=dtype)
        z = codec.encoder.stream_step(first_chunk, enc_state)
        out = codec.decoder.stream_step(z, dec_state)
    first_after = hop if out.shape[-1] >= hop else None

    audio = tone
    start = time.perf_counter()
    indices, scales = codec.encode_indices(audio.astype(dtype), n_q=8)
    decoded = codec.decode_indices(indices, scales, audio.shape[-1])
    elapsed = time.perf_counter() - start
    rtf = (audio.shape[-1] / args.sample_rate) / elapsed

    print(f"initial_latency_samples {hop}")
    print(f"initial_latency_ms {ms:.2f}")
    print(f"first_output_after_samples {first_after}")
    print(f"rtf {rtf:.2f}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nacodec",
        description="Neural audio codec: compress, decompress, inspect, "
                    "evaluate, and toy-train.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="compress a WAV file")
    enc.add_argument("wav")
    enc.add_argument("-o", "--output", required=True)
    enc.add_argument("--bandwidth", type=float, default=6.0,
                     help="target bitrate in kbps (default 6)")
    enc.add_argument("--entropy", action="store_true",
                     help="entropy-code indices with the index model")
    enc.add_argument("--model", default=None, help="model checkpoint path")
    enc.add_argument("--seed", type=int, default=None)
    enc.set_defaults(func=_cmd_encode)

    dec = sub.add_parser("decode", help="decompress a codec file to WAV")
    dec.add_argument("file")
    dec.add_argument("-o", "--output", required=True)
    dec.add_argument("--model", default=None)
    dec.add_argument("--seed", type=int, default=None)
    dec.set_defaults(func=_cmd_decode)

    toy = sub.add_parser("train-toy", help="desk-scale training run")
    toy.add_argument("--steps", type=int, default=2000)
    toy.add_argument("--seed", type=int, default=None)
    toy.add_argument("--no-balancer", action="store_true",
                     help="plain weighted-sum objective instead of "
                          "gradient balancing")
    toy.add_argument("--quantizer", choices=QUANTIZER_KINDS, default="rvq")
    toy.add_argument("--sample-rate", type=int, default=24000)
    toy.add_argument("--adv-weight", type=float, default=None,
                     help="override the adversarial loss weight")
    toy.add_argument("--metrics", default=None,
                     help="write 'step name value' lines to this file")
    toy.add_argument("--out", default=None, help="checkpoint output path")
    toy.add_argument("--log-every", type=int, default=50)
    toy.set_defaults(func=_cmd_train_toy)

    ev = sub.add_parser("eval", help="SI-SNR between two WAV files")
    ev.add_argument("ref")
    ev.add_argument("est")
    ev.set_defaults(func=_cmd_eval)

    ins = sub.add_parser("inspect", help="print header and bitrate of a file")
    ins.add_argument("file")
    ins.set_defaults(func=_cmd_inspect)

    lat = sub.add_parser("latency", help="report algorithmic latency and RTF")
    lat.add_argument("--streamable", action="store_true")
    lat.add_argument("--sample-rate", type=int, default=24000)
    lat.add_argument("--seed", type=int, default=None)
    lat.set_defaults(func=_cmd_latency)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
