"""Compressed-audio container: frame header, raw index packing, checksums,
and whole-file encode/decode built on the codec and entropy layers.

File layout (all multi-byte fields little-endian)::

    magic   4 bytes  b"NACD"
    version u8       currently 1
    flags   u8       bit 0 streamable, bit 1 entropy-coded, bit 2 stereo
    sample_rate      u32
    n_q              u8
    n_latent_steps   u32
    n_samples        u32   decoded sample count per channel
    n_scales         u32   0 in streamable mode
    scales           n_scales * f32 (chunk normalization factors)
    payload_len      u32
    payload_crc32    u32
    payload          payload_len bytes

The payload is either raw-packed indices (10 bits each, codebook-major,
most significant bit first) or the entropy-coded stream.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NACD"
VERSION = 1
BITS_PER_INDEX = 10
_FLAG_STREAMABLE = 1
_FLAG_ENTROPY = 2
_FLAG_STEREO = 4
_KNOWN_FLAGS = _FLAG_STREAMABLE | _FLAG_ENTROPY | _FLAG_STEREO
_FIXED = struct.Struct("<4sBBIBII")
_MAX_SCALES = 1 << 20


class BitstreamError(ValueError):
    """Malformed or unusable compressed-audio data."""


class CorruptFrameError(BitstreamError):
    """Structural damage: truncation or checksum mismatch."""


class ConfigMismatchError(BitstreamError):
    """The file's parameters do not match the supplied model."""


@dataclass(frozen=True)
class FrameHeader:
    """Parsed per-file metadata; ``scales`` is empty in streamable mode."""

    streamable: bool
    entropy_coded: bool
    stereo: bool
    sample_rate: int
    n_q: int
    n_latent_steps: int
    n_samples: int
    scales: tuple = field(default_factory=tuple)
    payload_len: int = 0

    def serialize(self) -> bytes:
        flags = (
            (_FLAG_STREAMABLE if self.streamable else 0)
            | (_FLAG_ENTROPY if self.entropy_coded else 0)
            | (_FLAG_STEREO if self.stereo else 0)
        )
        head = _FIXED.pack(
            MAGIC,
            VERSION,
            flags,
            self.sample_rate,
            self.n_q,
            self.n_latent_steps,
            self.n_samples,
        )
        scales = np.asarray(self.scales, dtype="<f4")
        return (
            head
            + struct.pack("<I", scales.shape[0])
            + scales.tobytes()
            + struct.pack("<I", self.payload_len)
        )

    @classmethod
    def parse(cls, data: bytes) -> tuple:
        """Returns (header, offset of the crc32 field)."""
        if len(data) < _FIXED.size + 8:
            raise CorruptFrameError("header truncated")
        magic, version, flags, rate, n_q, n_steps, n_samples = _FIXED.unpack_from(
            data, 0
        )
        if magic != MAGIC:
            raise BitstreamError("bad magic; not a compressed-audio file")
        if version != VERSION:
            raise BitstreamError(f"unsupported container version {version}")
        if flags & ~_KNOWN_FLAGS:
            raise BitstreamError(f"unknown flag bits 0x{flags:02x}")
        if n_q < 1:
            raise BitstreamError("codebook count must be at least 1")
        offset = _FIXED.size
        (n_scales,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if n_scales > _MAX_SCALES:
            raise CorruptFrameError(f"implausible scale count {n_scales}")
        if len(data) < offset + 4 * n_scales + 4:
            raise CorruptFrameError("header truncated in scale table")
        scales = tuple(
            float(s)
            for s in np.frombuffer(data, dtype="<f4", count=n_scales, offset=offset)
        )
        offset += 4 * n_scales
        (payload_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        header = cls(
            streamable=bool(flags & _FLAG_STREAMABLE),
            entropy_coded=bool(flags & _FLAG_ENTROPY),
            stereo=bool(flags & _FLAG_STEREO),
            sample_rate=rate,
            n_q=n_q,
            n_latent_steps=n_steps,
            n_samples=n_samples,
            scales=scales,
            payload_len=payload_len,
        )
        return header, offset


def serialize_frame(header: FrameHeader, payload: bytes) -> bytes:
    header = FrameHeader(
        streamable=header.streamable,
        entropy_coded=header.entropy_coded,
        stereo=header.stereo,
        sample_rate=header.sample_rate,
        n_q=header.n_q,
        n_latent_steps=header.n_latent_steps,
        n_samples=header.n_samples,
        scales=header.scales,
        payload_len=len(payload),
    )
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return header.serialize() + struct.pack("<I", crc) + payload


def parse_frame(data: bytes) -> tuple:
    """Validate a whole frame; returns (header, payload)."""
    header, offset = FrameHeader.parse(data)
    if len(data) < offset + 4:
        raise CorruptFrameError("frame truncated before checksum")
    (crc,) = struct.unpack_from("<I", data, offset)
    offset += 4
    payload = data[offset : offset + header.payload_len]
    if len(payload) != header.payload_len:
        raise CorruptFrameError("frame truncated in payload")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptFrameError("payload checksum mismatch")
    return header, payload


# -- raw index packing -------------------------------------------------------


def pack_raw(indices) -> bytes:
    """Pack [n_q, T'] indices at 10 bits each, codebook-major, MSB first."""
    indices = np.asarray(indices)
    if indices.ndim != 2:
        raise ValueError("indices must be [n_q, T']")
    if indices.size == 0:
        return b""
    if np.any(indices < 0) or np.any(indices >= 1 << BITS_PER_INDEX):
        raise ValueError(f"indices must fit in {BITS_PER_INDEX} bits")
    flat = indices.astype(np.uint16).reshape(-1)
    shifts = np.arange(BITS_PER_INDEX - 1, -1, -1, dtype=np.uint16)
    bits = ((flat[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1)).tobytes()


def unpack_raw(data: bytes, n_q: int, n_steps: int) -> np.ndarray:
    """Inverse of :func:`pack_raw` for a known index-tensor shape."""
    total_bits = n_q * n_steps * BITS_PER_INDEX
    expected = (total_bits + 7) // 8
    if len(data) != expected:
        raise CorruptFrameError(
            f"payload is {len(data)} bytes; {expected} expected for "
            f"{n_q}x{n_steps} indices"
        )
    if total_bits == 0:
        return np.zeros((n_q, n_steps), dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=total_bits)
    weights = 1 << np.arange(BITS_PER_INDEX - 1, -1, -1, dtype=np.int64)
    values = bits.reshape(-1, BITS_PER_INDEX).astype(np.int64) @ weights
    return values.reshape(n_q, n_steps)


# -- whole-file operations ---------------------------------------------------


def encode_file(wav_path, out_path, codec, n_q: int, entropy: bool = False,
                lm=None) -> FrameHeader:
    """Compress a WAV file to a codec file; returns the written header."""
    from .wavio import read_wav

    audio, rate = read_wav(wav_path)
    if rate != codec.cfg.sample_rate:
        raise ConfigMismatchError(
            f"file sample rate {rate} != model sample rate {codec.cfg.sample_rate}"
        )
    if audio.shape[0] != codec.cfg.audio_channels:
        raise ConfigMismatchError(
            f"file has {audio.shape[0]} channels, model expects "
            f"{codec.cfg.audio_channels}"
        )
    if entropy and lm is None:
        raise ValueError("entropy coding needs an index language model")
    indices, scales = codec.encode_indices(audio, n_q)
    if entropy:
        from .lm import compress_indices

        payload = compress_indices(indices, lm)
    else:
        payload = pack_raw(indices)
    header = FrameHeader(
        streamable=codec.cfg.mode == "streamable",
        entropy_coded=entropy,
        stereo=audio.shape[0] == 2,
        sample_rate=rate,
        n_q=n_q,
        n_latent_steps=indices.shape[1],
        n_samples=audio.shape[1],
        scales=() if scales is None else tuple(float(s) for s in scales),
    )
    with open(out_path, "wb") as handle:
        handle.write(serialize_frame(header, payload))
    return header


def decode_file(path, codec, lm=None, out_path=None) -> tuple:
    """Decompress a codec file; returns (audio [C, T], sample_rate) and
    optionally writes a WAV file."""
    with open(path, "rb") as handle:
        data = handle.read()
    header, payload = parse_frame(data)
    if header.sample_rate != codec.cfg.sample_rate:
        raise ConfigMismatchError(
            f"file sample rate {header.sample_rate} != model sample rate "
            f"{codec.cfg.sample_rate}"
        )
    expected_mode = "streamable" if header.streamable else "non_streamable"
    if codec.cfg.mode != expected_mode:
        raise ConfigMismatchError(
            f"file was encoded in {expected_mode} mode, model is {codec.cfg.mode}"
        )
    if header.entropy_coded:
        if lm is None:
            raise ValueError("entropy-coded file needs an index language model")
        from .lm import decompress_indices

        indices = decompress_indices(
            payload, lm, header.n_latent_steps, header.n_q
        )
    else:
        indices = unpack_raw(payload, header.n_q, header.n_latent_steps)
    scales = None if header.streamable else np.asarray(header.scales)
    audio = codec.decode_indices(indices, scales, header.n_samples)
    if out_path is not None:
        from .wavio import write_wav

        write_wav(out_path, audio, header.sample_rate)
    return audio, header.sample_rate
