"""Transport of the quantized SI vector over per-block erasure channels.

The M symbols (alphabet {1..Q}) are partitioned into B blocks, each packed
into the information bits of one LDPC block.  A block that fails to decode
erases every symbol it carried; erased positions are marked with the
out-of-alphabet placeholder 0 so downstream imputation is distinguishable
from a legitimate symbol.  Two channel modes exist: FULL-PHY runs the real
encode/modulate/decode chain per block, ABSTRACT draws Bernoulli erasures
from a tabulated block error rate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .channel import db_to_linear
from .ldpc import BlerCurve, ParityCheckMatrix, bler_lookup, bp_decode
from .modem import awgn_llr, qpsk_map
from .rng import stream

__all__ = [
    "SiVector",
    "BlockLayout",
    "ErasurePattern",
    "CapacityError",
    "SymbolRangeError",
    "AbstractChannel",
    "FullPhyChannel",
    "partition",
    "bits_needed",
    "pack_block",
    "unpack_block",
    "transmit",
    "erasure_stats",
    "save_received",
    "load_received",
]

ERASED = 0  # placeholder symbol, outside the {1..Q} alphabet


class CapacityError(ValueError):
    """A block needs more information bits than the code rate provides."""

    def __init__(self, block_index: int, needed: int, available: int):
        self.block_index = block_index
        super().__init__(
            f"block {block_index} needs {needed} info bits, only {available} available")


class SymbolRangeError(ValueError):
    """Unpacked value exceeds Q**count: corrupted-but-undetected block."""


@dataclass
class SiVector:
    """Quantized semantic symbols over {1..Q}; 0 marks an erased position."""

    q: int
    symbols: np.ndarray

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int32)
        if self.q < 2:
            raise ValueError(f"quantization level must be >= 2, got {self.q}")
        if self.symbols.ndim != 1:
            raise ValueError("symbols must be one-dimensional")
        if (self.symbols < 0).any() or (self.symbols > self.q).any():
            raise ValueError("symbols must lie in {0..Q} (0 = erased)")

    @property
    def m_len(self) -> int:
        return self.symbols.size


@dataclass
class BlockLayout:
    """Partition of M symbol positions into B blocks plus the bit budget."""

    b_blocks: int
    block_bits: int
    rate: float
    masks: list  # per-block index arrays, a partition of range(M)
    m_len: int
    scheme: str = "contiguous"

    @property
    def k_info(self) -> int:
        """Information bits available per block."""
        return int(self.block_bits * self.rate + 1e-9)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.masks])


@dataclass
class ErasurePattern:
    """Per-block Bernoulli outcomes; flag 1 means the block was erased."""

    flags: np.ndarray
    bler_used: np.ndarray | None = None

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=np.uint8)
        if not np.isin(self.flags, (0, 1)).all():
            raise ValueError("flags must be binary")


def bits_needed(count: int, q: int) -> int:
    """Exact ceil(count * log2(q)): bits to index Q**count values."""
    if count == 0:
        return 0
    return (q**count - 1).bit_length()


def partition(m_len: int, b_blocks: int, q: int, block_bits: int, rate: float,
              scheme: str = "contiguous") -> BlockLayout:
    """Split M positions into B blocks and verify the per-block bit budget.

    The first (M mod B) blocks take ceil(M/B) symbols, the rest floor(M/B).
    Contiguous masks are the default; the strided scheme spreads consecutive
    symbols across blocks to study burst-versus-spread erasures.
    """
    if not 1 <= b_blocks <= m_len:
        raise ValueError(f"need m_len >= b_blocks >= 1, got M={m_len}, B={b_blocks}")
    if scheme not in ("contiguous", "strided"):
        raise ValueError(f"unknown mask scheme {scheme!r}")
    base, rem = divmod(m_len, b_blocks)
    sizes = [base + 1 if i < rem else base for i in range(b_blocks)]
    if scheme == "contiguous":
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        masks = [np.arange(bounds[i], bounds[i + 1]) for i in range(b_blocks)]
    else:
        masks = [np.arange(i, m_len, b_blocks) for i in range(b_blocks)]
    layout = BlockLayout(b_blocks=b_blocks, block_bits=block_bits, rate=rate,
                         masks=masks, m_len=m_len, scheme=scheme)
    for i, mask in enumerate(masks):
        need = bits_needed(len(mask), q)
        if need > layout.k_info:
            raise CapacityError(i, need, layout.k_info)
    return layout


def pack_block(symbols: np.ndarray, k_info_bits: int, q: int) -> np.ndarray:
    """Mixed-radix packing: base-Q big integer, big-endian bits, tail padding.

    Symbols are 1-based; the packed value treats them 0-based, most
    significant symbol first.  Emits ceil(count*log2 Q) value bits followed
    by zero padding up to k_info_bits.
    """
    symbols = np.asarray(symbols)
    count = symbols.size
    if (symbols < 1).any() or (symbols > q).any():
        raise ValueError("symbols must lie in {1..Q}")
    nbits = bits_needed(count, q)
    if nbits > k_info_bits:
        raise CapacityError(-1, nbits, k_info_bits)
    value = 0
    for s in symbols.tolist():
        value = value * q + (s - 1)
    nbytes = max(1, (nbits + 7) // 8)
    raw = np.frombuffer(value.to_bytes(nbytes, "big"), dtype=np.uint8)
    bits = np.unpackbits(raw)[-nbits:] if nbits else np.empty(0, dtype=np.uint8)
    out = np.zeros(k_info_bits, dtype=np.uint8)
    out[:nbits] = bits
    return out


def unpack_block(info_bits: np.ndarray, count: int, q: int) -> np.ndarray:
    """Exact inverse of pack_block; rejects values outside Q**count.

    A value at or above Q**count, or nonzero padding bits, signals a block
    that decoded to the wrong codeword without being detected.
    """
    bits = np.asarray(info_bits, dtype=np.uint8)
    nbits = bits_needed(count, q)
    if bits.size < nbits:
        raise ValueError(f"need at least {nbits} bits for {count} base-{q} symbols")
    if bits[nbits:].any():
        raise SymbolRangeError("nonzero padding bits")
    if nbits:
        padded = np.concatenate([np.zeros((-nbits) % 8, dtype=np.uint8), bits[:nbits]])
        value = int.from_bytes(np.packbits(padded).tobytes(), "big")
    else:
        value = 0
    if value >= q**count:
        raise SymbolRangeError(f"packed value {value} >= {q}**{count}")
    digits = np.empty(count, dtype=np.int32)
    for i in range(count - 1, -1, -1):
        value, d = divmod(value, q)
        digits[i] = d + 1
    return digits


@dataclass
class AbstractChannel:
    """Erasure draws from p = bler_lookup(curve, gamma) or a forced constant."""

    snr_model: object | None = None
    curve: BlerCurve | None = None
    fixed_bler: float | None = None

    def __post_init__(self):
        if self.fixed_bler is None and (self.curve is None or self.snr_model is None):
            raise ValueError("abstract mode needs a BLER curve and SNR model, "
                             "or a fixed_bler override")
        if self.fixed_bler is not None and not 0.0 <= self.fixed_bler <= 1.0:
            raise ValueError(f"fixed_bler must be in [0,1], got {self.fixed_bler}")


@dataclass
class FullPhyChannel:
    """Per-block physical chain: encode, map, AWGN at a drawn SNR, decode."""

    code: ParityCheckMatrix
    snr_model: object
    max_iters: int = 50


def _abstract_transmit(si: SiVector, layout: BlockLayout, ch: AbstractChannel,
                       rng_seed: int):
    b = layout.b_blocks
    if ch.fixed_bler is not None:
        p = np.full(b, ch.fixed_bler)
    else:
        gamma_db = ch.snr_model.draw_db(stream(rng_seed, "si.gamma"), b)
        p = np.array([bler_lookup(ch.curve, g) for g in gamma_db])
    u = stream(rng_seed, "si.flags").random(b)
    flags = (u < p).astype(np.uint8)
    return flags, p


def _fullphy_transmit(si: SiVector, layout: BlockLayout, ch: FullPhyChannel,
                      rng_seed: int, received: np.ndarray):
    enc = ch.code.encoder()
    b = layout.b_blocks
    gamma_db = ch.snr_model.draw_db(stream(rng_seed, "si.gamma"), b)
    flags = np.zeros(b, dtype=np.uint8)
    for n_blk, mask in enumerate(layout.masks):
        info = pack_block(si.symbols[mask], enc.k, si.q)
        word = enc.encode(info)
        llrs = awgn_llr(qpsk_map(word), float(db_to_linear(gamma_db[n_blk])),
                        stream(rng_seed, "si.noise", n_blk))
        bits, converged, _ = bp_decode(ch.code, llrs, max_iters=ch.max_iters)
        if not converged:
            flags[n_blk] = 1
            continue
        try:
            symbols = unpack_block(enc.extract_info(bits), len(mask), si.q)
        except SymbolRangeError:
            flags[n_blk] = 1
            continue
        # converged to the wrong codeword but still in range: silently wrong
        received[mask] = symbols
    return flags


def transmit(si: SiVector, layout: BlockLayout,
             channel: AbstractChannel | FullPhyChannel, rng_seed: int):
    """Send the SI vector through per-block erasures; returns (received, pattern).

    Erased blocks have every symbol replaced by the placeholder 0; symbols of
    surviving blocks are carried through bit-exactly (FULL-PHY may also
    deliver silently wrong symbols when the decoder converges to a different
    codeword whose packed value stays in range, the realistic failure mode).
    """
    if layout.m_len != si.m_len:
        raise ValueError(f"layout is for M={layout.m_len}, vector has M={si.m_len}")
    received = si.symbols.copy()
    if isinstance(channel, AbstractChannel):
        flags, p = _abstract_transmit(si, layout, channel, rng_seed)
        bler_used = p
    else:
        flags = _fullphy_transmit(si, layout, channel, rng_seed, received)
        bler_used = None
    for n_blk in np.nonzero(flags)[0]:
        received[layout.masks[n_blk]] = ERASED
    return SiVector(q=si.q, symbols=received), ErasurePattern(flags=flags, bler_used=bler_used)


@dataclass
class ErasureStats:
    mean_bler: float
    per_block: np.ndarray


def erasure_stats(patterns: list) -> ErasureStats:
    """Empirical erasure summary over a list of patterns."""
    if not patterns:
        raise ValueError("need at least one pattern")
    flags = np.stack([p.flags for p in patterns])
    return ErasureStats(mean_bler=float(flags.mean()), per_block=flags.mean(axis=0))


# ---------------------------------------------------------------------------
# replay container: magic, version, Q, M, B, symbols, flags
# ---------------------------------------------------------------------------

_MAGIC = b"GSRX"
_VERSION = 1


def save_received(path, si: SiVector, pattern: ErasurePattern) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HIQI", _VERSION, si.q, si.m_len, pattern.flags.size))
        fh.write(si.symbols.astype("<i4").tobytes())
        fh.write(pattern.flags.astype(np.uint8).tobytes())


def load_received(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        version, q, m_len, b = struct.unpack("<HIQI", fh.read(18))
        if version != _VERSION:
            raise ValueError(f"unsupported container version {version}")
        symbols = np.frombuffer(fh.read(4 * m_len), dtype="<i4").astype(np.int32)
        flags = np.frombuffer(fh.read(b), dtype=np.uint8).copy()
    return SiVector(q=q, symbols=symbols), ErasurePattern(flags=flags)
