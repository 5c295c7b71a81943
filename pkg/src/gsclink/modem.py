"""QPSK mapping and soft demapping over AWGN at a block-constant SNR.

Gray labeling is fixed: the first bit of each dibit selects the sign of the
in-phase component, the second the quadrature component, with bit 0 mapping
to +1.  So (0,0) -> (1+1j)/sqrt(2).  Any consistent labeling would do since
the code is bit-interleaved; consistency is the contract.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import stream

__all__ = ["qpsk_map", "qpsk_hard_demap", "awgn_llr", "llr_from_received"]

_SQRT2 = math.sqrt(2.0)


def qpsk_map(bits) -> np.ndarray:
    """Map an even-length bit sequence to unit-power Gray-labeled QPSK symbols."""
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.size % 2 != 0:
        raise ValueError(f"bit count must be even, got shape {bits.shape}")
    b = bits.astype(float).reshape(-1, 2)
    return ((1.0 - 2.0 * b[:, 0]) + 1j * (1.0 - 2.0 * b[:, 1])) / _SQRT2


def qpsk_hard_demap(symbols) -> np.ndarray:
    """Inverse of qpsk_map by sign decisions (exact at infinite SNR)."""
    s = np.asarray(symbols)
    bits = np.empty((s.size, 2), dtype=np.uint8)
    bits[:, 0] = (s.real < 0).astype(np.uint8)
    bits[:, 1] = (s.imag < 0).astype(np.uint8)
    return bits.reshape(-1)


def llr_from_received(received, snr_linear: float) -> np.ndarray:
    """Per-bit LLRs of received symbols at per-symbol Es/N0 = snr_linear.

    Positive LLR means bit 0 is more likely.  For unit-power QPSK with
    per-dimension noise variance 1/(2*snr), LLR_k = sqrt(2) * y_k / sigma_dim^2,
    i.e. LLR magnitudes scale linearly with snr_linear for a fixed received
    vector.
    """
    if snr_linear <= 0:
        raise ValueError(f"snr_linear must be > 0, got {snr_linear}")
    y = np.asarray(received)
    inv_var = 2.0 * snr_linear  # 1 / sigma_dim^2
    llr = np.empty((y.size, 2))
    llr[:, 0] = _SQRT2 * y.real * inv_var
    llr[:, 1] = _SQRT2 * y.imag * inv_var
    return llr.reshape(-1)


def awgn_llr(symbols, snr_linear: float, rng: np.random.Generator | int,
             noise_scale: float = 1.0) -> np.ndarray:
    """Add complex AWGN at the given SNR and return per-bit LLRs.

    rng may be a Generator or an integer seed.  noise_scale rescales the
    injected noise standard deviation (0 gives the noiseless test hook; the
    LLR normalisation still uses the nominal SNR, so LLR signs then recover
    the transmitted bits exactly).
    """
    if snr_linear <= 0:
        raise ValueError(f"snr_linear must be > 0, got {snr_linear}")
    if isinstance(rng, (int, np.integer)):
        rng = stream(rng, "modem.awgn")
    s = np.asarray(symbols)
    sigma_dim = math.sqrt(1.0 / (2.0 * snr_linear)) * noise_scale
    noise = sigma_dim * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
    return llr_from_received(s + noise, snr_linear)
