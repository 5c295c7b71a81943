"""Calibrated scalar quantization of latent tensors and quality metrics.

A latent tensor of shape (H, W, F, C) is flattened into scalar features.
Calibration fixes per-channel (lo, hi) bounds at the 0.5/99.5 percentiles of
a dataset and distributes the M symbol slots over features round-robin,
walking channels in decreasing variance order, so high-variance channels
receive extra digits first.  A feature with d digits is quantized uniformly
into Q**d cells, emitted most significant digit first.  Decoding maps intact
digit groups to cell midpoints and imputes the calibrated channel mean for
any feature touched by an erasure.

Quality metrics: latent-space mean squared error (with a pluggable
perceptual projection), PSNR, and multi-scale SSIM.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rng import stream
from .si_transport import SiVector

__all__ = [
    "QuantizerParams",
    "calibrate",
    "encode",
    "decode",
    "vpl",
    "psnr",
    "ms_ssim",
    "synthetic_dataset",
    "make_orthogonal_projector",
    "save_latent",
    "load_latent",
    "save_quantizer",
    "load_quantizer",
]


@dataclass
class QuantizerParams:
    """Calibration state: per-channel bounds/means and the digit allocation."""

    q: int
    m_len: int
    dims: tuple
    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray
    channel_var: np.ndarray
    # derived allocation tables, rebuilt in __post_init__
    channel_order: np.ndarray = field(init=False, repr=False)
    feature_order: np.ndarray = field(init=False, repr=False)
    digits: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h, w, f, c = self.dims
        if len(self.lo) != c:
            raise ValueError("per-channel bounds must match the channel count")
        if np.any(self.lo >= self.hi):
            raise ValueError("need lo < hi per channel")
        n_pos = h * w * f
        n_feat = n_pos * c
        self.channel_order = np.argsort(-self.channel_var, kind="stable")
        self.feature_order = np.concatenate(
            [np.arange(n_pos) * c + ch for ch in self.channel_order])
        if self.m_len >= n_feat:
            rounds, rem = divmod(self.m_len, n_feat)
            digits = np.full(n_feat, rounds, dtype=np.int64)
            digits[:rem] += 1
        else:
            digits = np.zeros(n_feat, dtype=np.int64)
            digits[: self.m_len] = 1
        self.digits = digits
        self.offsets = np.concatenate([[0], np.cumsum(digits)])
        d_max = int(digits.max())
        if d_max * math.log2(self.q) > 62:
            raise ValueError(f"digit depth {d_max} at Q={self.q} overflows the cell index")

    @property
    def n_features(self) -> int:
        return int(np.prod(self.dims))

    def _ordered_channel(self) -> np.ndarray:
        h, w, f, c = self.dims
        return np.repeat(self.channel_order, h * w * f)


def calibrate(dataset, q: int, m_len: int) -> QuantizerParams:
    """Fit quantizer bounds and digit allocation on a dataset of latent tensors.

    Bounds are the per-channel 0.5/99.5 percentiles; constant channels are
    widened by a machine-epsilon guard.  When m_len is below the feature
    count the allocation degenerates to selecting the m_len highest-variance
    features, the rest are always imputed.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    if q < 2:
        raise ValueError(f"quantization level must be >= 2, got {q}")
    if m_len < 1:
        raise ValueError("m_len must be >= 1")
    dims = tuple(dataset[0].shape)
    if len(dims) != 4:
        raise ValueError(f"latent tensors must be 4-D, got shape {dims}")
    for u in dataset:
        if tuple(u.shape) != dims:
            raise ValueError("all dataset tensors must share one shape")
    flat = np.concatenate([np.asarray(u, dtype=float).reshape(-1, dims[3]) for u in dataset])
    lo = np.percentile(flat, 0.5, axis=0)
    hi = np.percentile(flat, 99.5, axis=0)
    degenerate = hi - lo <= 0
    guard = np.maximum(np.abs(lo), 1.0) * 64 * np.finfo(float).eps
    hi = np.where(degenerate, lo + guard, hi)
    return QuantizerParams(
        q=q, m_len=m_len, dims=dims, lo=lo, hi=hi,
        mean=flat.mean(axis=0), channel_var=flat.var(axis=0),
    )


def encode(u: np.ndarray, params: QuantizerParams) -> SiVector:
    """Quantize a latent tensor into the SI symbol vector (values in {1..Q})."""
    u = np.asarray(u, dtype=float)
    if tuple(u.shape) != params.dims:
        raise ValueError(f"tensor shape {u.shape} does not match calibration {params.dims}")
    vals = u.reshape(-1)[params.feature_order]
    ch = params._ordered_channel()
    lo = params.lo[ch]
    span = (params.hi - params.lo)[ch]
    symbols = np.zeros(params.m_len, dtype=np.int32)
    q = params.q
    for d in np.unique(params.digits):
        if d == 0:
            continue
        idx = np.nonzero(params.digits == d)[0]
        levels = q ** int(d)
        cell = np.floor((vals[idx] - lo[idx]) / span[idx] * levels).astype(np.int64)
        np.clip(cell, 0, levels - 1, out=cell)
        base = params.offsets[idx]
        for k in range(int(d)):
            symbols[base + k] = (cell // q ** (int(d) - 1 - k)) % q + 1
    return SiVector(q=q, symbols=symbols)


def decode(s: SiVector, params: QuantizerParams) -> np.ndarray:
    """Reconstruct a latent tensor from a (possibly corrupted) SI vector.

    Features whose digits all survived are dequantized to cell midpoints;
    any feature with an erased digit, and features outside the allocation,
    take the calibrated channel mean.
    """
    if s.m_len != params.m_len:
        raise ValueError(f"vector length {s.m_len} does not match calibration {params.m_len}")
    if s.q != params.q:
        raise ValueError(f"vector alphabet {s.q} does not match calibration {params.q}")
    ch = params._ordered_channel()
    out_ordered = params.mean[ch].copy()
    lo = params.lo[ch]
    span = (params.hi - params.lo)[ch]
    q = params.q
    for d in np.unique(params.digits):
        if d == 0:
            continue
        idx = np.nonzero(params.digits == d)[0]
        levels = q ** int(d)
        cols = params.offsets[idx][:, None] + np.arange(int(d))[None, :]
        digs = s.symbols[cols].astype(np.int64)
        intact = (digs > 0).all(axis=1)
        weights = q ** (int(d) - 1 - np.arange(int(d), dtype=np.int64))
        cell = ((digs - 1) * weights).sum(axis=1)
        mid = lo[idx] + (cell + 0.5) * span[idx] / levels
        sel = idx[intact]
        out_ordered[sel] = mid[intact]
    flat = np.empty(params.n_features)
    flat[params.feature_order] = out_ordered
    return flat.reshape(params.dims)


def vpl(u: np.ndarray, u_hat: np.ndarray, encoder=None) -> float:
    """Perceptual loss between latents: mean squared difference.

    The perceptual encoder defaults to the identity on latents; any callable
    mapping tensors to same-shaped features may be plugged in.
    """
    u = np.asarray(u, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if u.shape != u_hat.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_hat.shape}")
    if encoder is not None:
        u = encoder(u)
        u_hat = encoder(u_hat)
    return float(np.mean((u - u_hat) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


def _ssim_parts(a: np.ndarray, b: np.ndarray, win: int, sigma: float, peak: float):
    """Luminance and contrast-structure maps (cropped to the valid region)."""
    radius = (win - 1) // 2
    truncate = radius / sigma if radius else 0.0

    def filt(x):
        return ndimage.gaussian_filter(x, sigma=sigma, truncate=truncate) if radius \
            else np.full_like(x, x.mean())

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a, mu_b = filt(a), filt(b)
    sxx = filt(a * a) - mu_a**2
    syy = filt(b * b) - mu_b**2
    sxy = filt(a * b) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    if radius:
        sl = (slice(radius, -radius),) * a.ndim
        lum, cs = lum[sl], cs[sl]
    return lum, cs


def ms_ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Multi-scale structural similarity of two 2-D images.

    Up to five dyadic scales with the standard weights; the contrast and
    structure terms enter at every scale, luminance only at the coarsest.
    Small inputs reduce the scale count (and, below the 11-pixel window, the
    window size) with renormalized weights rather than failing.  Negative
    contrast terms are clamped at zero before the weighted product.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("ms_ssim expects two 2-D images of equal shape")
    win, sigma = 11, 1.5
    side = min(a.shape)
    n_scales = 1
    while n_scales < 5 and side // 2**n_scales >= win:
        n_scales += 1
    if side < win:
        win = side if side % 2 == 1 else side - 1
        win = max(win, 1)
    weights = _MSSSIM_WEIGHTS[:n_scales] / _MSSSIM_WEIGHTS[:n_scales].sum()

    value = 1.0
    for s in range(n_scales):
        lum, cs = _ssim_parts(a, b, win, sigma, peak)
        term = float((lum * cs).mean()) if s == n_scales - 1 else float(cs.mean())
        value *= max(term, 0.0) ** weights[s]
        if s < n_scales - 1:
            ha, wa = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
            a = a[:ha, :wa].reshape(ha // 2, 2, wa // 2, 2).mean(axis=(1, 3))
            b = b[:ha, :wa].reshape(ha // 2, 2, wa // 2, 2).mean(axis=(1, 3))
    return float(value)


def synthetic_dataset(n: int, dims: tuple, rng_seed: int, corr: float = 0.9,
                      channel_scales=None) -> list:
    """Seeded Gauss-Markov latent tensors with spatial/temporal correlation.

    White noise per channel is AR(1)-filtered along the H, W and F axes with
    coefficient `corr`, keeping unit marginal variance, then scaled per
    channel.  Correlated fields make erasure effects spatially coherent, the
    way real latents behave.
    """
    h, w, f, c = dims
    if channel_scales is None:
        channel_scales = 1.0 / np.sqrt(1.0 + np.arange(c))
    channel_scales = np.asarray(channel_scales, dtype=float)
    if channel_scales.shape != (c,):
        raise ValueError(f"need {c} channel scales, got {channel_scales.shape}")
    rho = float(corr)
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"corr must be in [0, 1), got {corr}")
    out = []
    for i in range(n):
        rng = stream(rng_seed, "latent.synth", i)
        x = rng.standard_normal((h, w, f, c))
        for axis in range(3):
            x = np.moveaxis(x, axis, 0)
            for j in range(1, x.shape[0]):
                x[j] = rho * x[j - 1] + math.sqrt(1 - rho**2) * x[j]
            x = np.moveaxis(x, 0, axis)
        out.append(x * channel_scales)
    return out


def make_orthogonal_projector(c_channels: int, rng_seed: int):
    """Fixed random orthogonal map on the channel axis, usable as vpl encoder.

    Orthogonality preserves squared distances exactly, so it emulates a
    perceptual encoder distinct from the codec without changing the loss
    landscape.
    """
    g = stream(rng_seed, "latent.proj").standard_normal((c_channels, c_channels))
    qmat, r = np.linalg.qr(g)
    qmat = qmat * np.sign(np.diag(r))

    def project(u: np.ndarray) -> np.ndarray:
        return np.tensordot(np.asarray(u, dtype=float), qmat, axes=([-1], [0]))

    return project


# ---------------------------------------------------------------------------
# serialization: flat binary latents, JSON quantizer state
# ---------------------------------------------------------------------------

_LATENT_MAGIC = b"GSLT"


def save_latent(path, u: np.ndarray) -> None:
    u = np.asarray(u, dtype="<f8")
    if u.ndim != 4:
        raise ValueError("latent tensors are 4-D")
    with open(path, "wb") as fh:
        fh.write(_LATENT_MAGIC)
        fh.write(struct.pack("<H4Q", 1, *u.shape))
        fh.write(np.ascontiguousarray(u).tobytes())


def load_latent(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != _LATENT_MAGIC:
            raise ValueError("not a latent tensor file")
        version, h, w, f, c = struct.unpack("<H4Q", fh.read(34))
        if version != 1:
            raise ValueError(f"unsupported latent file version {version}")
        data = np.frombuffer(fh.read(8 * h * w * f * c), dtype="<f8")
    return data.reshape(h, w, f, c).copy()


def save_quantizer(path, params: QuantizerParams) -> None:
    doc = {
        "schema_version": 1,
        "q": params.q,
        "m_len": params.m_len,
        "dims": list(params.dims),
        "lo": params.lo.tolist(),
        "hi": params.hi.tolist(),
        "mean": params.mean.tolist(),
        "channel_var": params.channel_var.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_quantizer(path) -> QuantizerParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != 1:
        raise ValueError("unsupported quantizer file version")
    return QuantizerParams(
        q=doc["q"], m_len=doc["m_len"], dims=tuple(doc["dims"]),
        lo=np.asarray(doc["lo"]), hi=np.asarray(doc["hi"]),
        mean=np.asarray(doc["mean"]), channel_var=np.asarray(doc["channel_var"]),
    )
