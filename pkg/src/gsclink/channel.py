"""Satellite relay channel: shadowed-Rician fading and amplify-and-forward SNR.

The uplink gain H_ts = eta_t * |h|**2 follows the shadowed-Rician power
distribution with shape (m, b, omega); the satellite rescales the received
waveform to its maximum power and forwards it, so the end-to-end SNR combines
both hops plus the forwarded satellite noise.  All SNR math is in linear
units; dB appears only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaincc

from .rng import stream

__all__ = [
    "FadingParams",
    "LinkBudget",
    "SnrSample",
    "RelaySnrModel",
    "FixedSnr",
    "db_to_linear",
    "linear_to_db",
    "pdf_gain",
    "cdf_gain",
    "mean_gain",
    "sample_gain",
    "amplification_ratio",
    "end_to_end_snr",
    "snr_cdf",
]


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x_lin):
    return 10.0 * np.log10(np.maximum(np.asarray(x_lin, dtype=float), 1e-300))


@dataclass(frozen=True)
class FadingParams:
    """Shadowed-Rician shape parameters and derived series coefficients.

    m is the integer Nakagami shadowing order of the line-of-sight amplitude,
    b the half average scatter power, omega the average line-of-sight power.
    The power gain |h|**2 then has the density

        Lambda * sum_{k=0}^{m-1} zeta(k) * z**k * exp(-(beta - delta) * z)

    with Lambda, beta, delta, zeta as computed below; pdf_gain adds the
    eta scaling.
    """

    m: int
    b: float
    omega: float
    lam: float = field(init=False)
    beta: float = field(init=False)
    delta: float = field(init=False)
    zeta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"shadowing order m must be a positive integer, got {self.m}")
        if self.b <= 0:
            raise ValueError(f"scatter power b must be > 0, got {self.b}")
        if self.omega < 0:
            raise ValueError(f"LOS power omega must be >= 0, got {self.omega}")
        object.__setattr__(self, "m", int(self.m))
        two_b = 2.0 * self.b
        beta = 1.0 / two_b
        delta = self.omega / (two_b * (two_b * self.m + self.omega))
        lam = ((two_b * self.m) / (two_b * self.m + self.omega)) ** self.m / two_b
        # zeta(k) = (-1)^k (1-m)_k delta^k / (k!)^2, Pochhammer rising factorial
        zeta = np.empty(self.m)
        poch = 1.0  # (1-m)_0
        for k in range(self.m):
            zeta[k] = (-1.0) ** k * poch * delta**k / math.factorial(k) ** 2
            poch *= (1 - self.m) + k
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "zeta", zeta)

    @property
    def mean_power(self) -> float:
        """E[|h|**2] = 2b + omega of the physical composition."""
        return 2.0 * self.b + self.omega


@dataclass(frozen=True)
class LinkBudget:
    """Powers, gains and geometry of the user -> satellite -> ground chain.

    All values are linear SI units (W, m).  eta_t and eta_r are the
    normalisation scales of the uplink and downlink power gains: the received
    uplink signal power is H_ts * d_ts**-alpha * sigma2_s with
    H_ts = eta_t |h_ts|**2, and symmetrically for the downlink with the
    satellite transmit power p_s.
    """

    p_t: float
    p_s: float
    g_t: float
    g_s: float
    g_r: float
    lambda_c: float
    alpha: float
    d_ts: float
    d_sr: float
    sigma2_s: float
    sigma2_r: float

    def __post_init__(self):
        for name in ("p_t", "p_s", "g_t", "g_s", "g_r", "lambda_c", "alpha",
                     "d_ts", "d_sr", "sigma2_s", "sigma2_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"LinkBudget.{name} must be > 0, got {getattr(self, name)}")

    @property
    def eta_t(self) -> float:
        return self.p_t * self.g_t * self.g_s * (self.lambda_c / (4.0 * math.pi)) ** self.alpha / self.sigma2_s

    @property
    def eta_r(self) -> float:
        return self.p_s * self.g_s * self.g_r * (self.lambda_c / (4.0 * math.pi)) ** self.alpha / self.sigma2_r

    def with_distance(self, d: float) -> "LinkBudget":
        """Budget with both hop distances replaced by d (metres)."""
        return LinkBudget(self.p_t, self.p_s, self.g_t, self.g_s, self.g_r,
                          self.lambda_c, self.alpha, d, d, self.sigma2_s, self.sigma2_r)


@dataclass(frozen=True)
class SnrSample:
    """One end-to-end draw: hop gains and the resulting linear SNR."""

    h_ts: float
    h_sr: float
    gamma_tr: float

    def __post_init__(self):
        if self.h_ts < 0 or self.h_sr < 0 or self.gamma_tr < 0:
            raise ValueError("SnrSample fields must be nonnegative")


def pdf_gain(params: FadingParams, eta: float, z):
    """Density of the scaled power gain H = eta * |h|**2 at z.

    Vectorised over z; zero for z < 0.
    """
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    z = np.asarray(z, dtype=float)
    k = np.arange(params.m)
    terms = params.zeta / eta ** (k + 1)  # zeta(k) / eta^(k+1)
    zk = z[..., None] ** k
    out = params.lam * (zk * terms).sum(axis=-1) * np.exp(-(params.beta - params.delta) * z / eta)
    return np.where(z >= 0, out, 0.0)


def cdf_gain(params: FadingParams, eta: float, z):
    """CDF of H = eta * |h|**2, from term-wise integration of the density.

    Each series term integrates to a lower incomplete gamma function, so the
    CDF is exact up to floating point; used for inverse checks and KS tests.
    """
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    z = np.asarray(z, dtype=float)
    c = (params.beta - params.delta) / eta
    k = np.arange(params.m)
    # integral_0^z t^k exp(-c t) dt = k! / c^(k+1) * P(k+1, c z)
    coeff = params.lam * params.zeta / eta ** (k + 1) * np.array(
        [math.factorial(int(kk)) for kk in k]
    ) / c ** (k + 1)
    p_low = 1.0 - gammaincc(k + 1, np.maximum(z[..., None], 0.0) * c)
    out = (coeff * p_low).sum(axis=-1)
    return np.where(z > 0, np.clip(out, 0.0, 1.0), 0.0)


def mean_gain(params: FadingParams, eta: float) -> float:
    """E[H] by adaptive quadrature of the density (relative tolerance 1e-8).

    The upper limit is pushed out until the remaining exponential-envelope
    tail mass is below 1e-12.
    """
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    rate = (params.beta - params.delta) / eta
    # Envelope tail bound: beyond z0 the density is dominated by the k=m-1
    # term; grow z0 until the residual CDF mass drops below 1e-12.
    z0 = 10.0 / rate
    while 1.0 - cdf_gain(params, eta, z0) > 1e-12:
        z0 *= 2.0
    val, _ = integrate.quad(lambda z: z * pdf_gain(params, eta, z), 0.0, z0,
                            epsrel=1e-8, limit=200)
    return float(val)


def sample_gain(params: FadingParams, eta: float, rng_seed: int, n: int = 1,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw n realisations of H = eta * |h|**2 by physical composition.

    h = A + Z with A the Nakagami-m LOS amplitude (A**2 ~ Gamma(m, omega/m))
    and Z circular complex Gaussian scatter with per-complex variance 2b.
    The uniform LOS phase is absorbed by the circular symmetry of Z.
    Integer m makes the Nakagami draw exact.
    """
    if rng is None:
        rng = stream(rng_seed, "channel.gain")
    if params.omega > 0:
        a = np.sqrt(rng.gamma(shape=params.m, scale=params.omega / params.m, size=n))
    else:
        a = np.zeros(n)
    sb = math.sqrt(params.b)
    x = rng.standard_normal(n) * sb
    y = rng.standard_normal(n) * sb
    return eta * ((a + x) ** 2 + y**2)


def amplification_ratio(budget: LinkBudget, mean_gain_ts: float) -> float:
    """Relay amplification Psi = sqrt(p_s / (H_bar * d_ts^-alpha * sigma2_s + sigma2_s))."""
    if mean_gain_ts < 0:
        raise ValueError(f"mean gain must be >= 0, got {mean_gain_ts}")
    denom = mean_gain_ts * budget.d_ts ** (-budget.alpha) * budget.sigma2_s + budget.sigma2_s
    return math.sqrt(budget.p_s / denom)


def end_to_end_snr(budget: LinkBudget, h_ts, h_sr, psi: float):
    """Linear end-to-end SNR through the amplify-and-forward relay.

    numerator   d_ts^-a d_sr^-a H_ts H_sr Psi^2 s_s^2 s_r^2 / P_s
    denominator d_sr^-a H_sr Psi^2 s_s^2 s_r^2 / P_s + s_r^2

    Vectorised over (h_ts, h_sr).
    """
    h_ts = np.asarray(h_ts, dtype=float)
    h_sr = np.asarray(h_sr, dtype=float)
    dts = budget.d_ts ** (-budget.alpha)
    dsr = budget.d_sr ** (-budget.alpha)
    fwd = dsr * h_sr * psi**2 * budget.sigma2_s * budget.sigma2_r / budget.p_s
    num = dts * h_ts * fwd
    den = fwd + budget.sigma2_r
    return num / den


def snr_cdf(budget: LinkBudget, params: FadingParams, n_samples: int, rng_seed: int,
            params_down: FadingParams | None = None) -> np.ndarray:
    """Empirical CDF of the end-to-end SNR in dB, Monte Carlo over both hops.

    Returns an (n_samples, 2) array of sorted (gamma_db, cumulative
    probability) pairs; deterministic given the seed.  The downlink uses the
    same fading shape unless params_down overrides it.

    The per-hop fading draws are addressed by trial index only, not by the
    budget, so sweeps over distance reuse common random numbers and preserve
    per-sample monotonicity.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if params_down is None:
        params_down = params
    rng_up = stream(rng_seed, "channel.snr_cdf.up")
    rng_down = stream(rng_seed, "channel.snr_cdf.down")
    h_ts = sample_gain(params, budget.eta_t, 0, n=n_samples, rng=rng_up)
    h_sr = sample_gain(params_down, budget.eta_r, 0, n=n_samples, rng=rng_down)
    psi = amplification_ratio(budget, mean_gain(params, budget.eta_t))
    gamma = end_to_end_snr(budget, h_ts, h_sr, psi)
    gamma_db = np.sort(linear_to_db(gamma))
    prob = np.arange(1, n_samples + 1) / n_samples
    return np.column_stack([gamma_db, prob])


class RelaySnrModel:
    """Per-block SNR draws for the transport chain, built from a link budget.

    Psi is computed once from the quadrature mean of the uplink gain.  Draws
    are vectorised and use the generator handed in by the caller, so the
    caller controls stream identity.
    """

    def __init__(self, budget: LinkBudget, fading: FadingParams,
                 fading_down: FadingParams | None = None):
        self.budget = budget
        self.fading = fading
        self.fading_down = fading_down if fading_down is not None else fading
        self.psi = amplification_ratio(budget, mean_gain(fading, budget.eta_t))

    def draw_linear(self, rng: np.random.Generator, n: int) -> np.ndarray:
        h_ts = sample_gain(self.fading, self.budget.eta_t, 0, n=n, rng=rng)
        h_sr = sample_gain(self.fading_down, self.budget.eta_r, 0, n=n, rng=rng)
        return end_to_end_snr(self.budget, h_ts, h_sr, self.psi)

    def draw_db(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return linear_to_db(self.draw_linear(rng, n))


class FixedSnr:
    """Degenerate SNR model: every draw returns the same gamma (dB)."""

    def __init__(self, gamma_db: float):
        self.gamma_db = float(gamma_db)

    def draw_linear(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, db_to_linear(self.gamma_db))

    def draw_db(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, self.gamma_db)
