"""Deterministic denoising sampler, in-context adapter loss, and LoRA training.

The sampler moves a tensor from noise level tau to tau' (tau' < tau, alpha
nonincreasing in tau) by

    v' = sqrt(a'/a) * v - sqrt((a' - a)/a) * eps_hat(v, tau | condition)

which recovers the clean tensor exactly at a'=1 when eps_hat returns the
noise actually injected.  A noise predictor is any callable
(tensor, tau, condition=None) -> tensor of the same shape.

Conditioning uses in-context concatenation: the noisy target and the noised
condition are stacked along the first spatial axis, the predictor sees the
pair, and the cut-off keeps only the half corresponding to the target.  Only
the low-rank adapter matrices of the toy predictor train; its base weights
stay frozen.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import child_seed, stream

__all__ = [
    "AlphaSchedule",
    "cosine_schedule",
    "LoraAdapter",
    "ToyPredictor",
    "TrainResult",
    "TrainingDivergedError",
    "forward_noise",
    "ddim_step",
    "sample",
    "concat_pair",
    "cutoff",
    "ic_concat_loss",
    "ic_loss_and_grads",
    "ic_predictor",
    "lora_apply",
    "train_lora",
    "grad_check",
    "make_identity_repair_task",
    "make_grad_check_toy",
    "make_refiner_predictor",
    "save_adapters",
    "load_adapters",
    "save_trace",
]

CONCAT_AXIS = 0  # spatial axis used for in-context concatenation


@dataclass
class AlphaSchedule:
    """Signal-power schedule alpha(tau) with S uniformly spaced levels in [0,1].

    alpha must be nonincreasing with alpha(0) = 1 and alpha(1) <= 1e-4
    (near-pure noise at the top level).
    """

    steps: int
    alpha_fn: object
    levels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("need at least 2 levels")
        self.levels = np.linspace(0.0, 1.0, self.steps)
        a = np.array([self.alpha_fn(t) for t in self.levels], dtype=float)
        if abs(a[0] - 1.0) > 1e-12:
            raise ValueError(f"alpha(0) must be 1, got {a[0]}")
        if a[-1] > 1e-4:
            raise ValueError(f"alpha(1) must be <= 1e-4, got {a[-1]}")
        if np.any(np.diff(a) > 1e-12) or np.any(a <= 0) or np.any(a > 1):
            raise ValueError("alpha must be nonincreasing within (0, 1]")

    def alpha(self, tau: float) -> float:
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {tau}")
        return float(self.alpha_fn(tau))


def cosine_schedule(steps: int = 50) -> AlphaSchedule:
    """Default schedule alpha(tau) = clip(cos(pi tau / 2)^2, 1e-5, 1)."""
    return AlphaSchedule(steps=steps,
                         alpha_fn=lambda t: min(1.0, max(math.cos(math.pi * t / 2.0) ** 2, 1e-5)))


def forward_noise(u: np.ndarray, tau: float, schedule: AlphaSchedule,
                  rng: np.random.Generator | int):
    """Noise u to level tau: returns (sqrt(a) u + sqrt(1-a) eps, eps)."""
    if isinstance(rng, (int, np.integer)):
        rng = stream(rng, "gen.forward")
    a = schedule.alpha(tau)
    eps = rng.standard_normal(np.shape(u))
    return math.sqrt(a) * np.asarray(u, dtype=float) + math.sqrt(1.0 - a) * eps, eps


def ddim_step(v_tau: np.ndarray, tau: float, tau_prime: float, schedule: AlphaSchedule,
              predictor, condition=None) -> np.ndarray:
    """One deterministic denoising move from level tau down to tau_prime."""
    if tau_prime >= tau:
        raise ValueError(f"tau_prime must be < tau, got {tau_prime} >= {tau}")
    a = schedule.alpha(tau)
    a_p = schedule.alpha(tau_prime)
    eps_hat = predictor(v_tau, tau, condition)
    if np.shape(eps_hat) != np.shape(v_tau):
        raise ValueError("predictor output shape must match its input")
    return math.sqrt(a_p / a) * v_tau - math.sqrt(max(a_p - a, 0.0) / a) * eps_hat


def sample(schedule: AlphaSchedule, predictor, condition, dims, rng_seed: int) -> np.ndarray:
    """Run the sampler from pure noise down the schedule's levels."""
    v = stream(rng_seed, "gen.sample").standard_normal(dims)
    levels = schedule.levels
    for i in range(schedule.steps - 1, 0, -1):
        v = ddim_step(v, levels[i], levels[i - 1], schedule, predictor, condition)
    return v


def concat_pair(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Stack target and condition along the designated spatial axis."""
    if np.shape(x) != np.shape(y):
        raise ValueError("concatenation needs equal shapes")
    return np.concatenate([x, y], axis=CONCAT_AXIS)


def cutoff(x: np.ndarray) -> np.ndarray:
    """Discard the latter half along the concatenation axis: cutoff(x (+) y) = x."""
    n = x.shape[CONCAT_AXIS]
    if n % 2 != 0:
        raise ValueError("cut-off needs an even concatenated axis")
    return np.take(x, np.arange(n // 2), axis=CONCAT_AXIS)


# ---------------------------------------------------------------------------
# low-rank adapters and the toy predictor
# ---------------------------------------------------------------------------

@dataclass
class LoraAdapter:
    """Frozen base matrix with trainable low-rank factors: W + up @ down."""

    base: np.ndarray   # (O, I), frozen
    down: np.ndarray   # (r, I)
    up: np.ndarray     # (O, r)

    def __post_init__(self):
        o, i = self.base.shape
        r = self.down.shape[0]
        if self.down.shape != (r, i) or self.up.shape != (o, r):
            raise ValueError(f"factor shapes {self.down.shape}/{self.up.shape} "
                             f"do not fit base {self.base.shape}")
        if r > min(o, i):
            raise ValueError(f"rank {r} exceeds min{(o, i)}")

    @property
    def rank(self) -> int:
        return self.down.shape[0]

    @classmethod
    def init(cls, base: np.ndarray, rank: int, rng: np.random.Generator,
             down_scale: float = 0.02) -> "LoraAdapter":
        """Zero up-factor, small random down-factor: starts exactly at the base map."""
        o, i = base.shape
        return cls(base=base,
                   down=down_scale * rng.standard_normal((rank, i)),
                   up=np.zeros((o, rank)))

    def effective(self) -> np.ndarray:
        return self.base + self.up @ self.down

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.base.shape[1]:
            raise ValueError(f"input length {x.shape[-1]} does not match {self.base.shape[1]}")
        return x @ self.base.T + (x @ self.down.T) @ self.up.T


def lora_apply(adapter: LoraAdapter, x: np.ndarray) -> np.ndarray:
    """(base + up @ down) @ x without forming the dense sum."""
    return adapter.apply(x)


class ToyPredictor:
    """Two-layer map over flattened tensors with adapters on both layers.

    hidden = act(W1' z), out = W2' hidden, where z appends the optional
    auxiliary channel, tau and a constant 1 to the flattened input and
    Wk' = Wk + upk @ downk.  Small enough for exhaustive finite-difference
    checks of the adapter gradients.

    With head="clean" the network output f is read as an estimate of the
    clean tensor and re-expressed as the noise estimate
    (x - sqrt(a) f) / max(sqrt(1-a), sigma_floor); this keeps the sampler's
    final move at alpha=1 equal to f exactly, so prediction error never gets
    amplified by the early high-noise levels.
    """

    def __init__(self, in_dim: int, hidden: int, rank: int, rng_seed: int,
                 activation: str = "tanh", aux_dim: int = 0,
                 w1: np.ndarray | None = None, w2: np.ndarray | None = None,
                 head: str = "noise", head_schedule: "AlphaSchedule | None" = None,
                 sigma_floor: float = 0.1):
        if activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        if head not in ("noise", "clean"):
            raise ValueError(f"unknown head {head!r}")
        if head == "clean" and head_schedule is None:
            raise ValueError("the clean-estimate head needs the noise schedule")
        self.in_dim = in_dim
        self.aux_dim = aux_dim
        self.activation = activation
        self.head = head
        self.head_schedule = head_schedule
        self.sigma_floor = sigma_floor
        zdim = in_dim + aux_dim + 2
        rng = stream(rng_seed, "toy.init")
        if w1 is None:
            w1 = rng.standard_normal((hidden, zdim)) / math.sqrt(zdim)
        if w2 is None:
            w2 = rng.standard_normal((in_dim, hidden)) / math.sqrt(hidden)
        if w1.shape != (hidden, zdim) or w2.shape != (in_dim, hidden):
            raise ValueError("base weight shapes do not match the declared dims")
        self.layer1 = LoraAdapter.init(w1, rank, rng)
        self.layer2 = LoraAdapter.init(w2, rank, rng)

    # -- trainable state ----------------------------------------------------
    def adapter_arrays(self) -> dict:
        return {
            "layer1.down": self.layer1.down, "layer1.up": self.layer1.up,
            "layer2.down": self.layer2.down, "layer2.up": self.layer2.up,
        }

    # -- evaluation ----------------------------------------------------------
    def _features(self, x: np.ndarray, tau: float, aux) -> np.ndarray:
        parts = [np.asarray(x, dtype=float).reshape(-1)]
        if self.aux_dim:
            if aux is None:
                raise ValueError("this predictor expects an auxiliary channel")
            parts.append(np.asarray(aux, dtype=float).reshape(-1))
        parts.append(np.array([tau, 1.0]))
        z = np.concatenate(parts)
        if z.size != self.layer1.base.shape[1]:
            raise ValueError(f"feature length {z.size} does not match the predictor")
        return z

    def forward_cached(self, x, tau: float, aux=None):
        """Flat output plus the cache needed to backpropagate through it."""
        z = self._features(x, tau, aux)
        a = self.layer1.apply(z)
        h = np.tanh(a) if self.activation == "tanh" else a
        net_out = self.layer2.apply(h)
        if self.head == "clean":
            alpha = self.head_schedule.alpha(tau)
            s = max(math.sqrt(1.0 - alpha), self.sigma_floor)
            out = (z[: self.in_dim] - math.sqrt(alpha) * net_out) / s
            factor = -math.sqrt(alpha) / s
        else:
            out = net_out
            factor = 1.0
        return out, (z, h, factor)

    def __call__(self, x, tau, condition=None, aux=None) -> np.ndarray:
        out, _ = self.forward_cached(x, tau, aux)
        return out.reshape(np.shape(x))

    def backward(self, cache, g_out: np.ndarray) -> dict:
        """Adapter gradients for one draw, given dLoss/dout."""
        z, h, factor = cache
        g_net = g_out * factor if factor != 1.0 else g_out
        w2_eff_t = self.layer2.base.T + self.layer2.down.T @ self.layer2.up.T
        g_h = w2_eff_t @ g_net
        g_a = g_h * (1.0 - h**2) if self.activation == "tanh" else g_h
        return {
            "layer2.up": np.outer(g_net, self.layer2.down @ h),
            "layer2.down": np.outer(self.layer2.up.T @ g_net, h),
            "layer1.up": np.outer(g_a, self.layer1.down @ z),
            "layer1.down": np.outer(self.layer1.up.T @ g_a, z),
        }


# ---------------------------------------------------------------------------
# in-context concatenation loss
# ---------------------------------------------------------------------------

def _ic_draws(u, u_hat, schedule, rng_seed: int, batch: int):
    """The seeded (tau, eps, eps_hat) mini-batch shared by loss and gradients."""
    draws = []
    for j in range(batch):
        rng = stream(rng_seed, "gen.ic", j)
        tau = float(rng.random())
        eps = rng.standard_normal(np.shape(u))
        eps_hat = rng.standard_normal(np.shape(u))
        a = schedule.alpha(tau)
        u_tau = math.sqrt(a) * u + math.sqrt(1 - a) * eps
        uh_tau = math.sqrt(a) * u_hat + math.sqrt(1 - a) * eps_hat
        draws.append((tau, eps, concat_pair(u_tau, uh_tau)))
    return draws


def ic_concat_loss(u: np.ndarray, u_hat: np.ndarray, predictor,
                   schedule: AlphaSchedule, rng_seed: int, batch: int = 8,
                   aux_noise: bool = False) -> float:
    """Noise-prediction loss on the target half of the concatenated pair.

    Per draw: noise u and u_hat to a uniform tau, concatenate, evaluate the
    predictor, cut off the condition half and take the squared error against
    the injected target noise; the mini-batch mean is returned.  With
    aux_noise=True the injected noise is also fed to the predictor as its
    auxiliary channel (training-fixture hook with a known optimum).
    """
    u = np.asarray(u, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if u.shape != u_hat.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_hat.shape}")
    total = 0.0
    for tau, eps, x in _ic_draws(u, u_hat, schedule, rng_seed, batch):
        out = predictor(x, tau, aux=eps) if aux_noise else predictor(x, tau)
        total += float(((eps - cutoff(out)) ** 2).sum())
    return total / batch


def ic_loss_and_grads(u: np.ndarray, u_hat: np.ndarray, predictor: ToyPredictor,
                      schedule: AlphaSchedule, rng_seed: int, batch: int = 8,
                      aux_noise: bool = False):
    """Loss plus analytic adapter gradients on the same seeded draws."""
    u = np.asarray(u, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if u.shape != u_hat.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_hat.shape}")
    half = u.size
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in predictor.adapter_arrays().items()}
    for tau, eps, x in _ic_draws(u, u_hat, schedule, rng_seed, batch):
        out, cache = predictor.forward_cached(x, tau, eps if aux_noise else None)
        resid = out[:half] - eps.reshape(-1)
        total += float((resid**2).sum())
        g_out = np.zeros_like(out)
        g_out[:half] = 2.0 * resid / batch
        for k, g in predictor.backward(cache, g_out).items():
            grads[k] += g
    return total / batch, grads


def ic_predictor(base: ToyPredictor, schedule: AlphaSchedule, noise_seed: int,
                 condition_mode: str = "noised"):
    """Deployment-time conditioning through the concatenation mechanism.

    Returns a predictor (v, tau, condition) that concatenates the condition
    behind v, runs the base predictor and cuts off the condition half.  In
    "noised" mode the condition is carried to the current level like a
    training draw (with a noise realisation fixed at construction); "clean"
    mode feeds the condition unscaled at every level, keeping its information
    available even at the pure-noise end.
    """
    if condition_mode not in ("noised", "clean"):
        raise ValueError(f"unknown condition mode {condition_mode!r}")
    rng = stream(noise_seed, "gen.cond")
    state = {}

    def predict(v, tau, condition):
        if condition is None:
            raise ValueError("conditioned predictor needs a condition tensor")
        cond = np.asarray(condition, dtype=float)
        if condition_mode == "noised":
            if "eps" not in state:
                state["eps"] = rng.standard_normal(np.shape(condition))
            a = schedule.alpha(tau)
            cond = math.sqrt(a) * cond + math.sqrt(1 - a) * state["eps"]
        return cutoff(base(concat_pair(v, cond), tau))

    return predict


# ---------------------------------------------------------------------------
# training and gradient verification
# ---------------------------------------------------------------------------

class TrainingDivergedError(RuntimeError):
    def __init__(self, trace):
        self.trace = np.asarray(trace)
        super().__init__(f"training diverged at step {len(trace)} with loss {trace[-1]:.3e}")


@dataclass
class TrainResult:
    trace: np.ndarray
    steps: int


def train_lora(predictor: ToyPredictor, dataset, steps: int, step_size: float,
               rng_seed: int, momentum: float = 0.9, batch: int = 8,
               aux_noise: bool = False,
               schedule: AlphaSchedule | None = None) -> TrainResult:
    """Momentum gradient descent on the in-context loss, adapters only.

    dataset is a sequence of (u, u_hat) pairs, visited cyclically; each step
    draws its mini-batch from a counter-derived stream, so the loss trace is
    bit-exact per seed.  A loss above 1e6 aborts with the trace attached.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    if schedule is None:
        schedule = cosine_schedule()
    arrays = predictor.adapter_arrays()
    velocity = {k: np.zeros_like(v) for k, v in arrays.items()}
    trace = []
    for step in range(steps):
        u, u_hat = dataset[step % len(dataset)]
        loss, grads = ic_loss_and_grads(u, u_hat, predictor, schedule,
                                        child_seed(rng_seed, "gen.train", step),
                                        batch=batch, aux_noise=aux_noise)
        trace.append(loss)
        if loss > 1e6:
            raise TrainingDivergedError(trace)
        for k, arr in arrays.items():
            velocity[k] = momentum * velocity[k] - step_size * grads[k]
            arr += velocity[k]
    return TrainResult(trace=np.asarray(trace), steps=steps)


def grad_check(predictor: ToyPredictor, u, u_hat, schedule: AlphaSchedule,
               rng_seed: int, h: float = 1e-5, batch: int = 8,
               aux_noise: bool = False) -> float:
    """Central finite differences over every adapter entry vs the analytic gradient.

    Returns the maximum relative error max |a - f| / max(|a|, |f|, 1e-6)
    across entries; the same seeded draws are used throughout.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"perturbation h must lie in [1e-6, 1e-3], got {h}")
    _, analytic = ic_loss_and_grads(u, u_hat, predictor, schedule, rng_seed,
                                    batch=batch, aux_noise=aux_noise)
    worst = 0.0
    for name, arr in predictor.adapter_arrays().items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            lp = ic_concat_loss(u, u_hat, predictor, schedule, rng_seed,
                                batch=batch, aux_noise=aux_noise)
            flat[i] = keep - h
            lm = ic_concat_loss(u, u_hat, predictor, schedule, rng_seed,
                                batch=batch, aux_noise=aux_noise)
            flat[i] = keep
            fd = (lp - lm) / (2.0 * h)
            an = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return worst


# ---------------------------------------------------------------------------
# constructed tasks
# ---------------------------------------------------------------------------

def make_grad_check_toy(rng_seed: int, dims: tuple = (2, 2, 2, 2), hidden: int = 12,
                        rank: int = 2) -> tuple:
    """Small random tanh predictor plus a (u, u_hat) pair for derivative checks."""
    n = int(np.prod(dims)) * 2  # concatenated input size
    pred = ToyPredictor(in_dim=n, hidden=hidden, rank=rank, rng_seed=rng_seed,
                        activation="tanh")
    rng = stream(rng_seed, "toy.data")
    u = rng.standard_normal((dims[0], *dims[1:]))
    u_hat = u + 0.3 * rng.standard_normal(u.shape)
    # nonzero up-factors so every gradient path is exercised
    for adapter in (pred.layer1, pred.layer2):
        adapter.up += 0.05 * rng.standard_normal(adapter.up.shape)
    return pred, u, u_hat


def make_identity_repair_task(rng_seed: int, dims: tuple = (2, 3, 2, 2),
                              hidden: int = 32, rank: int = 2,
                              n_pairs: int = 4, damage: float = 0.6):
    """Adapter-training task with a known optimum at exactly zero loss.

    The base network routes the auxiliary channel (the injected noise)
    straight to the target half of the output, then its output layer is
    damaged by a seeded rank-1 perturbation on that path.  The exact repair
    is a rank-1 update, inside the adapters' span, so training must drive
    the loss toward zero.  Pairs are (u, u): the condition equals the target.
    """
    n = int(np.prod(dims))
    in_dim = 2 * n
    if hidden < n:
        raise ValueError("hidden width must cover the auxiliary channel")
    zdim = in_dim + n + 2
    w1 = np.zeros((hidden, zdim))
    w1[:n, in_dim:in_dim + n] = np.eye(n)   # aux channel -> first n hidden units
    w2 = np.zeros((in_dim, hidden))
    w2[:n, :n] = np.eye(n)                  # hidden -> target half of the output
    rng = stream(rng_seed, "toy.repair")
    v = np.zeros(in_dim)
    v[:n] = rng.standard_normal(n)
    v *= damage / np.linalg.norm(v)
    w_vec = rng.standard_normal(hidden) / math.sqrt(hidden)
    w2 = w2 - np.outer(v, w_vec)
    pred = ToyPredictor(in_dim=in_dim, hidden=hidden, rank=rank, rng_seed=rng_seed,
                        activation="identity", aux_dim=n, w1=w1, w2=w2)
    pairs = []
    for i in range(n_pairs):
        u = stream(rng_seed, "toy.repair.data", i).standard_normal(dims)
        pairs.append((u, u.copy()))
    return pred, pairs


def make_refiner_predictor(dims: tuple, hidden: int, rank: int,
                           schedule: AlphaSchedule, rng_seed: int,
                           passthrough_scale: float = 0.2,
                           sigma_floor: float = 0.1,
                           activation: str = "tanh") -> ToyPredictor:
    """Clean-estimate predictor whose frozen base passes the condition through.

    Emulates a pre-trained conditional model: before any adapter training its
    clean-tensor estimate is (almost exactly) the condition half of the
    concatenated input, so sampling reproduces the corrupted tensor and the
    adapters only need to learn the correction toward the original.  The
    passthrough routes the condition half through the first n hidden units at
    a small scale to stay in the tanh's near-linear region; the remaining
    hidden units start with small random weights for the adapters to use.
    """
    n = int(np.prod(dims))
    if hidden < n:
        raise ValueError(f"hidden width {hidden} cannot pass through {n} features")
    in_dim = 2 * n
    zdim = in_dim + 2
    rng = stream(rng_seed, "toy.refiner")
    w1 = np.zeros((hidden, zdim))
    w1[:n, n:in_dim] = passthrough_scale * np.eye(n)
    if hidden > n:
        w1[n:, :] = rng.standard_normal((hidden - n, zdim)) * (0.2 / math.sqrt(zdim))
    w2 = np.zeros((in_dim, hidden))
    w2[:n, :n] = np.eye(n) / passthrough_scale
    return ToyPredictor(in_dim=in_dim, hidden=hidden, rank=rank, rng_seed=rng_seed,
                        activation=activation, w1=w1, w2=w2,
                        head="clean", head_schedule=schedule, sigma_floor=sigma_floor)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_ADAPTER_MAGIC = b"GSAD"


def _base_hash(predictor: ToyPredictor) -> bytes:
    h = hashlib.sha256()
    h.update(predictor.layer1.base.tobytes())
    h.update(predictor.layer2.base.tobytes())
    return h.digest()[:8]


def save_adapters(path, predictor: ToyPredictor) -> None:
    """Checkpoint the adapter factors (dims, rank, base hash, row-major values)."""
    with open(path, "wb") as fh:
        fh.write(_ADAPTER_MAGIC)
        fh.write(struct.pack("<H", 1))
        fh.write(_base_hash(predictor))
        arrays = predictor.adapter_arrays()
        fh.write(struct.pack("<H", len(arrays)))
        for name, arr in sorted(arrays.items()):
            blob = name.encode()
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<HH", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_adapters(path, predictor: ToyPredictor) -> None:
    """Restore adapter factors; the frozen base must hash-match the checkpoint."""
    arrays = predictor.adapter_arrays()
    with open(path, "rb") as fh:
        if fh.read(4) != _ADAPTER_MAGIC:
            raise ValueError("not an adapter checkpoint")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        if fh.read(8) != _base_hash(predictor):
            raise ValueError("checkpoint was trained on a different base predictor")
        (count,) = struct.unpack("<H", fh.read(2))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            rows, cols = struct.unpack("<HH", fh.read(4))
            data = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            if name not in arrays or arrays[name].shape != (rows, cols):
                raise ValueError(f"checkpoint entry {name!r} does not fit this predictor")
            arrays[name][...] = data


def save_trace(path, trace: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(np.asarray(trace)):
            fh.write(f"{i},{float(v)!r}\n")
