"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 4 asserts both halves of the erasure-regime quantizer ordering as
stated.  With the calibrated quantizer and mean imputation the per-feature
distortion satisfies J(p) = p * prior + (1 - p) * J(0), so the candidate
ordering is mathematically independent of the erasure rate: the half
requiring the ordering to favour Q=2 at high erasure cannot hold together
with the zero-erasure reversal.  The high-erasure half is expected to fail;
it is kept faithful to the stated criterion rather than weakened.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy import integrate

import gsclink.harness as harness
from gsclink import channel as ch
from gsclink import generative as gen
from gsclink import latent_codec, ldpc, planner
from gsclink.rng import child_seed, stream
from gsclink.si_transport import AbstractChannel

SEED = 20260810


def _report(name, ok, detail, t0):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] {name}: {status} ({detail}; {time.time() - t0:.1f}s)")
    assert ok, f"{name}: {detail}"


# -- 1 -----------------------------------------------------------------------

def test_criterion1_shadowed_rician_validity():
    t0 = time.time()
    fp = ch.FadingParams(m=2, b=0.063, omega=0.0005)
    total, _ = integrate.quad(lambda z: ch.pdf_gain(fp, 1.0, z), 0, np.inf, limit=200)
    norm_ok = abs(total - 1.0) <= 1e-6
    eta = 1.7
    samples = ch.sample_gain(fp, eta, rng_seed=SEED, n=1_000_000)
    mean_ok = abs(samples.mean() - eta * 0.1265) <= 0.01 * eta * 0.1265
    elapsed_ok = time.time() - t0 < 30.0
    _report("criterion 1 (shadowed-Rician validity)",
            norm_ok and mean_ok and elapsed_ok,
            f"integral={total:.9f}, sample mean={samples.mean():.6f} "
            f"vs {eta * 0.1265:.6f}", t0)


# -- 2 -----------------------------------------------------------------------

def test_criterion2_planner_reproduction():
    t0 = time.time()
    cfg = planner.PlanConfig(b_blocks=85, block_bits=16_200, rate=0.5,
                             granularity=1792, q_candidates=(2, 3, 4, 5))
    got = {q: planner.m_star(q, cfg) for q in (2, 3, 4)}
    ok = (got[3] == 433_664 and got[2] == 688_128 and got[4] == 344_064
          and time.time() - t0 < 1.0)
    _report("criterion 2 (planner reproduction)", ok, f"M*={got}", t0)


# -- 3 -----------------------------------------------------------------------

def _crossing(curve, target):
    """Gamma where the log-odds-interpolated curve crosses the target BLER."""
    g = curve.gammas_db
    b = curve.blers
    for i in range(len(g) - 1):
        if b[i] >= target >= b[i + 1]:
            lo = math.log(max(b[i], 1e-12) / (1 - min(b[i], 1 - 1e-12)))
            hi = math.log(max(b[i + 1], 1e-12) / (1 - min(b[i + 1], 1 - 1e-12)))
            t = math.log(target / (1 - target))
            w = (t - lo) / (hi - lo) if hi != lo else 0.5
            return g[i] + w * (g[i + 1] - g[i])
    return None


def test_criterion3_cliff_effect():
    t0 = time.time()
    code = ldpc.generate_regular_code(4096, 3, 6, rng_seed=SEED)
    grid = [0.25 * k for k in range(1, 13)]
    points = [ldpc.estimate_bler(code, g, 2000, rng_seed=SEED) for g in grid]
    curve = ldpc.BlerCurve(code_id=code.code_id, points=points)
    monotone = all(b.ci_low <= a.ci_high for a, b in zip(points, points[1:]))
    g90 = _crossing(curve, 0.9)
    g10 = _crossing(curve, 0.1)
    gap = None if (g90 is None or g10 is None) else g10 - g90
    ok = monotone and gap is not None and gap < 2.5 and time.time() - t0 < 600
    _report("criterion 3 (cliff effect)", ok,
            f"BLER 0.9 at {g90 and round(g90, 3)} dB, 0.1 at "
            f"{g10 and round(g10, 3)} dB, gap={gap and round(gap, 3)} dB, "
            f"CI-monotone={monotone}", t0)


# -- 4 -----------------------------------------------------------------------

def _j_table(forced_bler, n_trials):
    cfg = planner.PlanConfig(b_blocks=85, block_bits=16_200, rate=0.5,
                             granularity=1792, q_candidates=(2, 4, 5))
    data = latent_codec.synthetic_dataset(3, (16, 16, 7, 128),
                                          rng_seed=child_seed(SEED, "acc4"))
    chan = AbstractChannel(fixed_bler=forced_bler)
    return {q: planner.j_estimate(q, planner.m_star(q, cfg), cfg, chan, data,
                                  n_trials=n_trials, rng_seed=SEED)
            for q in (2, 4, 5)}


def _paired_below(a, b):
    """True when mean(a - b) < 0 with the 95% paired interval excluding 0."""
    diff = a.errors - b.errors
    half = 1.96 * diff.std(ddof=1) / math.sqrt(diff.size)
    return diff.mean() + half < 0.0


def test_criterion4a_high_erasure_prefers_q2():
    t0 = time.time()
    table = _j_table(0.8, n_trials=120)
    ok = (_paired_below(table[2], table[4]) and _paired_below(table[2], table[5])
          and time.time() - t0 < 300)
    _report("criterion 4a (J(2) smallest under BLER 0.8, CI-separated)", ok,
            "J = " + ", ".join(f"Q{q}:{table[q].j_mean:.5f}" for q in (2, 4, 5)), t0)


def test_criterion4b_zero_erasure_reversal():
    t0 = time.time()
    table = _j_table(0.0, n_trials=12)
    ok = (_paired_below(table[4], table[2]) and _paired_below(table[5], table[2])
          and time.time() - t0 < 300)
    _report("criterion 4b (ordering reverses at BLER 0)", ok,
            "J = " + ", ".join(f"Q{q}:{table[q].j_mean:.6f}" for q in (2, 4, 5)), t0)


# -- 5 -----------------------------------------------------------------------

def test_criterion5_sampler_identity():
    t0 = time.time()
    schedule = gen.cosine_schedule(50)
    worst = 0.0
    for i in range(100):
        rng = stream(SEED, "acc5", i)
        u = rng.standard_normal((3, 4, 2, 2))
        tau = float(rng.uniform(0.05, 1.0))
        v_tau, eps = gen.forward_noise(u, tau, schedule, rng)
        v0 = gen.ddim_step(v_tau, tau, 0.0, schedule, lambda v, t, c: eps)
        worst = max(worst, float(np.linalg.norm(v0 - u) / np.linalg.norm(u)))
    rng = stream(SEED, "acc5.cut")
    x = rng.standard_normal((2, 3, 2, 2))
    y = rng.standard_normal((2, 3, 2, 2))
    cut_ok = np.array_equal(gen.cutoff(gen.concat_pair(x, y)), x)
    ok = worst <= 1e-6 and cut_ok and time.time() - t0 < 5.0
    _report("criterion 5 (sampler identity)", ok,
            f"max relative error {worst:.2e}, cut-off exact={cut_ok}", t0)


# -- 6 -----------------------------------------------------------------------

def test_criterion6_adapter_gradients_and_training():
    t0 = time.time()
    schedule = gen.cosine_schedule(50)
    pred, u, u_hat = gen.make_grad_check_toy(SEED)
    err = gen.grad_check(pred, u, u_hat, schedule,
                         rng_seed=child_seed(SEED, "acc6"), h=1e-5)
    task_pred, pairs = gen.make_identity_repair_task(SEED)
    result = gen.train_lora(task_pred, pairs, steps=500, step_size=5e-3,
                            rng_seed=child_seed(SEED, "acc6.train"),
                            aux_noise=True, schedule=schedule)
    ok = err < 1e-4 and result.trace[-1] < 1e-3 and time.time() - t0 < 120
    _report("criterion 6 (adapter gradients)", ok,
            f"max grad rel err {err:.2e}, training loss {result.trace[-1]:.2e} "
            f"after 500 steps", t0)


# -- 7 -----------------------------------------------------------------------

def test_criterion7_end_to_end_monotonicity(tmp_path):
    t0 = time.time()
    cfg = harness.default_config()
    cfg["out_dir"] = str(tmp_path)
    manifest = harness.cmd_e2e_sim(cfg)
    rows = (tmp_path / "e2e_metrics.csv").read_text().strip().splitlines()[1:]
    by_key: dict = {}
    for line in rows:
        _, d_km, video, refined, vpl, _, _ = line.split(",")
        by_key.setdefault((float(d_km), int(refined)), []).append(float(vpl))
    distances = sorted({k[0] for k in by_key})
    plain_means = [np.mean(by_key[(d, 0)]) for d in distances]
    monotone = all(b >= a - 1e-12 for a, b in zip(plain_means, plain_means[1:]))
    d_default = cfg["link"]["d_ts_km"]
    refined_mean = float(np.mean(by_key[(d_default, 1)]))
    plain_mean = float(np.mean(by_key[(d_default, 0)]))
    improved = refined_mean <= plain_mean * (1 + 1e-9)
    ok = monotone and improved and time.time() - t0 < 900
    _report("criterion 7 (end-to-end monotonicity)", ok,
            "plain VPL by d: " + ", ".join(f"{m:.4f}" for m in plain_means)
            + f"; at d={d_default:g}: refined {refined_mean:.4f} vs plain "
            f"{plain_mean:.4f}", t0)


# -- 8 -----------------------------------------------------------------------

@pytest.mark.skipif("GSCLINK_DVBS2_ALIST" not in os.environ,
                    reason="set GSCLINK_DVBS2_ALIST to the 16200 R=1/2 alist "
                           "to run the genuine-code reproduction check")
def test_criterion8_dvbs2_bler_reproduction():
    t0 = time.time()
    code = ldpc.load_alist(os.environ["GSCLINK_DVBS2_ALIST"])
    assert code.n == 16_200
    assert abs(code.rate - 0.5) < 0.01
    grid = [0.0, 0.4, 0.8, 1.2, 1.6, 2.0, 2.4]
    points = [ldpc.estimate_bler(code, g, 200, rng_seed=SEED) for g in grid]
    curve = ldpc.BlerCurve(code_id=code.code_id, points=points)
    fp = ch.FadingParams(m=2, b=0.063, omega=0.0005)
    results = {}
    for d_km, target in ((400.0, 0.24), (1000.0, 0.81)):
        budget = harness._budget(harness.default_config(), d_km)
        model = ch.RelaySnrModel(budget, fp)
        gammas = model.draw_db(stream(SEED, "acc8", int(d_km)), 20_000)
        bler = float(np.mean([ldpc.bler_lookup(curve, g) for g in gammas]))
        results[d_km] = (bler, abs(bler - target) <= 0.10)
    ok = all(v[1] for v in results.values())
    _report("criterion 8 (DVB-S2 reproduction)", ok, f"measured {results}", t0)


# -- 9 -----------------------------------------------------------------------

def _small_cfg(out_dir):
    cfg = harness.default_config()
    cfg["out_dir"] = str(out_dir)
    cfg["snr_cdf"]["samples"] = 400
    cfg["sweep"]["distances_km"] = [400.0, 1000.0]
    cfg["code"].update({"n": 512, "wc": 3, "wr": 6})
    cfg["bler"].update({"grid_db": [0.5, 2.0, 3.5], "trials": 50})
    cfg["latent"].update({"h": 4, "w": 4, "f": 2, "c": 3, "dataset_size": 3})
    cfg["layout"].update({"b_blocks": 16, "block_bits": 64})
    cfg["planner"].update({"granularity": 32, "trials": 8})
    cfg["e2e"].update({"videos": 3})
    cfg["e2e"]["refine"].update({"train_steps": 100, "train_videos": 8,
                                 "check_every": 50})
    return cfg


def test_criterion9_byte_identical_reruns(tmp_path):
    t0 = time.time()
    commands = [("snr-cdf", harness.cmd_snr_cdf),
                ("bler-curve", harness.cmd_bler_curve),
                ("optimize-qm", harness.cmd_optimize_qm),
                ("e2e-sim", harness.cmd_e2e_sim),
                ("sampler-check", lambda c: harness.cmd_sampler_check(c)[0])]
    mismatches = []
    for name, func in commands:
        outs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            func(_small_cfg(out))
            blobs = {}
            for root, _, files in os.walk(out):
                for f in sorted(files):
                    if f.endswith(".csv") or f.endswith(".txt"):
                        rel = os.path.relpath(os.path.join(root, f), out)
                        blobs[rel] = open(os.path.join(root, f), "rb").read()
            outs.append(blobs)
        if outs[0] != outs[1]:
            mismatches.append(name)
    ok = not mismatches
    _report("criterion 9 (determinism)", ok,
            f"byte-identical for all subcommands" if ok else
            f"mismatch in {mismatches}", t0)
