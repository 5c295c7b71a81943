import math

import numpy as np
import pytest

from gsclink import latent_codec as lc
from gsclink import planner
from gsclink.si_transport import AbstractChannel

FULL = planner.PlanConfig(b_blocks=85, block_bits=16_200, rate=0.5,
                          granularity=1792, q_candidates=(2, 3, 4, 5))
DESK_DIMS = (4, 4, 2, 3)
DESK = planner.PlanConfig(b_blocks=16, block_bits=64, rate=0.5,
                          granularity=32, q_candidates=(2, 3, 4, 5))


def exact_fits(m, q, budget_bits):
    # big-integer oracle: m*log2(q) <= budget  <=>  q**m <= 2**budget
    return q**m <= (1 << budget_bits)


class TestMStar:
    def test_reference_plan_values(self):
        assert planner.m_star(3, FULL) == 433_664
        assert planner.m_star(2, FULL) == 688_128
        assert planner.m_star(4, FULL) == 344_064

    def test_unit_granularity(self):
        cfg = planner.PlanConfig(b_blocks=85, block_bits=16_200, rate=0.5,
                                 granularity=1, q_candidates=(4,))
        assert planner.m_star(4, cfg) == 344_250

    def test_maximality_by_big_integer_oracle(self):
        for q in (2, 3, 4, 5):
            m = planner.m_star(q, FULL)
            assert m % FULL.granularity == 0
            assert exact_fits(m, q, FULL.budget_bits)
            assert not exact_fits(m + FULL.granularity, q, FULL.budget_bits)

    def test_nonincreasing_in_q(self):
        values = [planner.m_star(q, FULL) for q in (2, 3, 4, 5, 8, 16)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_infeasible_budget_reported(self):
        tiny = planner.PlanConfig(b_blocks=1, block_bits=4, rate=0.5,
                                  granularity=8, q_candidates=(2,))
        with pytest.raises(planner.InfeasiblePlanError):
            planner.m_star(2, tiny)


class TestJEstimate:
    def data(self):
        return lc.synthetic_dataset(4, DESK_DIMS, rng_seed=2, corr=0.9)

    def test_quantization_floor_at_high_q(self):
        # error-free channel, Q = 64 override: distortion is pure quantizer
        # floor, far below the signal power
        cfg = planner.PlanConfig(b_blocks=16, block_bits=128, rate=0.5,
                                 granularity=32, q_candidates=(64,))
        data = self.data()
        m = planner.m_star(64, cfg)
        je = planner.j_estimate(64, m, cfg, AbstractChannel(fixed_bler=0.0),
                                data, n_trials=8, rng_seed=1)
        power = float(np.mean([np.mean(u**2) for u in data]))
        assert je.j_mean < 1e-3 * power

    def test_full_erasure_gives_prior_variance(self):
        # full erasure reconstructs every feature as the dataset channel mean,
        # so J equals the dataset variance about those means exactly
        data = self.data()
        m = planner.m_star(3, DESK)
        je = planner.j_estimate(3, m, DESK, AbstractChannel(fixed_bler=1.0),
                                data, n_trials=8, rng_seed=1)
        channel_mean = np.mean([u.reshape(-1, 3) for u in data], axis=(0, 1))
        expected = float(np.mean([np.mean((u - channel_mean) ** 2) for u in data]))
        assert je.j_mean == pytest.approx(expected, rel=1e-9)

    def test_bit_identical_repeats(self):
        data = self.data()
        m = planner.m_star(3, DESK)
        ch = AbstractChannel(fixed_bler=0.4)
        a = planner.j_estimate(3, m, DESK, ch, data, n_trials=16, rng_seed=9)
        b = planner.j_estimate(3, m, DESK, ch, data, n_trials=16, rng_seed=9)
        assert a == b

    def test_infeasible_pair_rejected(self):
        with pytest.raises(planner.InfeasiblePlanError):
            planner.j_estimate(3, 10**6, DESK, AbstractChannel(fixed_bler=0.0),
                               self.data(), n_trials=2, rng_seed=0)

    def test_j_nonincreasing_in_m_without_erasures(self):
        data = self.data()
        ch = AbstractChannel(fixed_bler=0.0)
        grid = [32, 64, 128]
        js = [planner.j_estimate(3, m, DESK, ch, data, n_trials=4, rng_seed=3).j_mean
              for m in grid]
        assert all(a >= b - 1e-12 for a, b in zip(js, js[1:]))


class TestQStar:
    def data(self):
        return lc.synthetic_dataset(4, DESK_DIMS, rng_seed=2, corr=0.9)

    def test_single_candidate(self):
        cfg = planner.PlanConfig(b_blocks=16, block_bits=64, rate=0.5,
                                 granularity=32, q_candidates=(3,))
        res = planner.q_star(cfg, AbstractChannel(fixed_bler=0.2), self.data(),
                             n_trials=8, rng_seed=4)
        assert res.q_star == 3
        assert res.m_star == planner.m_star(3, cfg)

    def test_full_table_emitted(self, tmp_path):
        res = planner.q_star(DESK, AbstractChannel(fixed_bler=0.3), self.data(),
                             n_trials=12, rng_seed=4, early_stop=False)
        assert sorted(e.q for e in res.entries) == [2, 3, 4, 5]
        assert all(e.trials == 12 for e in res.entries)
        path = tmp_path / "plan.csv"
        planner.write_plan_csv(path, res)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "q,m_star,j_mean,ci_low,ci_high,chosen"
        assert len(lines) == 5
        assert sum(int(l.split(",")[-1]) for l in lines[1:]) == 1

    def test_infeasible_candidates_reported(self):
        cfg = planner.PlanConfig(b_blocks=1, block_bits=12, rate=0.5,
                                 granularity=4, q_candidates=(2, 64))
        res = planner.q_star(cfg, AbstractChannel(fixed_bler=0.0), self.data()[:1],
                             n_trials=2, rng_seed=0)
        assert res.q_star == 2
        bad = res.entry(64)
        assert not bad.feasible and math.isnan(bad.j_mean)

    def test_argmin_invariant_to_positive_scaling(self):
        # scaling every tensor scales all J estimates by the same factor
        data = self.data()
        scaled = [3.0 * u for u in data]
        ch = AbstractChannel(fixed_bler=0.3)
        a = planner.q_star(DESK, ch, data, n_trials=12, rng_seed=4, early_stop=False)
        b = planner.q_star(DESK, ch, scaled, n_trials=12, rng_seed=4, early_stop=False)
        assert a.q_star == b.q_star
        for qa, qb in zip(a.entries, b.entries):
            assert qb.j_mean == pytest.approx(9.0 * qa.j_mean, rel=1e-9)

    def test_deterministic(self):
        data = self.data()
        ch = AbstractChannel(fixed_bler=0.5)
        a = planner.q_star(DESK, ch, data, n_trials=16, rng_seed=6)
        b = planner.q_star(DESK, ch, data, n_trials=16, rng_seed=6)
        assert a.q_star == b.q_star and a.m_star == b.m_star
        assert [(e.q, e.j_mean) for e in a.entries] == [(e.q, e.j_mean) for e in b.entries]
