"""Schedules, Nesterov SGD and bootstrapping"""
import math

import numpy as np
import pytest

from src.core.network import ParamLayout, ParamVector
from src.core.optim import Schedule, ScheduleKind, SgdState, bootstrap_swap, lr_at, sgd_step
from src.exceptions import ContractError, InputError


def vector(values):
    values = np.asarray(values, dtype=np.float64)
    return ParamVector(values, ParamLayout.from_shapes([("fc0", "W", values.shape)]))


class TestWarmupCosine:
    """Warmup ramp followed by cosine annealing to zero"""

    schedule = Schedule(ScheduleKind.WARMUP_COSINE, 0.1, total_epochs=10, steps_per_epoch=10,
                        warmup_epochs=2)

    def test_first_warmup_step(self):
        assert lr_at(self.schedule, 0) == pytest.approx(0.1 / 20)

    def test_last_warmup_step_reaches_base(self):
        assert lr_at(self.schedule, 19) == pytest.approx(0.1)

    def test_cosine_starts_at_base(self):
        assert lr_at(self.schedule, 20) == pytest.approx(0.1)

    def test_cosine_midpoint(self):
        assert lr_at(self.schedule, 60) == pytest.approx(0.05)

    def test_cosine_last_step(self):
        expected = 0.05 * (1 + math.cos(math.pi * 79 / 80))
        assert lr_at(self.schedule, 99) == pytest.approx(expected)

    def test_monotone_after_warmup(self):
        rates = [lr_at(self.schedule, s) for s in range(20, 100)]
        assert all(b <= a for a, b in zip(rates, rates[1:]))

    def test_out_of_budget(self):
        with pytest.raises(ContractError):
            lr_at(self.schedule, 100)

    def test_no_warmup(self):
        schedule = Schedule(ScheduleKind.WARMUP_COSINE, 0.2, 5, 4)
        assert lr_at(schedule, 0) == pytest.approx(0.2)


class TestStepAndConstant:

    def test_step_milestones(self):
        schedule = Schedule(ScheduleKind.STEP, 0.1, 10, 5, step_milestones=(3, 6), step_factor=0.2)
        assert lr_at(schedule, 14) == pytest.approx(0.1)
        assert lr_at(schedule, 15) == pytest.approx(0.02)
        assert lr_at(schedule, 30) == pytest.approx(0.004)

    def test_constant(self):
        schedule = Schedule(ScheduleKind.CONSTANT, 0.03, 4, 5)
        assert {lr_at(schedule, s) for s in range(20)} == {0.03}

    def test_freeze_holds_rate(self):
        schedule = Schedule(ScheduleKind.WARMUP_COSINE, 0.1, 10, 10).frozen_at(39)
        frozen = lr_at(schedule, 39)
        assert lr_at(schedule, 40) == frozen
        assert lr_at(schedule, 99) == frozen
        assert lr_at(schedule, 10) > frozen

    def test_milestones_must_increase(self):
        with pytest.raises(InputError):
            Schedule(ScheduleKind.STEP, 0.1, 10, 5, step_milestones=(6, 3))

    def test_warmup_must_fit(self):
        with pytest.raises(InputError):
            Schedule(ScheduleKind.WARMUP_COSINE, 0.1, 3, 5, warmup_epochs=3)


class TestSgd:

    def test_nesterov_two_steps(self):
        p = vector([1.0, -2.0])
        g = vector([0.5, 0.25])
        state = SgdState.for_params(p, momentum=0.9, weight_decay=0.1)

        p1 = sgd_step(p, g, state, lr=0.1)
        g0 = g.values + 0.1 * p.values
        buf = g0.copy()
        expected1 = p.values - 0.1 * (g0 + 0.9 * buf)
        np.testing.assert_allclose(p1.values, expected1, atol=1e-15)

        p2 = sgd_step(p1, g, state, lr=0.1)
        g1 = g.values + 0.1 * expected1
        buf = 0.9 * buf + g1
        np.testing.assert_allclose(p2.values, expected1 - 0.1 * (g1 + 0.9 * buf), atol=1e-15)

    def test_plain_momentum(self):
        p = vector([0.0])
        state = SgdState.for_params(p, momentum=0.5, nesterov=False)
        p = sgd_step(p, vector([1.0]), state, lr=1.0)
        p = sgd_step(p, vector([1.0]), state, lr=1.0)
        np.testing.assert_allclose(p.values, [-2.5])

    def test_layout_mismatch(self):
        p = vector([1.0, 2.0])
        state = SgdState.for_params(p)
        with pytest.raises(InputError):
            sgd_step(p, vector([1.0]), state, 0.1)

    def test_bad_momentum(self):
        with pytest.raises(InputError):
            SgdState.for_params(vector([1.0]), momentum=1.0)


class TestBootstrap:

    def test_swap_resets_momentum(self):
        p = vector([1.0, 2.0])
        state = SgdState.for_params(p)
        sgd_step(p, vector([1.0, 1.0]), state, 0.1)
        swapped = bootstrap_swap(p, vector([3.0, 4.0]), state)
        np.testing.assert_array_equal(swapped.values, [3.0, 4.0])
        np.testing.assert_array_equal(state.momentum_buffer.values, 0.0)

    def test_swap_keeps_momentum_when_asked(self):
        p = vector([1.0])
        state = SgdState.for_params(p)
        sgd_step(p, vector([1.0]), state, 0.1)
        bootstrap_swap(p, vector([0.0]), state, reset_momentum=False)
        assert state.momentum_buffer.values[0] != 0.0

    def test_swap_returns_copy(self):
        ema = vector([3.0])
        swapped = bootstrap_swap(vector([1.0]), ema, SgdState.for_params(ema))
        swapped.values[0] = 9.0
        assert ema.values[0] == 3.0
