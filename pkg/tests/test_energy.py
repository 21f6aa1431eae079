"""Arrival traces, the causal polytope, and feasibility reports."""

import numpy as np
import pytest

from eh_allocate.energy import EnergyTrace, FeasibleRegion, check_feasible
from eh_allocate.errors import DimensionMismatch, InvalidConfig
from eh_allocate.estimator import PowerAllocation


def test_trace_cumulative():
    tr = EnergyTrace([1.0, 0.0, 2.0, 0.5])
    np.testing.assert_allclose(tr.cumulative, [1.0, 1.0, 3.0, 3.5])
    assert tr.total == pytest.approx(3.5)
    assert tr.n == 4


def test_trace_rejects_negative():
    with pytest.raises(InvalidConfig):
        EnergyTrace([1.0, -0.1])


class TestRegion:
    def test_all_active(self):
        region = FeasibleRegion(np.ones(3), EnergyTrace([1.0, 0.0, 2.0]))
        assert region.m == 3
        np.testing.assert_allclose(region.reduced_caps(), [1.0, 1.0])
        assert region.effective_total == pytest.approx(3.0)
        assert region.spendable

    def test_zero_variance_slots_are_skipped(self):
        # energy landing on a dead slot is banked for the next live one
        sigma_sq = np.array([1.0, 0.0, 2.0, 0.0])
        region = FeasibleRegion(sigma_sq, EnergyTrace([1.0, 5.0, 0.0, 3.0]))
        assert region.m == 2
        np.testing.assert_array_equal(region.idx_active, [0, 2])
        np.testing.assert_allclose(region.reduced_caps(), [1.0])
        # trailing arrival can never be spent on a live slot
        assert region.effective_total == pytest.approx(6.0)

    def test_embed_reduce_roundtrip(self):
        sigma_sq = np.array([1.0, 0.0, 2.0])
        region = FeasibleRegion(sigma_sq, EnergyTrace([1.0, 0.0, 1.0]))
        full = region.embed(np.array([0.5, 0.25]))
        np.testing.assert_allclose(full, [0.5, 0.0, 0.25])
        np.testing.assert_allclose(region.reduce(full), [0.5, 0.25])

    def test_total_mode_has_no_prefix_caps(self):
        region = FeasibleRegion(np.ones(3), EnergyTrace([0.0, 0.0, 3.0]), mode="total")
        assert region.reduced_caps().shape == (0,)
        assert region.effective_total == pytest.approx(3.0)

    def test_window_subregion(self):
        region = FeasibleRegion(np.ones(4), EnergyTrace([1.0, 2.0, 0.0, 1.0]))
        sub = region.window(1, 3)
        assert sub.n == 2
        np.testing.assert_allclose(sub.effective_total, 2.0)

    def test_greedy_reduced(self):
        region = FeasibleRegion(np.array([2.0, 1.0]), EnergyTrace([1.0, 3.0]))
        np.testing.assert_allclose(region.greedy_reduced(), [0.5, 3.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            FeasibleRegion(np.ones(3), EnergyTrace([1.0, 1.0]))


class TestFeasibility:
    def test_feasible_allocation(self):
        region = FeasibleRegion(np.ones(3), EnergyTrace([1.0, 0.0, 2.0]))
        rep = check_feasible(PowerAllocation(np.array([0.5, 0.5, 2.0]), np.ones(3)), region)
        assert rep.feasible
        assert rep.worst_violation == pytest.approx(0.0)

    def test_prefix_violation(self):
        region = FeasibleRegion(np.ones(3), EnergyTrace([1.0, 0.0, 2.0]))
        rep = check_feasible(PowerAllocation(np.array([2.0, 0.0, 1.0]), np.ones(3)), region)
        assert not rep.feasible
        assert rep.worst_prefix_violation == pytest.approx(1.0)

    def test_total_shortfall(self):
        # spending less than everything also fails (final equality)
        region = FeasibleRegion(np.ones(2), EnergyTrace([1.0, 1.0]))
        rep = check_feasible(PowerAllocation(np.array([1.0, 0.5]), np.ones(2)), region)
        assert not rep.feasible
        assert rep.total_gap == pytest.approx(-0.5)

    def test_weighted_prefixes(self):
        # sigma^2 = 2 means a = 1 consumes 2 units
        region = FeasibleRegion(np.array([2.0, 2.0]), EnergyTrace([2.0, 2.0]))
        good = check_feasible(PowerAllocation(np.array([1.0, 1.0]), np.array([2.0, 2.0])), region)
        bad = check_feasible(PowerAllocation(np.array([1.5, 0.5]), np.array([2.0, 2.0])), region)
        assert good.feasible
        assert not bad.feasible
