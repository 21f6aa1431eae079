"""Energy arrivals and the feasible set of transmission allocations.

Feasibility is expressed in consumed energy ``J_t = a_t * sigma_sq_t``:
every prefix must fit the energy harvested so far (causality) and the final
slot must leave the battery empty (total equality).  Slots with zero signal
variance cannot consume energy, so the region works on the "active" slots
only; arrivals landing strictly after the last active slot can never be
spent and are excluded from the equality budget (``effective_total``).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidConfig

__all__ = ["EnergyTrace", "FeasibleRegion", "FeasibilityReport", "check_feasible"]

# relative slack allowed on the energy constraints
SLACK_RTOL = 1e-9
# slots whose variance falls below this fraction of the max are frozen out
VAR_RTOL = 1e-12


class EnergyTrace:
    """Nonnegative per-slot energy arrivals."""

    def __init__(self, e):
        e = np.ascontiguousarray(e, dtype=np.float64)
        if e.ndim != 1 or e.shape[0] < 1:
            raise DimensionMismatch("energy trace must be a nonempty vector")
        if np.min(e) < 0.0:
            raise InvalidConfig(f"negative arrival {np.min(e):.3e}")
        self.e = e
        self.cumulative = np.cumsum(e)

    @property
    def n(self):
        return self.e.shape[0]

    @property
    def total(self):
        return float(self.cumulative[-1])


class FeasibleRegion:
    """Allocations compatible with an arrival trace.

    ``mode='causal'`` keeps every prefix constraint plus the total equality;
    ``mode='total'`` keeps only the total equality (the relaxed region).
    """

    def __init__(self, sigma_sq, energy, mode="causal"):
        sigma_sq = np.ascontiguousarray(sigma_sq, dtype=np.float64)
        if not isinstance(energy, EnergyTrace):
            energy = EnergyTrace(energy)
        if sigma_sq.ndim != 1 or sigma_sq.shape[0] != energy.n:
            raise DimensionMismatch(
                f"variances {sigma_sq.shape} do not match arrivals ({energy.n},)"
            )
        if mode not in ("causal", "total"):
            raise InvalidConfig(f"unknown mode {mode!r}")
        self.sigma_sq = sigma_sq
        self.energy = energy
        self.mode = mode
        self.n = energy.n

        top = float(np.max(sigma_sq, initial=0.0))
        self.active = sigma_sq > VAR_RTOL * top if top > 0.0 else np.zeros(self.n, bool)
        self.idx_active = np.flatnonzero(self.active)
        self.m = int(self.idx_active.size)

        if self.m:
            self.weights = np.ascontiguousarray(sigma_sq[self.idx_active])
            # cumulative arrivals seen at each active slot; the last one is the
            # spendable total, the earlier ones the prefix budgets
            cum_at_active = energy.cumulative[self.idx_active]
            self.caps = np.ascontiguousarray(cum_at_active[:-1])
            self.effective_total = float(cum_at_active[-1])
            # arrivals aggregated onto the active slot that can first spend them
            self.arrivals_reduced = np.diff(np.concatenate(([0.0], cum_at_active)))
        else:
            self.weights = np.empty(0)
            self.caps = np.empty(0)
            self.effective_total = 0.0
            self.arrivals_reduced = np.empty(0)

    @property
    def spendable(self):
        return self.effective_total > 0.0

    def embed(self, a_reduced):
        """Expand a reduced (active-slot) allocation to the full horizon."""
        a = np.zeros(self.n)
        a[self.idx_active] = a_reduced
        return a

    def reduce(self, a_full):
        return np.ascontiguousarray(np.asarray(a_full, dtype=np.float64)[self.idx_active])

    def reduced_caps(self):
        """Prefix budgets for the reduced problem ('total' mode has none)."""
        return self.caps if self.mode == "causal" else np.empty(0)

    def greedy_reduced(self):
        """Spend-on-arrival allocation in reduced coordinates (always feasible)."""
        return np.ascontiguousarray(self.arrivals_reduced / self.weights)

    def window(self, lo, hi):
        """Sub-region over full slots ``lo..hi-1`` with that window's arrivals only."""
        if not 0 <= lo < hi <= self.n:
            raise DimensionMismatch(f"bad window [{lo}, {hi})")
        return FeasibleRegion(
            self.sigma_sq[lo:hi], EnergyTrace(self.energy.e[lo:hi]), mode=self.mode
        )


@dataclass
class FeasibilityReport:
    feasible: bool
    worst_prefix_violation: float  # energy units, causal mode only
    total_gap: float  # signed: consumed - budget
    min_alloc: float

    @property
    def worst_violation(self):
        return max(self.worst_prefix_violation, abs(self.total_gap))


def check_feasible(alloc, region):
    """Check an allocation against a region; slack ``1e-9 * effective_total``."""
    a = np.asarray(alloc.a if hasattr(alloc, "a") else alloc, dtype=np.float64)
    if a.shape != (region.n,):
        raise DimensionMismatch(f"allocation shape {a.shape}, region n={region.n}")
    j = a * region.sigma_sq
    cum_j = np.cumsum(j)
    tol = SLACK_RTOL * region.effective_total
    min_alloc = float(np.min(a))

    if region.mode == "causal":
        worst_prefix = float(
            np.max(cum_j - region.energy.cumulative, initial=0.0)
        )
    else:
        worst_prefix = 0.0
    total_gap = float(cum_j[-1] - region.effective_total) if region.n else 0.0

    feasible = (
        min_alloc >= -1e-12
        and worst_prefix <= tol
        and abs(total_gap) <= tol
    )
    return FeasibilityReport(feasible, worst_prefix, total_gap, min_alloc)
