"""Allocation policies: exact constructions and window heuristics.

Closed-form policies (`most_majorized`, `greedy_policy`, `parameter_greedy`,
the static-channel equidistant sampler) return a `PowerAllocation`; the
window heuristics and the fading-channel sampler run the separable solver on
subproblems and return a full `PolicyResult`.  `run_policy` dispatches on the
string ids used by the harness and the CLI: ``optimal``, ``relaxed``,
``greedy``, ``most-majorized``, ``param-greedy``, ``equidistant``,
``upper-<lw>``, ``lower-<lw>`` (``<lw>`` an integer or ``n``).
"""

import re
import time
from dataclasses import dataclass

import numpy as np

from .energy import EnergyTrace, FeasibleRegion
from .errors import (
    DelayOutOfRange,
    DimensionMismatch,
    FlatSpectrumRequired,
    InfeasibleRegion,
    InvalidConfig,
    PlanInvalid,
    RankError,
    WindowError,
    ZeroVarianceWithEnergy,
)
from .estimator import PowerAllocation, mmse_sampled_lowpass, mmse_woodbury
from .solver import (
    DiagObjective,
    PolicyResult,
    SolverDiagnostics,
    solve_optimal,
    solve_relaxed,
    solve_window_problem,
)

__all__ = [
    "POLICY_ID_PATTERN",
    "PolicyResult",
    "SamplingPlan",
    "equidistant_policy",
    "greedy_policy",
    "is_majorized",
    "most_majorized",
    "parameter_greedy",
    "run_policy",
    "sliding_window_lower",
    "sliding_window_upper",
]

POLICY_ID_PATTERN = re.compile(r"(upper|lower)-(n|[0-9]+)\Z")


@dataclass(frozen=True)
class SamplingPlan:
    """Equispaced sampling grid: slots ``delta*r + t_d`` (0-indexed), ``delta = n/s``."""

    n: int
    s: int
    t_d: int

    def __post_init__(self):
        if self.s < 1 or self.s > self.n or self.n % self.s != 0:
            raise RankError(f"s={self.s} must divide n={self.n}")
        if not 0 <= self.t_d <= self.delta - 1:
            raise DelayOutOfRange(f"t_d={self.t_d} outside [0, {self.delta - 1}]")

    @property
    def delta(self):
        return self.n // self.s

    def slots(self):
        return self.delta * np.arange(self.s) + self.t_d

    @classmethod
    def latest(cls, n, s):
        """The plan whose last sample falls on the final slot (t_d = delta-1)."""
        return cls(n, s, n // s - 1)


def _require_spendable(region):
    if not region.spendable:
        raise InfeasibleRegion(
            "no spendable energy: the equality constraint cannot be met"
        )


def _staircase(cum_caps):
    """Tightest-concave-majorant rates over unit-width slots.

    ``cum_caps[r]`` is the cumulative budget available through slot ``r``;
    returns per-slot amounts whose running sum touches the budget curve on
    every segment.  Ties in the minimum average rate break to the largest
    index, giving maximal constant stretches.
    """
    m = cum_caps.shape[0]
    out = np.empty(m)
    start = 0
    cap_prev = 0.0
    while start < m:
        widths = np.arange(1, m - start + 1, dtype=np.float64)
        rates = (cum_caps[start:] - cap_prev) / widths
        rmin = np.min(rates)
        r = start + int(np.flatnonzero(rates == rmin)[-1])
        out[start : r + 1] = rmin
        cap_prev = cum_caps[r]
        start = r + 1
    return out


def most_majorized(region):
    """Feasible allocation whose consumed-energy profile is majorized by every
    other feasible profile (the flattest way to drain the arrivals)."""
    _require_spendable(region)
    cum_caps = np.concatenate((region.reduced_caps(), [region.effective_total]))
    j = _staircase(cum_caps)
    return PowerAllocation(region.embed(j / region.weights), region.sigma_sq)


def is_majorized(a, b, tol=None):
    """True when ``a`` is majorized by ``b`` (same totals, flatter profile)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch("majorization compares equal-length vectors")
    if tol is None:
        tol = 1e-9 * float(np.sum(np.abs(b)))
    pa = np.cumsum(np.sort(a)[::-1])
    pb = np.cumsum(np.sort(b)[::-1])
    if abs(pa[-1] - pb[-1]) > tol:
        return False
    return bool(np.all(pa <= pb + tol))


def greedy_policy(region, strict=False):
    """Spend-on-arrival: ``a_t = E_t / sigma_sq_t``.

    Arrivals on zero-variance slots carry forward to the next usable slot;
    with ``strict=True`` they raise :class:`ZeroVarianceWithEnergy` instead.
    """
    _require_spendable(region)
    if strict and np.any(region.energy.e[~region.active] > 0):
        raise ZeroVarianceWithEnergy("arrival on a zero-variance slot")
    return PowerAllocation(region.embed(region.greedy_reduced()), region.sigma_sq)


def parameter_greedy(region, channel):
    """Recursive best-channel policy for single-parameter (rank-one) models.

    Repeatedly transmit all energy harvested so far on the strongest
    remaining slot, then recurse on the slots after it.  Ties take the first
    maximizing slot.
    """
    _require_spendable(region)
    if channel.n != region.n:
        raise DimensionMismatch("channel length does not match region")
    g = channel.gain_sq[region.idx_active]
    cum_caps = np.concatenate((region.reduced_caps(), [region.effective_total]))
    a_red = np.zeros(region.m)
    start = 0
    spent = 0.0
    while start < region.m:
        t_star = start + int(np.argmax(g[start:]))
        a_red[t_star] = (cum_caps[t_star] - spent) / region.weights[t_star]
        spent = cum_caps[t_star]
        start = t_star + 1
    return PowerAllocation(region.embed(a_red), region.sigma_sq)


def _constant_variance(region):
    var = region.sigma_sq
    top = float(np.max(var))
    if top <= 0.0 or np.max(var) - np.min(var) > 1e-9 * top:
        raise PlanInvalid("equidistant sampling expects constant slot variance")
    return top


def equidistant_policy(region, channel, noise, plan):
    """Transmit only on an equispaced sampling grid of a low-pass model.

    The restricted problem is separable per sample; a static channel is
    solved exactly by the staircase, a fading one by the separable solver.
    """
    t0 = time.perf_counter()
    if plan.n != region.n:
        raise PlanInvalid(f"plan horizon {plan.n} != region horizon {region.n}")
    if channel.n != region.n:
        raise DimensionMismatch("channel length does not match region")
    var = _constant_variance(region)
    p_x = var * region.n
    slots = plan.slots()

    cum = region.energy.cumulative[slots]
    if cum[-1] <= 0.0:
        raise InfeasibleRegion("no energy arrives by the last sampling slot")
    gains = channel.gain_sq[slots]
    diag = None
    if np.max(gains) - np.min(gains) <= 1e-12 * max(np.max(gains), 1.0):
        abar = _staircase(cum) / var
    else:
        sub = FeasibleRegion(
            np.full(plan.s, var), EnergyTrace(np.diff(np.concatenate(([0.0], cum))))
        )
        obj = DiagObjective(
            np.full(plan.s, p_x / plan.s), gains * (p_x / plan.n), noise.gamma
        )
        abar, diag = solve_window_problem(obj, sub)

    a_full = np.zeros(region.n)
    a_full[slots] = abar
    wall = time.perf_counter() - t0
    mse = mmse_sampled_lowpass(plan.n, plan.s, plan.t_d, abar, channel, noise, p_x)
    return PolicyResult(
        policy_id="equidistant",
        alloc=PowerAllocation(a_full, region.sigma_sq),
        mse=mse,
        normalized_mse=mse / p_x,
        wall_time=wall,
        diagnostics=diag,
    )


def _sliding_window(policy_id, num_kind, spectrum, channel, region, noise, lw):
    t0 = time.perf_counter()
    n = region.n
    if lw < 1 or n % lw != 0:
        raise WindowError(f"window length {lw} must divide n={n}")
    if channel.n != n:
        raise DimensionMismatch("channel length does not match region")
    _require_spendable(region)

    a_full = np.zeros(n)
    converged = True
    iters = 0
    worst_resid = 0.0
    polished_any = False
    for lo in range(0, n, lw):
        sub = region.window(lo, lo + lw)
        if not sub.spendable:
            continue  # window's arrivals are all zero: spend nothing
        if sub.m == 1:
            a_win = sub.embed(
                np.array([sub.effective_total / sub.weights[0]])
            )
        else:
            gains = channel.gain_sq[lo : lo + lw][sub.idx_active]
            if num_kind == "variance":
                num = sub.weights
            else:
                num = np.ones(sub.m)
            obj = DiagObjective(num, gains * sub.weights, noise.gamma)
            a_win, diag = solve_window_problem(obj, sub)
            converged = converged and diag.converged
            iters += diag.iterations
            worst_resid = max(worst_resid, diag.kkt_residual)
            polished_any = polished_any or diag.polished
        a_full[lo : lo + lw] = a_win

    wall = time.perf_counter() - t0
    alloc = PowerAllocation(a_full, region.sigma_sq)
    mse = mmse_woodbury(spectrum, channel, alloc, noise)
    diag = SolverDiagnostics(
        converged=converged,
        stop_reason="windows",
        iterations=iters,
        kkt_residual=worst_resid,
        wall_time=wall,
        polished=polished_any,
    )
    return PolicyResult(
        policy_id=policy_id,
        alloc=alloc,
        mse=mse,
        normalized_mse=mse / spectrum.total_power,
        wall_time=wall,
        diagnostics=diag,
    )


def sliding_window_upper(spectrum, channel, region, noise, lw):
    """Minimize the diagonal upper bound window by window.

    Each length-``lw`` window spends exactly its own arrivals under its own
    causality constraints, so the assembled allocation is feasible.
    """
    return _sliding_window(f"upper-{lw}", "variance", spectrum, channel, region,
                           noise, lw)


def sliding_window_lower(spectrum, channel, region, noise, lw):
    """Window heuristic driven by the flat-spectrum lower bound.

    Requires equal nonzero eigenvalues; with a static channel and ``lw = n``
    it reproduces the most-majorized allocation.
    """
    if not spectrum.is_flat():
        raise FlatSpectrumRequired(
            "lower-bound windows need equal nonzero eigenvalues"
        )
    return _sliding_window(f"lower-{lw}", "flat", spectrum, channel, region,
                           noise, lw)


def _wrap_alloc(policy_id, make_alloc, spectrum, channel, noise):
    t0 = time.perf_counter()
    alloc = make_alloc()
    wall = time.perf_counter() - t0
    mse = mmse_woodbury(spectrum, channel, alloc, noise)
    return PolicyResult(
        policy_id=policy_id,
        alloc=alloc,
        mse=mse,
        normalized_mse=mse / spectrum.total_power,
        wall_time=wall,
    )


def run_policy(policy_id, spectrum, channel, region, noise, plan=None):
    """Evaluate one policy id; every result's mse is the true model MMSE."""
    if policy_id == "optimal":
        return solve_optimal(spectrum, channel, region, noise)[1]
    if policy_id == "relaxed":
        return solve_relaxed(spectrum, channel, region, noise)[1]
    if policy_id == "greedy":
        return _wrap_alloc(policy_id, lambda: greedy_policy(region), spectrum,
                           channel, noise)
    if policy_id == "most-majorized":
        return _wrap_alloc(policy_id, lambda: most_majorized(region), spectrum,
                           channel, noise)
    if policy_id == "param-greedy":
        return _wrap_alloc(policy_id, lambda: parameter_greedy(region, channel),
                           spectrum, channel, noise)
    if policy_id == "equidistant":
        if plan is None:
            raise InvalidConfig("equidistant policy needs a sampling plan")
        return equidistant_policy(region, channel, noise, plan)
    match = POLICY_ID_PATTERN.fullmatch(policy_id)
    if match:
        lw = region.n if match.group(2) == "n" else int(match.group(2))
        if match.group(1) == "upper":
            return sliding_window_upper(spectrum, channel, region, noise, lw)
        return sliding_window_lower(spectrum, channel, region, noise, lw)
    raise InvalidConfig(f"unknown policy id {policy_id!r}")
