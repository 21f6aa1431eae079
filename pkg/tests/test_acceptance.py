"""End-to-end acceptance gate.

Eleven numbered checks covering the flagship numeric example, every closed
form, oracle equivalence for the solver, structural optimality properties,
the Monte Carlo comparison, and the runtime ladder.  Each test prints one
``[PASS]``/``[FAIL]`` line (visible under ``pytest -s``); ``pytest -v``
already yields one status line per criterion.
"""

import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from eh_allocate.covariance import (
    SpectrumDecomposition,
    build_lowpass_cwss,
    build_rank_one,
    build_static_correlation,
    dft_matrix,
    random_haar_covariance,
)
from eh_allocate.energy import EnergyTrace, FeasibleRegion
from eh_allocate.experiment import ExperimentConfig, run_experiment, timing_benchmark
from eh_allocate.estimator import (
    ChannelTrace,
    NoiseModel,
    PowerAllocation,
    lower_bound_flat,
    mmse_gradient,
    mmse_woodbury,
    upper_bound_uncorrelated,
)
from eh_allocate.policies import (
    SamplingPlan,
    equidistant_policy,
    most_majorized,
    run_policy,
    sliding_window_upper,
)
from eh_allocate.solver import solve_optimal, solve_relaxed


def report(num, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def rand_arrivals(rng, n, rate=0.7):
    e = (rng.random(n) < rate) * rng.random(n)
    if e.sum() <= 0:
        e[0] = 0.5
    return EnergyTrace(e)


def rayleigh(rng, n):
    return ChannelTrace((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))


def divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


# ---------------------------------------------------------------------------


def test_criterion_01_flagship_example():
    t0 = time.perf_counter()
    model = build_lowpass_cwss(16, 4, 16.0)
    e = np.zeros(16)
    e[[3, 7, 11, 15]] = 1.0
    region = FeasibleRegion(model.sigma_sq, EnergyTrace(e))
    chan = ChannelTrace.static(16)
    noise = NoiseModel(1e-3)

    eq = equidistant_policy(region, chan, noise, SamplingPlan(16, 4, 3))
    up = sliding_window_upper(model.spectrum(), chan, region, noise, 16)
    elapsed = time.perf_counter() - t0

    ok = (
        eq.normalized_mse == pytest.approx(9.99e-4, rel=0.01)
        and up.normalized_mse == pytest.approx(1.16e-3, rel=0.01)
        # frozen exact values guard against silent drift
        and eq.normalized_mse == pytest.approx(1.0 / 1001.0, rel=1e-9)
        and up.normalized_mse == pytest.approx(0.0011629638897048778, rel=1e-9)
        and elapsed < 1.0
    )
    report(1, ok, f"equidistant {eq.normalized_mse:.6g}, balanced-window "
                  f"{up.normalized_mse:.6g} [{elapsed:.2f}s]")


def test_criterion_02_relaxed_closed_form():
    t0 = time.perf_counter()
    rng = np.random.default_rng(402)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 17))
        s = int(rng.choice(divisors(n)))
        p_x = float(rng.uniform(1.0, 20.0))
        model = build_lowpass_cwss(n, s, p_x)
        region = FeasibleRegion(model.sigma_sq, rand_arrivals(rng, n))
        noise = NoiseModel(float(rng.uniform(0.01, 1.0)))
        _, res = solve_relaxed(model.spectrum(), ChannelTrace.static(n), region, noise)
        e_tot = float(region.energy.e.sum())
        closed = p_x / (1.0 + noise.gamma * e_tot / s)
        worst = max(worst, abs(res.mse - closed) / closed)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 30.0
    report(2, ok, f"50 flat instances, worst relative gap {worst:.2e} [{elapsed:.1f}s]")


def test_criterion_03_rank_one_indifference():
    rng = np.random.default_rng(403)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 13))
        u = (0.2 + rng.random(n)) * np.exp(2j * np.pi * rng.random(n))
        u /= np.linalg.norm(u)
        p_x = float(rng.uniform(1.0, 10.0))
        model = build_rank_one(n, u, p_x)
        spect = model.spectrum()
        chan = ChannelTrace.static(n)
        region = FeasibleRegion(model.sigma_sq, rand_arrivals(rng, n))
        noise = NoiseModel(float(rng.uniform(0.05, 1.0)))
        e_tot = float(region.energy.e.sum())
        closed = p_x / (1.0 + noise.gamma * e_tot)
        ids = ["optimal", "relaxed", "greedy", "most-majorized", "param-greedy", "upper-n"]
        if n % 2 == 0:
            ids.append("upper-2")
        for pid in ids:
            res = run_policy(pid, spect, chan, region, noise)
            worst = max(worst, abs(res.mse - closed) / closed)
    ok = worst < 1e-8
    report(3, ok, f"50 rank-one instances x all policies, worst gap {worst:.2e}")


def _batch_err(spect, chan, noise, pts_j, sig, chunk=150_000):
    """Estimation error at many J-points of a 3-slot instance, batched."""
    u = spect.basis
    lam = spect.eigenvalues
    r = spect.rank
    out = np.empty(pts_j.shape[0])
    for lo in range(0, pts_j.shape[0], chunk):
        a = pts_j[lo:lo + chunk] / sig
        w = noise.gamma * chan.gain_sq * a
        m = np.einsum("tk,gt,tl->gkl", u.conj(), w, u)
        m[:, np.arange(r), np.arange(r)] += 1.0 / lam
        out[lo:lo + chunk] = np.einsum("gkk->g", np.linalg.inv(m)).real
    return out


def _oracle_n3(spect, chan, noise, region):
    """Grid minimum over the 3-slot polytope: 1e-3 resolution, refined to 1e-5."""
    sig = region.sigma_sq
    cum = np.cumsum(region.energy.e)
    e_tot = cum[-1]
    tol = 1e-12 * e_tot

    def axis(lo, hi, step):
        lo, hi = max(lo, 0.0), max(min(hi, e_tot), 0.0)
        if hi <= lo:
            return np.array([min(lo, hi)])
        return np.append(np.arange(lo, hi, step), hi)  # keep the exact cap

    def sweep(c0, c1, s0, s1, step):
        j0 = axis(c0, min(c1, cum[0]), step)
        j1 = axis(s0, s1, step)
        g0, g1 = np.meshgrid(j0, j1, indexing="ij")
        g0, g1 = g0.ravel(), g1.ravel()
        g2 = e_tot - g0 - g1
        mask = (g0 <= cum[0] + tol) & (g0 + g1 <= cum[1] + tol) & (g2 >= -tol)
        pts = np.stack([g0[mask], g1[mask], np.maximum(g2[mask], 0.0)], axis=1)
        errs = _batch_err(spect, chan, noise, pts, sig)
        k = int(np.argmin(errs))
        return float(errs[k]), pts[k]

    step = 1e-3 * e_tot
    best, at = sweep(0.0, cum[0], 0.0, e_tot, step)
    for _ in range(2):
        step /= 10.0
        cand, cand_at = sweep(at[0] - 25 * step, at[0] + 25 * step,
                              at[1] - 25 * step, at[1] + 25 * step, step)
        if cand < best:
            best, at = cand, cand_at
    return best


def test_criterion_04_brute_force_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = 0.0
    for k in range(20):
        lam = rng.uniform(0.3, 3.0, size=3)
        model = random_haar_covariance(3, lam, seed=int(rng.integers(1 << 30)))
        spect = model.spectrum()
        chan = rayleigh(rng, 3)
        region = FeasibleRegion(model.sigma_sq, rand_arrivals(rng, 3, rate=0.9))
        noise = NoiseModel(float(rng.uniform(0.02, 0.5)))
        _, res = solve_optimal(spect, chan, region, noise)
        oracle = _oracle_n3(spect, chan, noise, region) / model.p_x
        worst = max(worst, abs(res.normalized_mse - oracle))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 300.0
    report(4, ok, f"20 fading 3-slot instances vs grid search, worst |gap| "
                  f"{worst:.2e} [{elapsed:.1f}s]")


def test_criterion_05_majorization_optimality():
    rng = np.random.default_rng(405)
    violations = 0
    for _ in range(20):
        e = (rng.random(16) < 0.6) * rng.random(16)
        if e.sum() <= 0:
            e[0] = 1.0
        region = FeasibleRegion(np.ones(16), EnergyTrace(e))
        stair = np.sort(most_majorized(region).energy)[::-1]
        stair_cum = np.cumsum(stair)
        # random feasible profiles: spend a random battery fraction per slot
        batch = 1000
        bat = np.zeros(batch)
        prof = np.empty((batch, 16))
        for t in range(16):
            bat += e[t]
            spend = bat if t == 15 else rng.random(batch) * bat
            prof[:, t] = spend
            bat -= spend
        draws = np.sort(prof, axis=1)[:, ::-1]
        tol = 1e-9 * max(1.0, e.sum())
        violations += int(np.sum(np.any(
            stair_cum[None, :] > np.cumsum(draws, axis=1) + tol, axis=1)))
    ok = violations == 0
    report(5, ok, f"staircase vs 20x1000 random feasible profiles, "
                  f"{violations} majorization violations")


def test_criterion_06_balanced_is_optimal_static():
    rng = np.random.default_rng(406)
    worst = 0.0
    for kind in ("static-correlation", "almost-white"):
        for _ in range(50):
            n = int(rng.integers(4, 13))
            if kind == "static-correlation":
                lo = -0.9 / (n - 1)
                rho = float(rng.uniform(lo, 0.95))
                model = build_static_correlation(n, rho, float(rng.uniform(2.0, 12.0)))
                spect = model.spectrum()
                sig = model.sigma_sq
            else:
                lam = np.ones(n)
                lam[int(rng.integers(n))] -= float(rng.uniform(1e-4, 1e-3))
                spect = SpectrumDecomposition(lam, dft_matrix(n))
                sig = np.full(n, lam.sum() / n)
            chan = ChannelTrace.static(n)
            region = FeasibleRegion(sig, rand_arrivals(rng, n))
            noise = NoiseModel(float(rng.uniform(0.05, 1.0)))
            _, res = solve_optimal(spect, chan, region, noise)
            balanced = mmse_woodbury(spect, chan, most_majorized(region), noise)
            worst = max(worst, abs(balanced - res.mse) / res.mse)
    ok = worst < 1e-7
    report(6, ok, f"balanced vs solver on 100 static instances, worst gap {worst:.2e}")


def test_criterion_07_bound_sandwich():
    rng = np.random.default_rng(407)
    worst_order = -np.inf
    worst_eq = 0.0
    for k in range(200):
        n = int(rng.integers(2, 17))
        s = n if k < 50 else int(rng.choice(divisors(n)))
        p_x = float(rng.uniform(1.0, 12.0))
        model = build_lowpass_cwss(n, s, p_x)
        spect = model.spectrum()
        chan = rayleigh(rng, n)
        region = FeasibleRegion(model.sigma_sq, rand_arrivals(rng, n))
        noise = NoiseModel(float(rng.uniform(0.02, 0.8)))
        alloc = run_policy("greedy", spect, chan, region, noise).alloc
        mse = mmse_woodbury(spect, chan, alloc, noise)
        ub = upper_bound_uncorrelated(model, chan, alloc, noise)
        lb = lower_bound_flat(n, s, chan, alloc, noise, p_x, model.sigma_sq,
                              eigenvalues=spect.eigenvalues)
        worst_order = max(worst_order, (lb - mse) / p_x, (mse - ub) / p_x)
        if s == n:
            worst_eq = max(worst_eq, abs(ub - mse) / mse, abs(lb - mse) / mse)
    ok = worst_order < 1e-9 and worst_eq < 1e-10
    report(7, ok, f"200 flat instances: worst order breach {worst_order:.2e}, "
                  f"worst full-band equality gap {worst_eq:.2e}")


def test_criterion_08_waterfilling_structure():
    rng = np.random.default_rng(408)
    worst_rec = 0.0
    worst_ord = -np.inf
    for k in range(100):
        n = int(rng.integers(3, 13))
        sig = rng.uniform(0.05, 3.0, size=n)
        spect = SpectrumDecomposition(sig, np.eye(n, dtype=np.complex128))
        chan = rayleigh(rng, n) if k < 50 else ChannelTrace.static(n)
        region = FeasibleRegion(sig, rand_arrivals(rng, n))
        noise = NoiseModel(float(rng.uniform(0.05, 0.8)))
        alloc, res = solve_optimal(spect, chan, region, noise)
        kappa = res.diagnostics.kappa
        rho = noise.gamma * chan.gain_sq * sig
        a_hat = np.maximum(np.sqrt(rho / kappa) - 1.0, 0.0) / rho
        scale = max(1.0, float(np.max(alloc.a)))
        worst_rec = max(worst_rec, float(np.max(np.abs(alloc.a - a_hat))) / scale)
        if k >= 50:
            # later slots with at least the variance must carry at least the energy
            j = alloc.energy
            e_tot = region.energy.e.sum()
            for t_lo in range(n):
                for t_hi in range(t_lo + 1, n):
                    if sig[t_hi] >= sig[t_lo]:
                        worst_ord = max(worst_ord, (j[t_lo] - j[t_hi]) / e_tot)
    ok = worst_rec < 1e-6 and worst_ord < 1e-8
    report(8, ok, f"threshold-form reconstruction worst {worst_rec:.2e}; "
                  f"static ordering worst breach {worst_ord:.2e}")


def test_criterion_09_gradient_correctness():
    rng = np.random.default_rng(409)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        r = int(rng.integers(1, n + 1))
        model = random_haar_covariance(n, rng.uniform(0.3, 3.0, size=r),
                                       seed=int(rng.integers(1 << 30)))
        spect = model.spectrum()
        chan = rayleigh(rng, n)
        noise = NoiseModel(float(rng.uniform(0.05, 1.0)))
        a = rng.uniform(0.1, 2.0, size=n)
        g = mmse_gradient(spect, chan, PowerAllocation(a, model.sigma_sq), noise)
        fd = np.empty(n)
        for t in range(n):
            h = 1e-4 * (1.0 + a[t])
            up, dn = a.copy(), a.copy()
            up[t] += h
            dn[t] -= h
            fd[t] = (
                mmse_woodbury(spect, chan, PowerAllocation(up, model.sigma_sq), noise)
                - mmse_woodbury(spect, chan, PowerAllocation(dn, model.sigma_sq), noise)
            ) / (2 * h)
        worst = max(worst, float(np.linalg.norm(fd - g) / np.linalg.norm(g)))
    ok = worst < 1e-5
    report(9, ok, f"analytic vs central differences on 50 instances, worst {worst:.2e}")


def _curve_config(s):
    return ExperimentConfig(
        n=16, s=s, p_x=16.0, sigma_w_sq=1e-3, eigen="flat", unitary="dft",
        channel="rayleigh", policies=("optimal", "upper-n"), trials=500,
        master_seed=61503,
    )


def test_criterion_10_monte_carlo_curves():
    t0 = time.perf_counter()
    runs = {s: run_experiment(_curve_config(s)) for s in (4, 14)}
    elapsed = time.perf_counter() - t0

    p = np.array(runs[4].config.p_grid)
    checks = []
    for s, res in runs.items():
        assert int(res.stats.failure_count.sum()) == 0
        for pol in res.config.policies:
            curve = res.stats.row(pol)
            corr = spearmanr(p, curve).statistic
            checks.append((f"spearman s={s} {pol}", corr <= -0.9, f"{corr:.3f}"))
        i_up = res.stats.policies.index("upper-n")
        gaps = res.stats.mean_gap[i_up]
        checks.append((f"gap s={s} nonneg", bool(np.all(gaps >= -1e-12)), f"min {gaps.min():.2e}"))
        checks.append((f"gap s={s} small", bool(np.all(gaps <= 0.05)), f"max {gaps.max():.2e}"))
    mask = p >= 0.2
    for pol in ("optimal", "upper-n"):
        below = np.all(runs[4].stats.row(pol)[mask] < runs[14].stats.row(pol)[mask])
        checks.append((f"s=4 below s=14 ({pol})", bool(below), ""))
    checks.append(("runtime < 15 min", elapsed < 900.0, f"{elapsed:.0f}s"))

    ok = all(c[1] for c in checks)
    bad = "; ".join(f"{c[0]} {c[2]}" for c in checks if not c[1])
    report(10, ok, f"500-trial curves for s=4/s=14 [{elapsed:.0f}s]"
                   + (f" FAILED: {bad}" if bad else ""))


def test_criterion_11_runtime_ladder():
    rows = timing_benchmark(ns=(64,), trials=5, master_seed=90210, p=0.3,
                            reference_n=64)
    t = {r["policy"]: r["mean_time"] for r in rows}
    ok = t["upper-64"] < t["optimal"] and t["upper-2"] > t["upper-64"]
    report(11, ok, f"n=64 mean times: optimal {t['optimal'] * 1e3:.1f}ms, "
                   f"upper-2 {t['upper-2'] * 1e3:.1f}ms, "
                   f"upper-64 {t['upper-64'] * 1e3:.1f}ms")
