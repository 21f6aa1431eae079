"""Optimal/relaxed solves against closed forms, grids, and recovered duals.

The n=3 oracle walks an explicit grid over the consumed-energy simplex
(coarse pass plus local refinements) and evaluates the error by batched
3x3 inversion, so it exercises none of the production solve path.
"""

import numpy as np
import pytest

from eh_allocate.covariance import SpectrumDecomposition, build_lowpass_cwss, random_haar_covariance
from eh_allocate.energy import EnergyTrace, FeasibleRegion, check_feasible
from eh_allocate.errors import InfeasibleRegion
from eh_allocate.estimator import ChannelTrace, NoiseModel, PowerAllocation, mmse_woodbury
from eh_allocate.solver import DiagObjective, solve_optimal, solve_relaxed, solve_window_problem


def batched_err(lam, basis, h, gamma, a_grid):
    """tr[(diag(1/lam) + gamma U^H diag(|h|^2 a) U)^{-1}] for every row of a_grid."""
    u = basis
    gain = np.abs(h) ** 2
    d = gamma * gain[None, :] * a_grid  # (G, n)
    m = np.einsum("tk,gt,tl->gkl", u.conj(), d, u)
    m += np.diag(1.0 / lam)[None, :, :]
    return np.real(np.trace(np.linalg.inv(m), axis1=1, axis2=2))


def oracle_n3(lam, basis, h, gamma, sigma_sq, arrivals, steps=90, refines=3):
    """Grid minimum of the n=3 problem in consumed-energy coordinates."""
    cum = np.cumsum(arrivals)
    total = cum[-1]
    lo = np.zeros(2)
    hi = np.array([min(cum[0], total), total])
    best = (np.inf, None)
    for _ in range(refines + 1):
        j0 = np.linspace(lo[0], hi[0], steps)
        j1 = np.linspace(lo[1], hi[1], steps)
        g0, g1 = np.meshgrid(j0, j1, indexing="ij")
        g2 = total - g0 - g1
        ok = (
            (g0 <= cum[0] + 1e-12)
            & (g0 + g1 <= cum[1] + 1e-12)
            & (g1 >= 0)
            & (g2 >= -1e-12)
        )
        pts = np.stack([g0[ok], g1[ok], np.maximum(g2[ok], 0.0)], axis=1)
        if pts.shape[0] == 0:
            break
        a_grid = pts / sigma_sq[None, :]
        errs = batched_err(lam, basis, h, gamma, a_grid)
        k = int(np.argmin(errs))
        if errs[k] < best[0]:
            best = (float(errs[k]), pts[k])
        span0 = (hi[0] - lo[0]) / steps * 3
        span1 = (hi[1] - lo[1]) / steps * 3
        lo = np.maximum(best[1][:2] - [span0, span1], 0.0)
        hi = np.minimum(best[1][:2] + [span0, span1], [min(cum[0], total), total])
    return best


def diag_instance(seed, n=6):
    rng = np.random.default_rng(seed)
    sig = rng.random(n) + 0.05
    spect = SpectrumDecomposition(sig, np.eye(n, dtype=np.complex128))
    h = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    e = (rng.random(n) < 0.6) * (0.2 + rng.random(n))
    e[0] += 0.4
    return spect, ChannelTrace(h), FeasibleRegion(sig, EnergyTrace(e)), NoiseModel(
        10 ** rng.uniform(-3, 0)
    )


class TestClosedForms:
    def test_relaxed_flat_lowpass(self):
        # flat rank-s model, static channel: err = P_x / (1 + gamma E_tot / s)
        model = build_lowpass_cwss(16, 4, 16.0)
        e = np.zeros(16)
        e[[3, 7, 11, 15]] = 1.0
        region = FeasibleRegion(model.sigma_sq, EnergyTrace(e))
        noise = NoiseModel(1e-3)
        _, res = solve_relaxed(model.spectrum(), ChannelTrace.static(16), region, noise)
        assert res.normalized_mse == pytest.approx(1.0 / 1001.0, rel=1e-10)

    @pytest.mark.parametrize("seed", range(6))
    def test_relaxed_flat_random(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.choice([6, 8, 12]))
        s = int(rng.choice([d for d in range(1, n + 1) if n % d == 0]))
        model = build_lowpass_cwss(n, s, float(n))
        e = (rng.random(n) < 0.7) * rng.random(n)
        e[0] += 0.5
        region = FeasibleRegion(model.sigma_sq, EnergyTrace(e))
        noise = NoiseModel(10 ** rng.uniform(-3, -0.5))
        _, res = solve_relaxed(model.spectrum(), ChannelTrace.static(n), region, noise)
        want = float(n) / (1.0 + noise.gamma * e.sum() / s)
        assert res.mse == pytest.approx(want, rel=1e-8)

    def test_white_single_arrival_spreads_evenly(self):
        n = 5
        model = build_lowpass_cwss(n, n, float(n))
        e = np.zeros(n)
        e[0] = 2.5
        region = FeasibleRegion(model.sigma_sq, EnergyTrace(e))
        alloc, res = solve_optimal(model.spectrum(), ChannelTrace.static(n), region, NoiseModel(0.1))
        np.testing.assert_allclose(alloc.a, np.full(n, 0.5), atol=1e-8)
        assert res.diagnostics.converged

    def test_white_staircase_instance(self):
        # arrivals (1,0,3,0): most even profile is (0.5, 0.5, 1.5, 1.5)
        n = 4
        model = build_lowpass_cwss(n, n, float(n))
        region = FeasibleRegion(model.sigma_sq, EnergyTrace([1.0, 0.0, 3.0, 0.0]))
        alloc, _ = solve_optimal(model.spectrum(), ChannelTrace.static(n), region, NoiseModel(0.1))
        np.testing.assert_allclose(alloc.a, [0.5, 0.5, 1.5, 1.5], atol=1e-8)


class TestGridOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_diagonal_fading_n3(self, seed):
        rng = np.random.default_rng(seed + 200)
        sig = rng.random(3) + 0.2
        spect = SpectrumDecomposition(sig, np.eye(3, dtype=np.complex128))
        h = (rng.standard_normal(3) + 1j * rng.standard_normal(3)) / np.sqrt(2)
        e = rng.random(3) + 0.1
        noise = NoiseModel(0.05)
        region = FeasibleRegion(sig, EnergyTrace(e))
        alloc, res = solve_optimal(spect, ChannelTrace(h), region, noise)
        ref, _ = oracle_n3(sig, np.eye(3, dtype=complex), h, noise.gamma, sig, e)
        assert res.mse <= ref + 1e-6
        assert res.mse == pytest.approx(ref, abs=2e-5 * np.sum(sig))

    @pytest.mark.parametrize("seed", range(3))
    def test_full_covariance_n3(self, seed):
        rng = np.random.default_rng(seed + 300)
        lam = rng.random(2) + 0.3
        model = random_haar_covariance(3, lam, seed=seed + 300)
        spect = model.spectrum()
        h = (rng.standard_normal(3) + 1j * rng.standard_normal(3)) / np.sqrt(2)
        e = rng.random(3) + 0.1
        noise = NoiseModel(0.05)
        region = FeasibleRegion(model.sigma_sq, EnergyTrace(e))
        alloc, res = solve_optimal(spect, ChannelTrace(h), region, noise)
        ref, _ = oracle_n3(
            spect.eigenvalues, spect.basis, h, noise.gamma, model.sigma_sq, e
        )
        assert res.mse <= ref + 1e-6
        assert res.mse == pytest.approx(ref, abs=2e-5 * model.p_x)


class TestDiagnostics:
    @pytest.mark.parametrize("seed", range(8))
    def test_multiplier_reconstruction(self, seed):
        spect, chan, region, noise = diag_instance(seed)
        alloc, res = solve_optimal(spect, chan, region, noise)
        d = res.diagnostics
        assert d.converged
        kappa = d.kappa
        assert kappa is not None
        mask = region.sigma_sq > 0
        kk = kappa[mask]
        assert np.all(np.diff(kk) <= 1e-7 * max(1.0, np.max(np.abs(kk))))
        # threshold form reproduces the allocation
        rho = noise.gamma * chan.gain_sq * region.sigma_sq
        with np.errstate(divide="ignore"):
            a_hat = np.where(
                rho > 0,
                np.maximum(np.sqrt(rho / np.maximum(kappa, 1e-300)) - 1.0, 0.0)
                / np.maximum(rho, 1e-300),
                0.0,
            )
        scale = max(1.0, float(np.max(alloc.a)))
        assert np.max(np.abs((a_hat - alloc.a)[mask])) <= 1e-6 * scale

    def test_multiplier_signs(self):
        spect, chan, region, noise = diag_instance(17)
        _, res = solve_optimal(spect, chan, region, noise)
        d = res.diagnostics
        assert np.all(d.eta >= -1e-12)
        assert np.all(d.mu >= -1e-12)
        assert d.stationarity_residual <= 1e-6

    def test_deterministic(self):
        spect, chan, region, noise = diag_instance(23)
        a1, _ = solve_optimal(spect, chan, region, noise)
        a2, _ = solve_optimal(spect, chan, region, noise)
        np.testing.assert_array_equal(a1.a, a2.a)

    def test_mse_recompute_matches(self):
        spect, chan, region, noise = diag_instance(31)
        alloc, res = solve_optimal(spect, chan, region, noise)
        again = mmse_woodbury(spect, chan, alloc, noise)
        assert res.mse == pytest.approx(again, abs=1e-12 * max(1.0, again))


class TestOrderings:
    @pytest.mark.parametrize("seed", range(6))
    def test_relaxed_never_worse(self, seed):
        spect, chan, region, noise = diag_instance(seed + 40)
        _, opt = solve_optimal(spect, chan, region, noise)
        _, rel = solve_relaxed(spect, chan, region, noise)
        assert rel.mse <= opt.mse + 1e-8 * max(1.0, opt.mse)

    def test_earlier_arrivals_help(self):
        # advancing a packet enlarges the feasible set
        spect, chan, _, noise = diag_instance(55)
        e = np.array([0.5, 0.0, 1.0, 0.2, 0.0, 0.3])
        e_early = np.array([0.5, 1.0, 0.0, 0.2, 0.3, 0.0])
        sig = spect.eigenvalues
        r_late = FeasibleRegion(sig, EnergyTrace(e))
        r_early = FeasibleRegion(sig, EnergyTrace(e_early))
        _, late = solve_optimal(spect, chan, r_late, noise)
        _, early = solve_optimal(spect, chan, r_early, noise)
        assert early.mse <= late.mse + 1e-9

    def test_value_midpoint_convex_in_arrivals(self):
        spect, chan, _, noise = diag_instance(66)
        sig = spect.eigenvalues
        rng = np.random.default_rng(66)
        for _ in range(4):
            e1 = rng.random(6) + 0.05
            e2 = rng.random(6) + 0.05
            f = []
            for e in (e1, e2, 0.5 * (e1 + e2)):
                _, res = solve_optimal(spect, chan, FeasibleRegion(sig, EnergyTrace(e)), noise)
                f.append(res.mse)
            assert f[2] <= 0.5 * (f[0] + f[1]) + 1e-7


class TestEdges:
    def test_zero_arrivals_rejected(self):
        spect, chan, _, noise = diag_instance(5)
        region = FeasibleRegion(spect.eigenvalues, EnergyTrace(np.zeros(6)))
        with pytest.raises(InfeasibleRegion):
            solve_optimal(spect, chan, region, noise)

    def test_zero_variance_slot_stays_dark(self):
        sig = np.array([1.0, 0.0, 2.0])
        spect = SpectrumDecomposition(
            np.array([1.0, 2.0]), np.eye(3, dtype=complex)[:, [0, 2]]
        )
        region = FeasibleRegion(sig, EnergyTrace([1.0, 1.0, 0.0]))
        chan = ChannelTrace.static(3)
        alloc, res = solve_optimal(spect, chan, region, NoiseModel(0.1))
        assert alloc.a[1] == 0.0
        assert res.diagnostics.converged
        assert check_feasible(alloc, region).feasible

    def test_window_solve_equals_full_when_window_is_horizon(self):
        spect, chan, region, noise = diag_instance(77)
        alloc, _ = solve_optimal(spect, chan, region, noise)
        obj = DiagObjective(
            region.sigma_sq[region.idx_active],
            chan.gain_sq[region.idx_active] * region.sigma_sq[region.idx_active],
            noise.gamma,
        )
        a_win, diag = solve_window_problem(obj, region)
        assert diag.converged
        np.testing.assert_allclose(a_win, alloc.a, atol=1e-6 * max(1.0, np.max(alloc.a)))
