"""Self-check suites: seeded invariant sweeps over randomly drawn instances.

Each suite returns a list of :class:`CheckResult`; a failing check carries the
offending seed in ``detail`` so the instance can be rebuilt in isolation.
These run from the command line (``eh-allocate validate``) and double as a
smoke layer after installs on new platforms.
"""

from dataclasses import dataclass

import numpy as np

from . import estimator
from .covariance import (
    SpectrumDecomposition,
    build_circulant,
    build_lowpass_cwss,
    build_static_correlation,
    dft_matrix,
    random_haar_covariance,
)
from .energy import EnergyTrace, FeasibleRegion, check_feasible
from .errors import EhAllocateError, InvalidConfig
from .estimator import ChannelTrace, NoiseModel, PowerAllocation
from .kernels import dykstra_project
from .policies import greedy_policy, is_majorized, most_majorized, parameter_greedy, run_policy
from .solver import solve_optimal, solve_relaxed

__all__ = ["CheckResult", "SUITES", "run_all", "run_suite"]


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _random_diag_instance(seed, n=6, p_arrival=0.7):
    """Diagonal-spectrum instance with a spendable arrival trace."""
    rng = _rng(seed)
    sigma_sq = rng.random(n) + 0.05
    spect = SpectrumDecomposition(sigma_sq, np.eye(n, dtype=np.complex128))
    h = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    chan = ChannelTrace(h)
    e = (rng.random(n) < p_arrival) * (0.5 + rng.random(n))
    e[0] += 0.5  # keep every draw spendable
    region = FeasibleRegion(sigma_sq, EnergyTrace(e))
    noise = NoiseModel(10 ** rng.uniform(-3, 0))
    return spect, chan, region, noise


def _random_feasible(region, rng):
    """Random point of the energy polytope via projection in energy space."""
    y = rng.random(region.m) * (1.0 + region.effective_total)
    caps = region.reduced_caps()
    x, _ = dykstra_project(
        y, np.ones(region.m), caps, region.effective_total, 1e-12, 10_000
    )
    return PowerAllocation(region.embed(np.maximum(x, 0.0) / region.weights), region.sigma_sq)


# ---------------------------------------------------------------------------
# suites


def _suite_covariance(seed, trials):
    out = []
    ok, bad = True, ""
    for k in range(trials):
        s = seed + k
        n = int(_rng(s).integers(3, 9))
        lam = _rng(s + 1).random(n - 1) + 0.1
        model = random_haar_covariance(n, lam, seed=s)
        spect = model.spectrum()
        gram = spect.basis.conj().T @ spect.basis
        if not np.allclose(gram, np.eye(spect.rank), atol=1e-10):
            ok, bad = False, f"seed={s} basis not orthonormal"
            break
        if abs(model.p_x - lam.sum()) > 1e-9 * lam.sum():
            ok, bad = False, f"seed={s} trace mismatch"
            break
        rebuilt = spect.reconstruct()
        if not np.allclose(rebuilt, model.matrix, atol=1e-10 * lam.sum()):
            ok, bad = False, f"seed={s} reconstruction drift"
            break
    out.append(CheckResult("covariance", "haar_factorization", ok, bad))

    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + 1000 + k)
        n = int(rng.integers(2, 9))
        rho = float(rng.uniform(-1.0 / (n - 1) + 1e-6, 1.0 - 1e-6))
        p_x = float(rng.uniform(0.5, 20.0))
        model = build_static_correlation(n, rho, p_x)
        lam = np.sort(np.linalg.eigvalsh(model.matrix))
        expect = np.sort(
            np.r_[np.full(n - 1, (p_x / n) * (1 - rho)), (p_x / n) * (rho * (n - 1) + 1)]
        )
        if not np.allclose(lam, expect, atol=1e-9 * p_x):
            ok, bad = False, f"seed={seed + 1000 + k} eigenvalues off"
            break
    out.append(CheckResult("covariance", "static_correlation_spectrum", ok, bad))

    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + 2000 + k)
        n = int(rng.integers(3, 9))
        half = rng.random(n // 2 + 1)
        v = np.zeros(n)
        v[: n // 2 + 1] = half
        v[n // 2 + 1 :] = half[1 : (n + 1) // 2][::-1]  # symmetric first row
        v[0] += v.sum()  # diagonally dominant -> PSD
        model, z = build_circulant(v)
        dense = np.sort(np.linalg.eigvalsh(model.matrix))
        if not np.allclose(np.sort(z.real), dense, atol=1e-9 * max(1.0, v[0])):
            ok, bad = False, f"seed={seed + 2000 + k} transform vs dense eigensolver"
            break
    out.append(CheckResult("covariance", "circulant_eigenvalues", ok, bad))

    f = dft_matrix(8)
    ok = np.allclose(f.conj().T @ f, np.eye(8), atol=1e-12)
    out.append(CheckResult("covariance", "dft_unitary", ok, "" if ok else "n=8"))
    return out


def _suite_estimator(seed, trials):
    out = []
    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + k)
        n = int(rng.integers(3, 10))
        s = int(rng.integers(1, n + 1))
        model = random_haar_covariance(n, rng.random(s) + 0.1, seed=seed + k)
        chan = ChannelTrace((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
        alloc = PowerAllocation(rng.random(n) * 2, model.sigma_sq)
        noise = NoiseModel(10 ** rng.uniform(-3, 0.5))
        direct = estimator.mmse_direct(model, chan, alloc, noise)
        wood = estimator.mmse_woodbury(model.spectrum(), chan, alloc, noise)
        if abs(direct - wood) > 1e-8 * max(1.0, model.p_x):
            ok, bad = False, f"seed={seed + k} direct/woodbury split {abs(direct - wood):.2e}"
            break
        if not 0.0 <= wood <= model.p_x * (1 + 1e-12):
            ok, bad = False, f"seed={seed + k} error outside [0, total power]"
            break
    out.append(CheckResult("estimator", "direct_equals_factored", ok, bad))

    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + 3000 + k)
        n = int(rng.integers(2, 9))
        model = random_haar_covariance(n, rng.random(n) + 0.1, seed=seed + 3000 + k)
        chan = ChannelTrace((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
        noise = NoiseModel(0.05)
        a = rng.random(n)
        e1 = estimator.mmse_woodbury(model.spectrum(), chan, PowerAllocation(a, model.sigma_sq), noise)
        e2 = estimator.mmse_woodbury(model.spectrum(), chan, PowerAllocation(2 * a, model.sigma_sq), noise)
        if e2 > e1 + 1e-10 * max(1.0, e1):
            ok, bad = False, f"seed={seed + 3000 + k} error increased when spending more"
            break
    out.append(CheckResult("estimator", "monotone_in_power", ok, bad))

    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + 4000 + k)
        n = int(rng.integers(4, 9))
        divisors = [d for d in range(1, n + 1) if n % d == 0]
        s = int(rng.choice(divisors))
        model = build_lowpass_cwss(n, s, p_x=float(n))
        chan = ChannelTrace((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
        alloc = PowerAllocation(rng.random(n) * 3, model.sigma_sq)
        noise = NoiseModel(0.01)
        err = estimator.mmse_woodbury(model.spectrum(), chan, alloc, noise)
        hi = estimator.upper_bound_uncorrelated(model, chan, alloc, noise)
        lo = estimator.lower_bound_flat(n, s, chan, alloc, noise, model.p_x, model.sigma_sq)
        if not (lo <= err + 1e-9 and err <= hi + 1e-9):
            ok, bad = False, f"seed={seed + 4000 + k} sandwich broken lo={lo:.6g} err={err:.6g} hi={hi:.6g}"
            break
        if s == n and (abs(hi - err) > 1e-9 or abs(lo - err) > 1e-9):
            ok, bad = False, f"seed={seed + 4000 + k} full-band bounds not tight"
            break
    out.append(CheckResult("estimator", "bound_sandwich", ok, bad))
    return out


def _suite_gradient(seed, trials):
    out = []
    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + k)
        n = int(rng.integers(3, 8))
        s = int(rng.integers(1, n + 1))
        model = random_haar_covariance(n, rng.random(s) + 0.2, seed=seed + k)
        spect = model.spectrum()
        chan = ChannelTrace((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
        noise = NoiseModel(0.05)
        a = rng.random(n) + 0.1
        sig = model.sigma_sq
        grad = estimator.mmse_gradient(spect, chan, PowerAllocation(a, sig), noise)
        step = 1e-6
        for t in range(n):
            ap, am = a.copy(), a.copy()
            ap[t] += step
            am[t] -= step
            fd = (
                estimator.mmse_woodbury(spect, chan, PowerAllocation(ap, sig), noise)
                - estimator.mmse_woodbury(spect, chan, PowerAllocation(am, sig), noise)
            ) / (2 * step)
            if abs(fd - grad[t]) > 1e-4 * max(1.0, abs(fd)):
                ok, bad = False, f"seed={seed + k} slot {t}: fd={fd:.8g} analytic={grad[t]:.8g}"
                break
        if not ok:
            break
    out.append(CheckResult("gradient", "matches_finite_differences", ok, bad))

    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + 5000 + k)
        n = int(rng.integers(3, 8))
        model = random_haar_covariance(n, rng.random(n) + 0.2, seed=seed + 5000 + k)
        chan = ChannelTrace((rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2))
        g = estimator.mmse_gradient(
            model.spectrum(), chan, PowerAllocation(rng.random(n), model.sigma_sq), NoiseModel(0.1)
        )
        if np.any(g > 1e-12):
            ok, bad = False, f"seed={seed + 5000 + k} positive slope {g.max():.3g}"
            break
    out.append(CheckResult("gradient", "never_positive", ok, bad))
    return out


def _suite_majorization(seed, trials):
    out = []
    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + k)
        n = int(rng.integers(3, 10))
        e = (rng.random(n) < 0.6) * (0.5 + rng.random(n))
        e[0] += 0.25
        region = FeasibleRegion(np.ones(n), EnergyTrace(e))
        flat = most_majorized(region)
        rep = check_feasible(flat, region)
        if not rep.feasible:
            ok, bad = False, f"seed={seed + k} staircase infeasible"
            break
        for draw in range(8):
            other = _random_feasible(region, _rng(seed + k * 100 + draw))
            if not is_majorized(flat.energy, other.energy):
                ok, bad = False, f"seed={seed + k} draw={draw} staircase not most even"
                break
        if not ok:
            break
    out.append(CheckResult("majorization", "staircase_below_all_draws", ok, bad))

    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + 7000 + k)
        n = int(rng.integers(3, 8))
        v = rng.random(n)
        perm = rng.permutation(n)
        if not (is_majorized(v, v[perm]) and is_majorized(v[perm], v)):
            ok, bad = False, f"seed={seed + 7000 + k} permutation not mutually even"
            break
    out.append(CheckResult("majorization", "permutation_invariant", ok, bad))
    return out


def _suite_solver(seed, trials):
    out = []
    ok, bad = True, ""
    recon_ok, recon_bad = True, ""
    order_ok, order_bad = True, ""
    for k in range(trials):
        s = seed + k
        spect, chan, region, noise = _random_diag_instance(s)
        try:
            alloc, res = solve_optimal(spect, chan, region, noise)
        except EhAllocateError as exc:
            ok, bad = False, f"seed={s} solver raised {type(exc).__name__}"
            break
        diag = res.diagnostics
        if not diag.converged:
            ok, bad = False, f"seed={s} stop_reason={diag.stop_reason}"
            break
        rep = check_feasible(alloc, region)
        if not rep.feasible:
            ok, bad = False, f"seed={s} violation {rep.worst_violation:.3g}"
            break

        # closed-form reconstruction from the recovered thresholds
        kappa = diag.kappa
        if kappa is not None and recon_ok:
            rho = noise.gamma * chan.gain_sq * region.sigma_sq
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(kappa > 0, rho / np.maximum(kappa, 1e-300), np.inf)
            a_hat = np.where(rho > 0, np.maximum(np.sqrt(ratio) - 1.0, 0.0) / np.maximum(rho, 1e-300), 0.0)
            mask = region.sigma_sq > 1e-12 * region.sigma_sq.max()
            scale = max(1.0, np.max(np.abs(alloc.a)))
            if np.max(np.abs((a_hat - alloc.a)[mask])) > 1e-5 * scale:
                recon_ok = False
                recon_bad = f"seed={s} threshold form off by {np.max(np.abs((a_hat - alloc.a)[mask])):.3g}"
            if np.any(np.diff(kappa[mask]) > 1e-7 * max(1.0, np.max(np.abs(kappa[mask])))):
                recon_ok = False
                recon_bad = f"seed={s} thresholds not monotone"

        if order_ok:
            _, res_rel = solve_relaxed(spect, chan, region, noise)
            g_err = estimator.mmse_woodbury(spect, chan, greedy_policy(region), noise)
            tol = 1e-7 * max(1.0, res.mse)
            if not (res_rel.mse <= res.mse + tol and res.mse <= g_err + tol):
                order_ok = False
                order_bad = f"seed={s} ordering relaxed={res_rel.mse:.6g} causal={res.mse:.6g} greedy={g_err:.6g}"
    out.append(CheckResult("solver", "converges_feasible", ok, bad))
    out.append(CheckResult("solver", "threshold_reconstruction", recon_ok, recon_bad))
    out.append(CheckResult("solver", "relaxation_ordering", order_ok, order_bad))
    return out


def _suite_policies(seed, trials):
    out = []
    ok, bad = True, ""
    for k in range(trials):
        s = seed + k
        spect, chan, region, noise = _random_diag_instance(s)
        opt = run_policy("optimal", spect, chan, region, noise)
        win = run_policy(f"upper-{region.n}", spect, chan, region, noise)
        if win.mse > opt.mse * (1 + 1e-6) + 1e-12:
            ok, bad = False, f"seed={s} whole-horizon window worse than optimal"
            break
    out.append(CheckResult("policies", "full_window_matches_optimal", ok, bad))

    ok, bad = True, ""
    for k in range(trials):
        rng = _rng(seed + 8000 + k)
        n = int(rng.integers(3, 8))
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        u /= np.linalg.norm(u)
        sigma_sq = np.abs(u) ** 2  # rank-one: unit total power
        e = (rng.random(n) < 0.7) * rng.random(n)
        e[0] += 0.3
        region = FeasibleRegion(sigma_sq, EnergyTrace(e))
        chan = ChannelTrace.static(n)
        alloc = parameter_greedy(region, chan)
        rep = check_feasible(alloc, region)
        if not rep.feasible:
            ok, bad = False, f"seed={seed + 8000 + k} infeasible"
            break
        spect = SpectrumDecomposition(np.array([1.0]), u[:, None])
        noise = NoiseModel(0.1)
        err = estimator.mmse_woodbury(spect, chan, alloc, noise)
        target = 1.0 / (1.0 + noise.gamma * region.effective_total)
        if abs(err - target) > 1e-8:
            ok, bad = False, f"seed={seed + 8000 + k} single-mode error {err:.8g} vs {target:.8g}"
            break
    out.append(CheckResult("policies", "rank_one_concentration", ok, bad))
    return out


SUITES = {
    "covariance": _suite_covariance,
    "estimator": _suite_estimator,
    "gradient": _suite_gradient,
    "majorization": _suite_majorization,
    "solver": _suite_solver,
    "policies": _suite_policies,
}


def run_suite(name, seed=0, trials=12):
    if name not in SUITES:
        raise InvalidConfig(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](seed + 10_000 * (sorted(SUITES).index(name) + 1), trials)


def run_all(names=None, seed=0, trials=12):
    names = list(SUITES) if names is None else list(names)
    results = []
    for name in names:
        results.extend(run_suite(name, seed=seed, trials=trials))
    return results
