"""Monte Carlo harness: policy comparison curves and timing benchmarks.

Experiments sweep the arrival probability ``p`` of Bernoulli energy harvests
and average the normalized MMSE of each policy over seeded trials.  Seeding
is hierarchical: every (stream, grid-point, trial) triple maps through a
splitmix-style hash to its own PCG64 generator, so runs are reproducible
bit-for-bit regardless of execution order or worker count.
"""

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .covariance import (
    CovarianceModel,
    SpectrumDecomposition,
    build_lowpass_cwss,
    dft_matrix,
    haar_unitary,
)
from .energy import EnergyTrace, FeasibleRegion
from .errors import EhAllocateError, InvalidConfig
from .estimator import ChannelTrace, NoiseModel
from .policies import SamplingPlan, run_policy

__all__ = [
    "AggregateStats",
    "ExperimentConfig",
    "ExperimentResult",
    "eigen_profile",
    "run_experiment",
    "sample_bernoulli_arrivals",
    "sample_rayleigh_channel",
    "timing_benchmark",
    "write_curves_csv",
    "write_gaps_csv",
    "write_records_jsonl",
    "write_timing_csv",
]

_M64 = (1 << 64) - 1
# stream tags for the hierarchical seeding
_STREAM_UNITARY = 1
_STREAM_ARRIVALS = 2
_STREAM_CHANNEL = 3


def derive_seed(*parts):
    """Chain splitmix64 finalizers over integer parts -> 64-bit seed."""
    x = 0x9E3779B97F4A7C15
    for part in parts:
        x = (x + int(part)) & _M64
        x ^= x >> 30
        x = (x * 0xBF58476D1CE4E5B9) & _M64
        x ^= x >> 27
        x = (x * 0x94D049BB133111EB) & _M64
        x ^= x >> 31
    return x


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def sample_bernoulli_arrivals(n, p, e0, rng):
    """Arrivals ``e0 * Bernoulli(p)`` per slot."""
    return EnergyTrace(e0 * (rng.random(n) < p).astype(np.float64))


def sample_rayleigh_channel(n, rng):
    """i.i.d. ``CN(0, 1)`` channel coefficients."""
    h = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    return ChannelTrace(h)


def eigen_profile(kind, s, p_x, ratio=0.7):
    """Eigenvalue profile on the occupied bins: 'flat' or 'geometric' (ratio^k)."""
    if kind == "flat":
        lam = np.full(s, 1.0)
    elif kind == "geometric":
        lam = ratio ** np.arange(s)
    else:
        raise InvalidConfig(f"unknown eigen profile {kind!r}")
    return p_x * lam / np.sum(lam)


@dataclass
class ExperimentConfig:
    n: int = 16
    s: int = 4
    p_x: Optional[float] = None  # default: n, i.e. unit slot variance
    sigma_w_sq: float = 1e-3
    eigen: str = "geometric"
    geometric_ratio: float = 0.7
    unitary: str = "haar"  # 'haar' or 'dft'
    channel: str = "rayleigh"  # 'rayleigh' or 'static'
    p_grid: tuple = tuple(np.round(np.arange(1, 11) * 0.1, 10))
    e0: float = 1.0
    policies: tuple = ("optimal", "upper-n")
    trials: int = 500
    master_seed: int = 20240
    fixed_u: bool = True
    t_d: Optional[int] = None  # equidistant sampling offset (default n/s - 1)
    jobs: int = 1

    def __post_init__(self):
        if self.n < 1 or self.s < 1 or self.s > self.n:
            raise InvalidConfig(f"bad dimensions n={self.n}, s={self.s}")
        if self.p_x is None:
            self.p_x = float(self.n)
        if self.unitary not in ("haar", "dft"):
            raise InvalidConfig(f"unknown unitary {self.unitary!r}")
        if self.channel not in ("rayleigh", "static"):
            raise InvalidConfig(f"unknown channel {self.channel!r}")
        if not self.policies:
            raise InvalidConfig("need at least one policy")
        self.p_grid = tuple(float(p) for p in self.p_grid)
        if any(not 0.0 <= p <= 1.0 for p in self.p_grid):
            raise InvalidConfig("arrival probabilities must lie in [0, 1]")
        self.policies = tuple(self.policies)
        if any(pol.startswith("lower") for pol in self.policies) and self.eigen != "flat":
            raise InvalidConfig("lower-bound windows require the flat eigen profile")
        if "equidistant" in self.policies and self.n % self.s != 0:
            raise InvalidConfig("equidistant sampling needs s to divide n")

    def to_dict(self):
        doc = asdict(self)
        doc["p_grid"] = list(self.p_grid)
        doc["policies"] = list(self.policies)
        return doc

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise InvalidConfig(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)


def _build_model(config, seed):
    lam = eigen_profile(config.eigen, config.s, config.p_x, config.geometric_ratio)
    if config.unitary == "dft":
        if config.eigen == "flat" and config.n % config.s == 0:
            return build_lowpass_cwss(config.n, config.s, config.p_x)
        basis = dft_matrix(config.n)[:, : config.s]
        matrix = (basis * lam) @ basis.conj().T
        matrix = 0.5 * (matrix + matrix.conj().T)
        spect = SpectrumDecomposition(lam, basis)
        return CovarianceModel(matrix, spectrum=spect, _validated=True)
    basis = haar_unitary(config.n, seed)[:, : config.s]
    matrix = (basis * lam) @ basis.conj().T
    matrix = 0.5 * (matrix + matrix.conj().T)
    spect = SpectrumDecomposition(lam, basis)
    return CovarianceModel(matrix, spectrum=spect, _validated=True)


def _run_trial(config, j, k):
    """All policies on the shared draw for grid point ``j``, trial ``k``."""
    p = config.p_grid[j]
    arrivals = sample_bernoulli_arrivals(
        config.n, p, config.e0, _rng(derive_seed(config.master_seed, _STREAM_ARRIVALS, j, k))
    )
    if config.channel == "rayleigh":
        chan = sample_rayleigh_channel(
            config.n, _rng(derive_seed(config.master_seed, _STREAM_CHANNEL, j, k))
        )
    else:
        chan = ChannelTrace.static(config.n)

    if config.fixed_u:
        u_seed = derive_seed(config.master_seed, _STREAM_UNITARY)
    else:
        u_seed = derive_seed(config.master_seed, _STREAM_UNITARY, j, k)
    model = _build_model(config, u_seed)
    noise = NoiseModel(config.sigma_w_sq)

    records = []
    if arrivals.total <= 0.0:
        # nothing to transmit: the estimator error is the full signal power
        for pol in config.policies:
            records.append(
                {
                    "policy": pol,
                    "p": p,
                    "trial": k,
                    "nmse": 1.0,
                    "wall_time": 0.0,
                    "converged": True,
                    "error": None,
                }
            )
        return records

    spect = model.spectrum()
    region = FeasibleRegion(model.sigma_sq, arrivals)
    plan = None
    if "equidistant" in config.policies:
        t_d = config.n // config.s - 1 if config.t_d is None else config.t_d
        plan = SamplingPlan(config.n, config.s, t_d)

    for pol in config.policies:
        try:
            res = run_policy(pol, spect, chan, region, noise, plan=plan)
            diag = res.diagnostics
            records.append(
                {
                    "policy": pol,
                    "p": p,
                    "trial": k,
                    "nmse": res.normalized_mse,
                    "wall_time": res.wall_time,
                    "converged": bool(diag.converged) if diag is not None else True,
                    "error": None,
                }
            )
        except EhAllocateError as exc:
            records.append(
                {
                    "policy": pol,
                    "p": p,
                    "trial": k,
                    "nmse": float("nan"),
                    "wall_time": 0.0,
                    "converged": False,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    return records


def _run_trial_star(args):
    return _run_trial(*args)


@dataclass
class AggregateStats:
    policies: tuple
    p_grid: tuple
    mean_nmse: np.ndarray  # (n_policies, n_p)
    std_nmse: np.ndarray
    trial_count: np.ndarray  # valid trials per cell
    failure_count: np.ndarray
    reference: Optional[str] = None
    mean_gap: Optional[np.ndarray] = None  # vs reference, same layout
    std_gap: Optional[np.ndarray] = None

    def row(self, policy):
        return self.mean_nmse[self.policies.index(policy)]

    def same_values(self, other):
        """Equality of everything statistical (wall times never enter stats)."""
        return (
            self.policies == other.policies
            and self.p_grid == other.p_grid
            and np.array_equal(self.mean_nmse, other.mean_nmse, equal_nan=True)
            and np.array_equal(self.std_nmse, other.std_nmse, equal_nan=True)
            and np.array_equal(self.trial_count, other.trial_count)
            and np.array_equal(self.failure_count, other.failure_count)
        )

    @classmethod
    def from_records(cls, records, policies, p_grid, reference="optimal"):
        policies = tuple(policies)
        p_grid = tuple(p_grid)
        n_pol, n_p = len(policies), len(p_grid)
        pol_idx = {pol: i for i, pol in enumerate(policies)}
        p_idx = {p: j for j, p in enumerate(p_grid)}
        sums = np.zeros((n_pol, n_p))
        sq_sums = np.zeros((n_pol, n_p))
        counts = np.zeros((n_pol, n_p), dtype=np.int64)
        fails = np.zeros((n_pol, n_p), dtype=np.int64)
        per_trial = {}
        for rec in records:
            i, j = pol_idx[rec["policy"]], p_idx[rec["p"]]
            v = rec["nmse"]
            if np.isnan(v):
                fails[i, j] += 1
                continue
            sums[i, j] += v
            sq_sums[i, j] += v * v
            counts[i, j] += 1
            per_trial[(i, j, rec["trial"])] = v

        with np.errstate(invalid="ignore", divide="ignore"):
            mean = sums / counts
            var = np.maximum(sq_sums / counts - mean**2, 0.0)
        std = np.sqrt(var)

        mean_gap = std_gap = None
        if reference in pol_idx:
            r = pol_idx[reference]
            gsums = np.zeros((n_pol, n_p))
            gsq = np.zeros((n_pol, n_p))
            gcounts = np.zeros((n_pol, n_p), dtype=np.int64)
            for (i, j, k), v in per_trial.items():
                ref_v = per_trial.get((r, j, k))
                if ref_v is None:
                    continue
                g = v - ref_v
                gsums[i, j] += g
                gsq[i, j] += g * g
                gcounts[i, j] += 1
            with np.errstate(invalid="ignore", divide="ignore"):
                mean_gap = gsums / gcounts
                std_gap = np.sqrt(np.maximum(gsq / gcounts - mean_gap**2, 0.0))
        return cls(
            policies,
            p_grid,
            mean,
            std,
            counts,
            fails,
            reference if reference in pol_idx else None,
            mean_gap,
            std_gap,
        )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    stats: AggregateStats
    wall_time: float


def run_experiment(config, jobs=None):
    """Run the full grid; deterministic in ``config.master_seed`` for any ``jobs``."""
    t0 = time.perf_counter()
    jobs = config.jobs if jobs is None else jobs
    tasks = [
        (config, j, k)
        for j in range(len(config.p_grid))
        for k in range(config.trials)
    ]
    records = []
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunk = max(1, len(tasks) // (8 * jobs))
            for recs in pool.map(_run_trial_star, tasks, chunksize=chunk):
                records.extend(recs)
    else:
        for task in tasks:
            records.extend(_run_trial_star(task))
    stats = AggregateStats.from_records(records, config.policies, config.p_grid)
    return ExperimentResult(config, records, stats, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# timing


def timing_benchmark(ns=(16, 32, 64), trials=3, master_seed=7011, p=0.3,
                     eigen="geometric", channel="rayleigh", reference_n=16):
    """Mean wall time of the optimal policy and the window ladder per horizon.

    Full-band setup (s = n); rows report times normalized by the optimal
    policy's mean at ``reference_n``.
    """
    raw = {}
    for n in ns:
        policy_ids = ["optimal", "upper-2", f"upper-{n // 2}", f"upper-{n}"]
        cfg = ExperimentConfig(
            n=n,
            s=n,
            eigen=eigen,
            unitary="haar",
            channel=channel,
            p_grid=(p,),
            policies=tuple(policy_ids),
            trials=trials,
            master_seed=master_seed,
        )
        times = {pol: [] for pol in policy_ids}
        for k in range(trials):
            for rec in _run_trial(cfg, 0, k):
                if rec["error"] is None:
                    times[rec["policy"]].append(rec["wall_time"])
        raw[n] = {pol: float(np.mean(ts)) if ts else float("nan")
                  for pol, ts in times.items()}

    ref = raw.get(reference_n, next(iter(raw.values())))["optimal"]
    rows = []
    for n in ns:
        for pol, mean_t in raw[n].items():
            rows.append(
                {
                    "n": n,
                    "policy": pol,
                    "mean_time": mean_t,
                    "normalized": mean_t / ref,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# output files


def write_curves_csv(path, stats):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(
            fh, fieldnames=["policy", "p", "mean_nmse", "std_nmse", "trials", "failures"]
        )
        wr.writeheader()
        for i, pol in enumerate(stats.policies):
            for j, p in enumerate(stats.p_grid):
                wr.writerow(
                    {
                        "policy": pol,
                        "p": p,
                        "mean_nmse": repr(float(stats.mean_nmse[i, j])),
                        "std_nmse": repr(float(stats.std_nmse[i, j])),
                        "trials": int(stats.trial_count[i, j]),
                        "failures": int(stats.failure_count[i, j]),
                    }
                )


def write_gaps_csv(path, stats):
    if stats.mean_gap is None:
        raise InvalidConfig("no reference policy in this run, gaps undefined")
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["policy", "p", "mean_gap", "std_gap"])
        wr.writeheader()
        for i, pol in enumerate(stats.policies):
            if pol == stats.reference:
                continue
            for j, p in enumerate(stats.p_grid):
                wr.writerow(
                    {
                        "policy": pol,
                        "p": p,
                        "mean_gap": repr(float(stats.mean_gap[i, j])),
                        "std_gap": repr(float(stats.std_gap[i, j])),
                    }
                )


def write_timing_csv(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["n", "policy", "mean_time", "normalized"])
        wr.writeheader()
        for row in rows:
            wr.writerow(row)


def write_records_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
