"""Command-line front end.

Subcommands:

* ``solve``       one allocation instance from a JSON document
* ``experiment``  Monte Carlo policy comparison over an arrival-rate grid
* ``bench``       wall-time ladder of the optimal policy vs window policies
* ``validate``    seeded invariant suites

Exit codes: 0 success, 1 invalid input, 2 solved-but-not-converged (or, with
``--strict``, any recorded failure).  ``EH_ALLOCATE_JOBS`` supplies a default
worker count when ``--jobs`` is absent.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .covariance import (
    CovarianceModel,
    build_circulant,
    build_lowpass_cwss,
    build_rank_one,
    build_static_correlation,
    random_haar_covariance,
)
from .energy import EnergyTrace, FeasibleRegion, check_feasible
from .errors import EhAllocateError, InvalidConfig
from .estimator import ChannelTrace, NoiseModel
from .experiment import (
    ExperimentConfig,
    run_experiment,
    sample_bernoulli_arrivals,
    sample_rayleigh_channel,
    timing_benchmark,
    write_curves_csv,
    write_gaps_csv,
    write_records_jsonl,
    write_timing_csv,
)
from .kernels import backend_name
from .policies import SamplingPlan, run_policy
from .validation import SUITES, run_all

__all__ = ["main"]


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _require(doc, key, where):
    if key not in doc:
        raise InvalidConfig(f"missing {key!r} in {where}")
    return doc[key]


def _complex_array(doc, where):
    re = np.asarray(_require(doc, "re", where), dtype=np.float64)
    im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=np.float64)
    if re.shape != im.shape:
        raise InvalidConfig(f"re/im shape mismatch in {where}")
    return re + 1j * im


def _build_model(doc):
    kind = _require(doc, "kind", "model")
    if kind == "static-correlation":
        return build_static_correlation(
            int(_require(doc, "n", "model")),
            float(_require(doc, "rho", "model")),
            float(_require(doc, "p_x", "model")),
        )
    if kind == "lowpass":
        return build_lowpass_cwss(
            int(_require(doc, "n", "model")),
            int(_require(doc, "s", "model")),
            float(_require(doc, "p_x", "model")),
        )
    if kind == "circulant":
        model, _ = build_circulant(np.asarray(_require(doc, "first_row", "model"), dtype=np.float64))
        return model
    if kind == "haar":
        return random_haar_covariance(
            int(_require(doc, "n", "model")),
            np.asarray(_require(doc, "eigenvalues", "model"), dtype=np.float64),
            seed=int(doc.get("seed", 0)),
        )
    if kind == "rank-one":
        return build_rank_one(
            int(_require(doc, "n", "model")),
            _complex_array(_require(doc, "u", "model"), "model.u"),
            float(_require(doc, "p_x", "model")),
        )
    if kind == "matrix":
        return CovarianceModel.from_json(_require(doc, "matrix", "model"))
    raise InvalidConfig(f"unknown model kind {kind!r}")


def _build_channel(doc, n):
    kind = doc.get("kind", "static")
    if kind == "static":
        return ChannelTrace.static(n)
    if kind == "rayleigh":
        return sample_rayleigh_channel(n, _rng(int(doc.get("seed", 0))))
    if kind == "explicit":
        h = _complex_array(doc, "channel")
        if h.shape != (n,):
            raise InvalidConfig(f"channel length {h.shape} does not match horizon {n}")
        return ChannelTrace(h)
    raise InvalidConfig(f"unknown channel kind {kind!r}")


def _build_arrivals(doc, n):
    if "values" in doc:
        e = np.asarray(doc["values"], dtype=np.float64)
        if e.shape != (n,):
            raise InvalidConfig(f"arrival length {e.shape} does not match horizon {n}")
        return EnergyTrace(e)
    if doc.get("kind") == "bernoulli":
        return sample_bernoulli_arrivals(
            n,
            float(_require(doc, "p", "arrivals")),
            float(doc.get("e0", 1.0)),
            _rng(int(doc.get("seed", 0))),
        )
    raise InvalidConfig("arrivals need either 'values' or kind='bernoulli'")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise InvalidConfig(f"cannot read {path}: {exc}") from exc


def _cmd_solve(args):
    doc = _load_json(args.config)
    model = _build_model(_require(doc, "model", "instance"))
    n = model.n
    chan = _build_channel(doc.get("channel", {}), n)
    region = FeasibleRegion(model.sigma_sq, _build_arrivals(_require(doc, "arrivals", "instance"), n))
    noise = NoiseModel(float(_require(doc, "noise", "instance")["sigma_w_sq"]))

    policy = _require(doc, "policy", "instance")
    params = doc.get("params", {})
    if policy in ("upper", "lower") and "lw" in params:
        policy = f"{policy}-{int(params['lw'])}"

    plan = None
    if policy == "equidistant":
        spect = model.spectrum()
        delta = n // spect.rank
        plan = SamplingPlan(n, spect.rank, int(params.get("t_d", delta - 1)))

    res = run_policy(policy, model.spectrum(), chan, region, noise, plan=plan)

    report_region = region
    if policy == "relaxed":
        report_region = FeasibleRegion(model.sigma_sq, region.energy, mode="total")
    rep = check_feasible(res.alloc, report_region)

    diag = res.diagnostics
    out = {
        "policy": res.policy_id,
        "alloc": [float(v) for v in res.alloc.a],
        "energy": [float(v) for v in res.alloc.energy],
        "mse": res.mse,
        "normalized_mse": res.normalized_mse,
        "feasible": bool(rep.feasible),
        "worst_violation": float(rep.worst_violation),
        "converged": bool(diag.converged) if diag is not None else True,
        "kkt_residual": float(diag.kkt_residual) if diag is not None else 0.0,
        "wall_time": res.wall_time,
        "backend": backend_name(),
    }
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    if not out["feasible"] or not out["converged"]:
        return 2
    return 0


def _resolve_jobs(flag_value):
    if flag_value is not None:
        return max(1, flag_value)
    env = os.environ.get("EH_ALLOCATE_JOBS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InvalidConfig(f"EH_ALLOCATE_JOBS={env!r} is not an integer") from exc
    return None


def _cmd_experiment(args):
    doc = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["master_seed"] = args.seed
    config = ExperimentConfig.from_dict(doc)
    jobs = _resolve_jobs(args.jobs)

    result = run_experiment(config, jobs=jobs)
    stats = result.stats

    failures = int(stats.failure_count.sum())
    print(f"# {config.trials} trials x {len(config.p_grid)} arrival rates, "
          f"{result.wall_time:.1f}s, backend={backend_name()}, failures={failures}")
    header = "p        " + "".join(f"{pol:>16}" for pol in stats.policies)
    print(header)
    for j, p in enumerate(stats.p_grid):
        row = f"{p:<9.3g}" + "".join(f"{stats.mean_nmse[i, j]:>16.6g}" for i in range(len(stats.policies)))
        print(row)

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_curves_csv(out / "curves.csv", stats)
        if stats.mean_gap is not None:
            write_gaps_csv(out / "gaps.csv", stats)
        write_records_jsonl(out / "records.jsonl", result.records)
        print(f"wrote {out}/curves.csv" + (", gaps.csv" if stats.mean_gap is not None else "")
              + ", records.jsonl")
    if args.strict and failures:
        return 2
    return 0


def _cmd_bench(args):
    ns = tuple(int(v) for v in args.sizes.split(","))
    rows = timing_benchmark(ns=ns, trials=args.trials, master_seed=args.seed or 7011,
                            reference_n=ns[0])
    print(f"# backend={backend_name()}, {args.trials} trials per size, normalized to optimal at n={ns[0]}")
    print(f"{'n':>4} {'policy':>12} {'mean_time':>12} {'relative':>10}")
    for row in rows:
        print(f"{row['n']:>4} {row['policy']:>12} {row['mean_time']:>12.4e} {row['normalized']:>10.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_timing_csv(out / "timing.csv", rows)
        print(f"wrote {out}/timing.csv")
    return 0


def _cmd_validate(args):
    names = None
    if args.only:
        names = [s.strip() for chunk in args.only for s in chunk.split(",") if s.strip()]
        for name in names:
            if name not in SUITES:
                raise InvalidConfig(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    trials = 40 if args.strict else 12
    t0 = time.perf_counter()
    results = run_all(names, seed=args.seed or 0, trials=trials)
    for res in results:
        tag = "PASS" if res.passed else "FAIL"
        line = f"[ {tag} ] {res.suite:>13} :: {res.name}"
        if res.detail and not res.passed:
            line += f"   ({res.detail})"
        print(line)
    n_pass = sum(r.passed for r in results)
    print(f"{len(results)} checks, {n_pass} passed, {len(results) - n_pass} failed "
          f"[{time.perf_counter() - t0:.1f}s]")
    return 0 if n_pass == len(results) else 2


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="eh-allocate",
        description="Transmit-power scheduling for remote estimation under harvested energy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance described by a JSON document")
    p.add_argument("--config", required=True, help="instance JSON path")
    p.add_argument("--out", help="write the result JSON here instead of stdout")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("experiment", help="Monte Carlo comparison over an arrival-rate grid")
    p.add_argument("--config", help="experiment config JSON (defaults are built in)")
    p.add_argument("--out", help="directory for curves.csv, gaps.csv, records.jsonl")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--jobs", type=int, help="worker processes (default: EH_ALLOCATE_JOBS or 1)")
    p.add_argument("--strict", action="store_true", help="exit 2 if any trial failed")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("bench", help="policy runtime ladder across horizon sizes")
    p.add_argument("--sizes", default="16,32,64", help="comma list of horizons")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for timing.csv")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("validate", help="run the seeded invariant suites")
    p.add_argument("--only", action="append", help="suite name(s), comma separable; repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--strict", action="store_true", help="deeper sweeps (more trials per check)")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EhAllocateError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: malformed input ({exc})", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
