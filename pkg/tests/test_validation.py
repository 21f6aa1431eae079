"""Self-check suites: green on the real code, red under a planted bug."""

import numpy as np
import pytest

from eh_allocate import estimator, validation


def test_all_suites_pass():
    results = validation.run_all(seed=31)
    failed = [r for r in results if not r.passed]
    assert not failed, [f"{r.suite}:{r.name} {r.detail}" for r in failed]


def test_every_registered_suite_ran():
    results = validation.run_all(seed=32)
    assert {r.suite for r in results} == set(validation.SUITES)


def test_single_suite_isolated():
    results = validation.run_suite("solver", seed=5)
    assert results and all(r.suite == "solver" for r in results)


def test_seeds_are_reproducible():
    a = validation.run_suite("estimator", seed=7)
    b = validation.run_suite("estimator", seed=7)
    assert [(r.name, r.passed, r.detail) for r in a] == [
        (r.name, r.passed, r.detail) for r in b
    ]


def test_detects_wrong_gradient_sign(monkeypatch):
    real = estimator.mmse_gradient

    def flipped(*args, **kwargs):
        return -real(*args, **kwargs)

    monkeypatch.setattr(estimator, "mmse_gradient", flipped)
    results = validation.run_suite("gradient", seed=3)
    assert any(not r.passed for r in results), "planted sign bug went unnoticed"


def test_detects_corrupted_covariance(monkeypatch):
    from eh_allocate import covariance

    real = covariance.build_static_correlation

    def detuned(n, rho, p_x):
        model = real(n, rho, p_x)
        sigma = model.matrix.copy()
        sigma[0, 0] *= 1.5  # breaks the constant-diagonal structure
        return covariance.CovarianceModel(sigma)

    monkeypatch.setattr(validation, "build_static_correlation", detuned)
    results = validation.run_suite("covariance", seed=3)
    assert any(not r.passed for r in results), "planted covariance bug went unnoticed"


def test_check_result_shape():
    (res, *_) = validation.run_suite("majorization", seed=1)
    assert isinstance(res.passed, (bool, np.bool_))
    assert res.suite == "majorization" and res.name
