# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Two kernels carry essentially all of the solver's per-iteration cost:

* ``dykstra_project`` — cyclic Dykstra projection onto the intersection of the
  prefix-budget half-spaces, the total-budget hyperplane and the nonnegative
  orthant (the energy-causality polytope in allocation coordinates).
* ``diag_err`` / ``diag_err_grad`` — the separable error sums used by the
  window heuristics, uncorrelated models and sampled problems.

A pure-numpy twin lives in ``_kernels_py``; ``kernels`` picks one at import.
"""

from libc.math cimport fabs

import numpy as np


def dykstra_project(double[::1] y, double[::1] w, double[::1] cap, double total,
                    double tol, int max_sweeps):
    """Project ``y`` onto ``{x >= 0, cumsum(w*x)[:m] <= cap, w.x = total}``.

    ``cap`` holds the right-hand sides of the first ``m`` prefix constraints
    (prefix of length ``i+1`` for ``cap[i]``); pass an empty array for a
    total-budget-only region.  Returns ``(x, sweeps)``.
    """
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t m = cap.shape[0]
    cdef Py_ssize_t n_sets = m + 2
    cdef Py_ssize_t i, l, sweep
    cdef double dot, viol, delta, diff, z, xnew, wsq_all, cum, worst, ftol

    ftol = tol * (1.0 if total < 1.0 and total > -1.0 else fabs(total))

    x_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] x = x_arr
    for l in range(n):
        x[l] = y[l]

    # prefix sums of w^2 for the half-space / hyperplane projections
    wsq_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] wsq = wsq_arr
    dot = 0.0
    for l in range(n):
        dot += w[l] * w[l]
        wsq[l] = dot
    wsq_all = dot

    corr_arr = np.zeros((n_sets, n), dtype=np.float64)
    cdef double[:, ::1] p = corr_arr

    snap_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] snap = snap_arr

    cdef Py_ssize_t sweeps_done = 0
    for sweep in range(max_sweeps):
        for l in range(n):
            snap[l] = x[l]

        # prefix half-spaces: set i touches coordinates 0..i only
        for i in range(m):
            dot = 0.0
            for l in range(i + 1):
                z = x[l] + p[i, l]
                x[l] = z
                dot += w[l] * z
            if dot > cap[i] and wsq[i] > 0.0:
                viol = (dot - cap[i]) / wsq[i]
                for l in range(i + 1):
                    xnew = x[l] - viol * w[l]
                    p[i, l] = x[l] - xnew
                    x[l] = xnew
            else:
                for l in range(i + 1):
                    p[i, l] = 0.0

        # total-budget hyperplane
        dot = 0.0
        for l in range(n):
            z = x[l] + p[m, l]
            x[l] = z
            dot += w[l] * z
        viol = (dot - total) / wsq_all
        for l in range(n):
            xnew = x[l] - viol * w[l]
            p[m, l] = x[l] - xnew
            x[l] = xnew

        # nonnegative orthant
        for l in range(n):
            z = x[l] + p[m + 1, l]
            if z < 0.0:
                p[m + 1, l] = z
                x[l] = 0.0
            else:
                p[m + 1, l] = 0.0
                x[l] = z

        sweeps_done = sweep + 1
        delta = 0.0
        for l in range(n):
            diff = fabs(x[l] - snap[l])
            if diff > delta:
                delta = diff
        if delta <= tol:
            # corrections can hold the iterate still for a few sweeps while
            # they accumulate; only a feasible stationary point is converged
            cum = 0.0
            worst = 0.0
            for l in range(n):
                cum += w[l] * x[l]
                if l < m and cum - cap[l] > worst:
                    worst = cum - cap[l]
            if worst <= ftol and fabs(cum - total) <= ftol:
                break

    return x_arr, sweeps_done


def diag_err(double[::1] a, double[::1] num, double[::1] rate, double gamma):
    """Return ``sum num_i / (1 + gamma * rate_i * a_i)``."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i
    cdef double err = 0.0
    for i in range(n):
        err += num[i] / (1.0 + gamma * rate[i] * a[i])
    return err


def diag_err_grad(double[::1] a, double[::1] num, double[::1] rate, double gamma,
                  double[::1] grad_out):
    """Like :func:`diag_err` but also fills the gradient into ``grad_out``."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i
    cdef double err = 0.0
    cdef double den
    for i in range(n):
        den = 1.0 + gamma * rate[i] * a[i]
        err += num[i] / den
        grad_out[i] = -gamma * num[i] * rate[i] / (den * den)
    return err
