"""Numpy fallback for the compiled kernels (same contracts as ``_kernels``)."""

import numpy as np


def dykstra_project(y, w, cap, total, tol, max_sweeps):
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    cap = np.asarray(cap, dtype=np.float64)
    n = y.shape[0]
    m = cap.shape[0]

    x = y.copy()
    wsq = np.cumsum(w * w)
    wsq_all = wsq[-1] if n else 0.0
    # one correction vector per set: m half-spaces, hyperplane, orthant
    p = np.zeros((m + 2, n))
    ftol = tol * max(1.0, abs(total))

    sweeps_done = 0
    for sweep in range(max_sweeps):
        snap = x.copy()

        for i in range(m):
            head = slice(0, i + 1)
            z = x[head] + p[i, head]
            dot = np.dot(w[head], z)
            if dot > cap[i] and wsq[i] > 0.0:
                xnew = z - ((dot - cap[i]) / wsq[i]) * w[head]
                p[i, head] = z - xnew
                x[head] = xnew
            else:
                p[i, head] = 0.0
                x[head] = z

        z = x + p[m]
        xnew = z - ((np.dot(w, z) - total) / wsq_all) * w
        p[m] = z - xnew
        x = xnew

        z = x + p[m + 1]
        xnew = np.maximum(z, 0.0)
        p[m + 1] = z - xnew
        x = xnew

        sweeps_done = sweep + 1
        # corrections can hold the iterate still for a few sweeps while they
        # accumulate, so a small step alone is not proof of convergence
        if np.max(np.abs(x - snap), initial=0.0) <= tol:
            cum = np.cumsum(w * x)
            if (
                abs(cum[-1] - total) <= ftol
                and (m == 0 or np.max(cum[:m] - cap) <= ftol)
            ):
                break

    return x, sweeps_done


def diag_err(a, num, rate, gamma):
    return float(np.sum(num / (1.0 + gamma * rate * a)))


def diag_err_grad(a, num, rate, gamma, grad_out):
    den = 1.0 + gamma * rate * a
    np.divide(-gamma * num * rate, den * den, out=grad_out)
    return float(np.sum(num / den))
