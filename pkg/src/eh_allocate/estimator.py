"""MMSE evaluation for amplify-and-forward transmission of a Gaussian signal.

The receiver observes ``y_t = h_t sqrt(a_t) x_t + w_t`` over ``n`` slots and
estimates the whole signal vector by its conditional mean.  The resulting
error has two equivalent expressions: the direct Schur-complement form in
observation space, and the Woodbury form

    err(a) = tr[ (diag(1/lambda) + gamma * U^H diag(|h|^2 a) U)^(-1) ]

over the reduced spectrum ``(lambda, U)`` of the signal covariance, which is
the one the solver differentiates.
"""

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import (
    DelayOutOfRange,
    DimensionMismatch,
    FlatSpectrumRequired,
    InvalidConfig,
    RankError,
)

__all__ = [
    "ChannelTrace",
    "NoiseModel",
    "PowerAllocation",
    "lower_bound_flat",
    "mmse_direct",
    "mmse_gradient",
    "mmse_sampled_lowpass",
    "mmse_woodbury",
    "upper_bound_uncorrelated",
]

# above this condition number the direct form defers to the reduced spectrum
_DIRECT_COND_MAX = 1e12


class ChannelTrace:
    """Complex channel coefficients for one horizon, with cached ``|h|^2``."""

    def __init__(self, h):
        h = np.asarray(h, dtype=np.complex128)
        if h.ndim != 1 or h.shape[0] < 1:
            raise DimensionMismatch("channel trace must be a nonempty vector")
        self.h = h
        self.gain_sq = np.ascontiguousarray(np.abs(h) ** 2)

    @property
    def n(self):
        return self.h.shape[0]

    @classmethod
    def static(cls, n):
        """Unit-gain channel on every slot."""
        return cls(np.ones(n, dtype=np.complex128))


class NoiseModel:
    """Receiver noise ``w_t ~ CN(0, sigma_w_sq)``; ``gamma = 1/sigma_w_sq``."""

    def __init__(self, sigma_w_sq):
        if not sigma_w_sq > 0.0:
            raise InvalidConfig("sigma_w_sq must be positive")
        self.sigma_w_sq = float(sigma_w_sq)
        self.gamma = 1.0 / self.sigma_w_sq


class PowerAllocation:
    """Per-slot amplification powers ``a_t`` paired with the slot variances.

    The consumed energy is ``J_t = a_t * sigma_sq_t`` (unit slot length).
    """

    def __init__(self, a, sigma_sq):
        a = np.ascontiguousarray(a, dtype=np.float64)
        sigma_sq = np.ascontiguousarray(sigma_sq, dtype=np.float64)
        if a.ndim != 1 or a.shape != sigma_sq.shape:
            raise DimensionMismatch(
                f"allocation shape {a.shape} does not match variances {sigma_sq.shape}"
            )
        scale = max(1.0, float(np.max(a, initial=0.0)))
        if np.min(a, initial=0.0) < -1e-12 * scale:
            raise InvalidConfig(f"allocation has negative entry {np.min(a):.3e}")
        self.a = np.maximum(a, 0.0)
        self.sigma_sq = sigma_sq

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def energy(self):
        return self.a * self.sigma_sq

    @property
    def total_energy(self):
        return float(np.sum(self.energy))


def _check_n(*lengths):
    if len(set(lengths)) != 1:
        raise DimensionMismatch(f"inconsistent lengths {lengths}")


def mmse_direct(model, channel, alloc, noise):
    """MMSE via the observation-space Schur complement.

    Defers to :func:`mmse_woodbury` when the covariance is rank-deficient or
    conditioned worse than 1e12 — the inverse there only involves the reduced
    spectrum, so no regularization is needed.
    """
    _check_n(model.n, channel.n, alloc.n)
    spect = model.spectrum()
    lam = spect.eigenvalues
    if spect.rank < model.n or lam.max() > _DIRECT_COND_MAX * lam.min():
        return mmse_woodbury(spect, channel, alloc, noise)

    b = channel.h * np.sqrt(alloc.a)
    k_y = (b[:, None] * model.matrix) * b.conj()[None, :]
    k_y[np.diag_indices_from(k_y)] += noise.sigma_w_sq
    chol = sla.cholesky(k_y, lower=True)
    x = sla.solve_triangular(chol, b[:, None] * model.matrix, lower=True)
    err = model.p_x - float(np.sum(np.abs(x) ** 2))
    return max(err, 0.0)


def _reduced_normal_matrix(spectrum, channel, alloc, noise):
    d = noise.gamma * channel.gain_sq * alloc.a
    u = spectrum.basis
    m = (u.conj().T * d) @ u
    m[np.diag_indices_from(m)] += 1.0 / spectrum.eigenvalues
    return m


def mmse_woodbury(spectrum, channel, alloc, noise):
    """MMSE as ``tr(M^-1)`` with ``M`` the reduced-spectrum normal matrix."""
    _check_n(spectrum.n, channel.n, alloc.n)
    m = _reduced_normal_matrix(spectrum, channel, alloc, noise)
    chol = sla.cholesky(m, lower=True)
    linv = sla.solve_triangular(chol, np.eye(spectrum.rank), lower=True)
    return float(np.sum(np.abs(linv) ** 2))


def mmse_gradient(spectrum, channel, alloc, noise):
    """Gradient of :func:`mmse_woodbury` with respect to the allocation.

    ``d err / d a_t = -gamma |h_t|^2 [U M^-2 U^H]_tt``, evaluated via one
    Cholesky solve against ``U^H``.
    """
    _check_n(spectrum.n, channel.n, alloc.n)
    m = _reduced_normal_matrix(spectrum, channel, alloc, noise)
    chol = sla.cho_factor(m, lower=True)
    v = sla.cho_solve(chol, spectrum.basis.conj().T)
    return -noise.gamma * channel.gain_sq * np.sum(np.abs(v) ** 2, axis=0)


def mmse_sampled_lowpass(n, s, t_d, alloc_bar, channel, noise, p_x):
    """MMSE of a low-pass model sampled on ``s`` equispaced slots.

    With ``delta = n/s``, transmissions happen on slots ``delta*r + t_d``
    (0-indexed) with powers ``alloc_bar[r]``; the error separates per sample:
    ``sum_r (p_x/s) / (1 + gamma * abar_r * (p_x/n) * |h|^2)``.
    """
    if n % s != 0:
        raise RankError(f"s={s} must divide n={n}")
    delta = n // s
    if not 0 <= t_d <= delta - 1:
        raise DelayOutOfRange(f"t_d={t_d} outside [0, {delta - 1}]")
    abar = np.asarray(alloc_bar, dtype=np.float64)
    if abar.shape != (s,):
        raise DimensionMismatch(f"alloc_bar must have shape ({s},)")
    _check_n(n, channel.n)
    slots = delta * np.arange(s) + t_d
    var = p_x / n
    den = 1.0 + noise.gamma * abar * var * channel.gain_sq[slots]
    return float(np.sum((p_x / s) / den))


def upper_bound_uncorrelated(model, channel, alloc, noise):
    """Diagonal bound: the MMSE of the same model with off-diagonals dropped.

    Equals the true MMSE when the covariance is diagonal; otherwise an upper
    bound.
    """
    _check_n(model.n, channel.n, alloc.n)
    var = np.ascontiguousarray(model.sigma_sq)
    rate = np.ascontiguousarray(channel.gain_sq * var)
    return kernels.diag_err(alloc.a, var, rate, noise.gamma)


def lower_bound_flat(n, s, channel, alloc, noise, p_x, sigma_sq, eigenvalues=None):
    """Rank-``s`` lower bound ``(p_x/s) * (sum_t 1/(1+gamma|h|^2 sigma^2 a) + s - n)``.

    Only valid for models whose ``s`` nonzero eigenvalues are equal; pass
    ``eigenvalues`` to have that checked (1e-9 relative).
    """
    _check_n(n, channel.n, alloc.n)
    if eigenvalues is not None:
        lam = np.asarray(eigenvalues, dtype=np.float64)
        if lam.max() - lam.min() > 1e-9 * lam.max():
            raise FlatSpectrumRequired(
                "nonzero eigenvalues differ by more than 1e-9 relative"
            )
    sigma_sq = np.ascontiguousarray(sigma_sq, dtype=np.float64)
    ones = np.ones(n)
    rate = np.ascontiguousarray(channel.gain_sq * sigma_sq)
    err_b = kernels.diag_err(alloc.a, ones, rate, noise.gamma)
    return (p_x / s) * (err_b + s - n)
