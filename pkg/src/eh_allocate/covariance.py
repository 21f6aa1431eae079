"""Signal covariance models and their reduced spectral decompositions.

The estimation problem only ever sees a covariance through the pair
``(eigenvalues, basis)`` of its nonzero eigenspace, so every model carries a
(lazily computed) :class:`SpectrumDecomposition`.  Builders that know their
decomposition analytically (DFT-diagonalized and rank-one models) attach it
directly, keeping the natural column-index order; everything else goes through
a dense Hermitian EVD with eigenvalues sorted descending.
"""

import json

import numpy as np

from .errors import (
    DimensionMismatch,
    NotHermitian,
    NotPSD,
    NotUnit,
    RankError,
    RhoOutOfRange,
)

__all__ = [
    "CovarianceModel",
    "SpectrumDecomposition",
    "build_circulant",
    "build_lowpass_cwss",
    "build_rank_one",
    "build_static_correlation",
    "dft_matrix",
    "haar_unitary",
    "random_haar_covariance",
    "reduced_evd",
]

# eigenvalues below RANK_RTOL * max(eigenvalue) count as zero
RANK_RTOL = 1e-10
HERMITIAN_RTOL = 1e-12
PSD_RTOL = 1e-10


class SpectrumDecomposition:
    """Nonzero eigenpairs of a covariance: ``K = basis @ diag(eigenvalues) @ basis^H``."""

    def __init__(self, eigenvalues, basis):
        eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        basis = np.asarray(basis, dtype=np.complex128)
        if basis.ndim != 2 or eigenvalues.ndim != 1:
            raise DimensionMismatch("basis must be (n, s), eigenvalues (s,)")
        if basis.shape[1] != eigenvalues.shape[0]:
            raise DimensionMismatch(
                f"basis has {basis.shape[1]} columns but {eigenvalues.shape[0]} eigenvalues"
            )
        if np.any(eigenvalues <= 0.0):
            raise RankError("reduced spectrum must keep strictly positive eigenvalues only")
        self.eigenvalues = eigenvalues
        self.basis = basis

    @property
    def n(self):
        return self.basis.shape[0]

    @property
    def rank(self):
        return self.eigenvalues.shape[0]

    @property
    def total_power(self):
        return float(np.sum(self.eigenvalues))

    def is_flat(self, rtol=1e-9):
        """True when all kept eigenvalues agree within ``rtol`` relative."""
        lam = self.eigenvalues
        return bool(lam.max() - lam.min() <= rtol * lam.max())

    def reconstruct(self):
        return (self.basis * self.eigenvalues) @ self.basis.conj().T


class CovarianceModel:
    """An ``n x n`` Hermitian PSD signal covariance.

    ``sigma_sq`` is the (real) diagonal and ``p_x = sum(sigma_sq)`` the total
    signal power; both are derived from the matrix at construction so the
    trace identity holds exactly.
    """

    def __init__(self, matrix, spectrum=None, _validated=False):
        matrix = np.asarray(matrix, dtype=np.complex128)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatch(f"covariance must be square, got {matrix.shape}")
        if not _validated:
            _check_hermitian(matrix)
            matrix = 0.5 * (matrix + matrix.conj().T)
            _check_psd(matrix)
        self.matrix = matrix
        self.sigma_sq = np.maximum(np.real(np.diag(matrix)), 0.0)
        self.p_x = float(np.sum(self.sigma_sq))
        self._spectrum = spectrum

    @property
    def n(self):
        return self.matrix.shape[0]

    def spectrum(self):
        """Reduced decomposition (analytic when the builder attached one)."""
        if self._spectrum is None:
            self._spectrum = reduced_evd(self)
        return self._spectrum

    # -- serialization ------------------------------------------------------

    def to_json(self):
        return json.dumps(
            {
                "n": self.n,
                "re": np.real(self.matrix).tolist(),
                "im": np.imag(self.matrix).tolist(),
            }
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text) if isinstance(text, (str, bytes)) else text
        try:
            n = int(doc["n"])
            re = np.asarray(doc["re"], dtype=np.float64)
            im = np.asarray(doc["im"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DimensionMismatch(f"bad covariance document: {exc}") from None
        if re.shape != (n, n) or im.shape != (n, n):
            raise DimensionMismatch(
                f"covariance document claims n={n} but arrays have shapes "
                f"{re.shape} and {im.shape}"
            )
        return cls(re + 1j * im)


def _check_hermitian(matrix):
    scale = max(1.0, float(np.linalg.norm(matrix)))
    if np.linalg.norm(matrix - matrix.conj().T) > HERMITIAN_RTOL * scale:
        raise NotHermitian("matrix is not Hermitian within tolerance")


def _check_psd(matrix):
    eigs = np.linalg.eigvalsh(matrix)
    floor = -PSD_RTOL * max(1.0, float(eigs[-1]))
    if eigs[0] < floor:
        raise NotPSD(f"minimum eigenvalue {eigs[0]:.3e} below tolerance {floor:.3e}")


def dft_matrix(n):
    """Unitary DFT matrix ``F[t, k] = exp(-2j*pi*t*k/n) / sqrt(n)``."""
    if n < 1:
        raise DimensionMismatch("n must be >= 1")
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def reduced_evd(model, rank_rtol=RANK_RTOL):
    """Dense Hermitian EVD keeping eigenvalues above ``rank_rtol * max``.

    Eigenvalues come back sorted descending with matching basis columns.
    """
    lam, vec = np.linalg.eigh(model.matrix)
    lam = lam[::-1]
    vec = vec[:, ::-1]
    if lam[0] <= 0.0:
        raise RankError("covariance has no positive eigenvalue")
    keep = lam > rank_rtol * lam[0]
    return SpectrumDecomposition(lam[keep], vec[:, keep])


def build_static_correlation(n, rho, p_x):
    """Equicorrelated model ``(p_x/n) * ((1-rho) I + rho 11^T)``.

    PSD requires ``-1/(n-1) <= rho <= 1`` (any rho accepted when n == 1).
    """
    if n < 1:
        raise DimensionMismatch("n must be >= 1")
    if p_x <= 0.0:
        raise NotPSD("p_x must be positive")
    if n > 1 and not (-1.0 / (n - 1) <= rho <= 1.0):
        raise RhoOutOfRange(
            f"rho={rho} outside [{-1.0 / (n - 1):.6f}, 1] for n={n}"
        )
    base = np.full((n, n), rho, dtype=np.float64)
    np.fill_diagonal(base, 1.0)
    return CovarianceModel((p_x / n) * base.astype(np.complex128), _validated=True)

def build_lowpass_cwss(n, s, p_x):
    """Circularly stationary low-pass model: power ``p_x/s`` on the first ``s``
    DFT bins.  ``s`` must divide ``n``."""
    if n < 1:
        raise DimensionMismatch("n must be >= 1")
    if s < 1 or s > n or n % s != 0:
        raise RankError(f"bandwidth s={s} must satisfy 1 <= s <= n and s | n")
    if p_x <= 0.0:
        raise NotPSD("p_x must be positive")
    basis = dft_matrix(n)[:, :s]
    matrix = (p_x / s) * (basis @ basis.conj().T)
    matrix = 0.5 * (matrix + matrix.conj().T)
    spect = SpectrumDecomposition(np.full(s, p_x / s), basis)
    return CovarianceModel(matrix, spectrum=spect, _validated=True)


def build_circulant(first_row):
    """Hermitian PSD circulant model from its first row.

    The DFT diagonalizes it: eigenvalue ``z_k = sum_d v_d exp(-2j*pi*d*k/n)``
    belongs to DFT column ``k``.  Returns ``(model, z)`` with ``z`` the full
    real eigenvalue vector in DFT order.
    """
    v = np.asarray(first_row, dtype=np.complex128)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionMismatch("first_row must be a nonempty vector")
    n = v.shape[0]
    idx = np.arange(n)
    matrix = v[(idx[None, :] - idx[:, None]) % n]
    _check_hermitian(matrix)
    matrix = 0.5 * (matrix + matrix.conj().T)

    z = np.sqrt(n) * (dft_matrix(n) @ v)
    scale = max(1.0, float(np.max(np.abs(z))))
    if np.max(np.abs(np.imag(z))) > PSD_RTOL * scale:
        raise NotHermitian("circulant spectrum has non-real entries")
    z = np.real(z)
    if np.min(z) < -PSD_RTOL * scale:
        raise NotPSD(f"circulant spectrum has negative entry {np.min(z):.3e}")

    keep = z > RANK_RTOL * max(z.max(), 0.0)
    if not np.any(keep):
        raise RankError("circulant covariance has no positive eigenvalue")
    spect = SpectrumDecomposition(z[keep], dft_matrix(n)[:, keep])
    return CovarianceModel(matrix, spectrum=spect, _validated=True), z


def build_rank_one(n, u, p_x):
    """Rank-one model ``p_x * u u^H`` for a unit vector ``u``."""
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 1 or u.shape[0] != n:
        raise DimensionMismatch(f"u must have shape ({n},)")
    if p_x <= 0.0:
        raise NotPSD("p_x must be positive")
    norm = np.linalg.norm(u)
    if abs(norm - 1.0) > 1e-12:
        raise NotUnit(f"|u| = {norm!r} is not 1 within 1e-12")
    matrix = p_x * np.outer(u, u.conj())
    matrix = 0.5 * (matrix + matrix.conj().T)
    spect = SpectrumDecomposition(np.array([p_x]), u[:, None])
    return CovarianceModel(matrix, spectrum=spect, _validated=True)


def haar_unitary(n, seed):
    """Haar-distributed unitary via QR of a complex Ginibre matrix.

    The R-diagonal phases are divided out so the distribution is exactly
    Haar rather than QR-convention dependent.  Deterministic in ``seed``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z / np.sqrt(2.0))
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_haar_covariance(n, eigenvalues, seed):
    """Covariance with prescribed eigenvalues and Haar-random eigenvectors."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.ndim != 1 or lam.shape[0] < 1 or lam.shape[0] > n:
        raise DimensionMismatch("need 1 <= len(eigenvalues) <= n")
    if np.any(lam < 0.0):
        raise NotPSD("eigenvalues must be nonnegative")
    if np.max(lam) <= 0.0:
        raise RankError("need at least one positive eigenvalue")
    basis = haar_unitary(n, seed)[:, : lam.shape[0]]
    matrix = (basis * lam) @ basis.conj().T
    matrix = 0.5 * (matrix + matrix.conj().T)
    keep = lam > RANK_RTOL * lam.max()
    spect = SpectrumDecomposition(lam[keep], basis[:, keep])
    return CovarianceModel(matrix, spectrum=spect, _validated=True)
