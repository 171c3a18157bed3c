"""Dense small-matrix kernels for symmetric and SPD matrices.

Matrices are plain numpy arrays. Every function accepts a single ``(m, m)``
matrix or a stack ``(..., m, m)`` and broadcasts over the leading axes.
"""

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric

#: Eigenvalues / Cholesky pivots at or below this are treated as singular.
EIG_FLOOR = 1e-14
SYM_RTOL = 1e-12
_DIFF_GUARD = 1e-8


def _square(a):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {a.shape}")
    return a


def as_symmetric(a, rtol=SYM_RTOL):
    """Validate near-symmetry and return the symmetrized copy ``(A + A^T)/2``."""
    a = _square(a)
    at = np.swapaxes(a, -1, -2)
    if np.any(np.abs(a - at) > rtol * np.maximum(1.0, np.abs(a))):
        raise NotSymmetric("matrix is not symmetric within tolerance")
    return 0.5 * (a + at)


def as_spd(a):
    """Validate an SPD matrix (symmetry + successful Cholesky), symmetrized."""
    a = as_symmetric(a)
    cholesky(a)
    return a


def is_spd(a):
    try:
        as_spd(a)
    except (NotSymmetric, NotPositiveDefinite, DimensionMismatch):
        return False
    return True


def cholesky(p):
    """Lower Cholesky factor ``L`` with positive diagonal and ``L L^T = P``."""
    p = _square(p)
    try:
        low = np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky factorization failed") from exc
    d = np.diagonal(low, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(low)) or np.any(d * d <= EIG_FLOOR):
        raise NotPositiveDefinite("Cholesky pivot below floor")
    return low


def strict_lower(a):
    """Strictly lower-triangular part (zero diagonal)."""
    return np.tril(np.asarray(a, dtype=float), -1)


def diag_part(a):
    """Diagonal part as a diagonal matrix."""
    a = np.asarray(a, dtype=float)
    return a * np.eye(a.shape[-1])


def half_lower(s):
    """``strict_lower(S) + diag_part(S) / 2``."""
    s = _square(s)
    return strict_lower(s) + 0.5 * diag_part(s)


def diag_vec(a):
    return np.diagonal(a, axis1=-2, axis2=-1)


def vec_to_diag(v):
    v = np.asarray(v, dtype=float)
    return v[..., :, None] * np.eye(v.shape[-1])


def _eig_rebuild(q, vals):
    return (q * vals[..., None, :]) @ np.swapaxes(q, -1, -2)


def sym_exp(s):
    """Matrix exponential of a symmetric matrix via eigendecomposition."""
    s = as_symmetric(s)
    lam, q = np.linalg.eigh(s)
    return _eig_rebuild(q, np.exp(lam))


def _spd_eigh(p):
    lam, q = np.linalg.eigh(as_symmetric(p))
    if np.any(lam <= EIG_FLOOR):
        raise NotPositiveDefinite("eigenvalue below floor")
    return lam, q


def sym_log(p):
    """Principal matrix logarithm of an SPD matrix."""
    lam, q = _spd_eigh(p)
    return _eig_rebuild(q, np.log(lam))


def _exp_divided_differences(lam):
    a = lam[..., :, None]
    b = lam[..., None, :]
    diff = a - b
    close = np.abs(diff) < _DIFF_GUARD
    safe = np.where(close, 1.0, diff)
    # e^b * expm1(a - b) / (a - b) avoids cancellation for nearby eigenvalues
    dd = np.exp(b) * np.expm1(safe) / safe
    return np.where(close, np.exp(0.5 * (a + b)), dd)


def _log_divided_differences(rho):
    a = rho[..., :, None]
    b = rho[..., None, :]
    diff = a - b
    close = np.abs(diff) < _DIFF_GUARD * np.maximum(a, b)
    safe = np.where(close, 1.0, diff)
    dd = np.log1p(safe / b) / safe
    return np.where(close, 2.0 / (a + b), dd)


def _loewner(q, phi, e):
    qt = np.swapaxes(q, -1, -2)
    return q @ ((qt @ e @ q) * phi) @ qt


def dexp(s, e):
    """Directional derivative of ``sym_exp`` at ``S`` in direction ``E``.

    Daleckii-Krein: in the eigenbasis of S the derivative acts entrywise by the
    first divided differences of exp at the eigenvalues.
    """
    s = as_symmetric(s)
    e = as_symmetric(e)
    lam, q = np.linalg.eigh(s)
    return _loewner(q, _exp_divided_differences(lam), e)


def dlog(p, u):
    """Directional derivative of ``sym_log`` at SPD ``P`` in direction ``U``."""
    u = as_symmetric(u)
    rho, q = _spd_eigh(p)
    return _loewner(q, _log_divided_differences(rho), u)


def fractional_anisotropy(p):
    """Fractional anisotropy of a 3x3 SPD tensor, a value in ``[0, 1]``."""
    p = _square(p)
    if p.shape[-1] != 3:
        raise DimensionMismatch("fractional anisotropy needs 3x3 tensors")
    rho, _ = _spd_eigh(p)
    dev = rho - rho.mean(axis=-1, keepdims=True)
    fa = np.sqrt(1.5 * np.sum(dev**2, axis=-1) / np.sum(rho**2, axis=-1))
    return np.clip(fa, 0.0, 1.0)


def random_spd(rng, m, size=None, ridge=0.1):
    """``A A^T + ridge * I`` with standard normal ``A``; handy for tests."""
    shape = (m, m) if size is None else (*np.atleast_1d(size), m, m)
    a = rng.standard_normal(shape)
    return a @ np.swapaxes(a, -1, -2) + ridge * np.eye(m)


def random_symmetric(rng, m, size=None, scale=1.0):
    shape = (m, m) if size is None else (*np.atleast_1d(size), m, m)
    a = scale * rng.standard_normal(shape)
    return 0.5 * (a + np.swapaxes(a, -1, -2))
