"""Riemannian / Lie-group geometry of SPD matrices.

Two bi-invariant metrics are provided, Log-Cholesky and Log-Euclidean. Both
make the SPD cone an abelian Lie group whose identity is ``I`` and a flat
Hadamard manifold, so every map below has a closed form.

Tangent vectors at a base point ``P`` are symmetric matrices. Public methods
accept either a :class:`TangentVector` (base checked) or a bare array (taken to
live at the stated base). Matrix arguments may be stacked ``(..., m, m)``;
base points are single matrices.
"""

import abc
from dataclasses import dataclass

import numpy as np

from . import spd
from .errors import BaseMismatch, DimensionMismatch, EmptySample


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Symmetric matrix (or stack of them) attached to an SPD base point."""

    base: np.ndarray
    value: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.value, dtype=dtype)


def _same_base(a, b):
    return a.shape == b.shape and np.allclose(a, b, rtol=1e-12, atol=1e-14)


def canonical_symmetric_basis(m):
    """``E_11, ..., E_mm`` followed by ``E_ij + E_ji`` for ``i < j``."""
    out = []
    for i in range(m):
        e = np.zeros((m, m))
        e[i, i] = 1.0
        out.append(e)
    for i in range(m):
        for j in range(i + 1, m):
            e = np.zeros((m, m))
            e[i, j] = e[j, i] = 1.0
            out.append(e)
    return np.array(out)


class Geometry(abc.ABC):
    """Metric-specific geometry on the SPD cone.

    Subclasses implement the private array-level maps; this class supplies
    argument checking, the tangent-vector wrapper and the generic pieces
    (norm, orthonormal bases, coordinates).
    """

    name = None

    def __repr__(self):
        return f"{type(self).__name__}()"

    # -- hooks ------------------------------------------------------------
    @abc.abstractmethod
    def _group_op(self, p1, p2): ...

    @abc.abstractmethod
    def _lie_log(self, p): ...

    @abc.abstractmethod
    def _lie_exp(self, u): ...

    @abc.abstractmethod
    def _log(self, base, q): ...

    @abc.abstractmethod
    def _exp(self, base, u): ...

    @abc.abstractmethod
    def _transport(self, src, dst, u): ...

    @abc.abstractmethod
    def _inner(self, base, u, v): ...

    @abc.abstractmethod
    def _distance(self, p, q): ...

    @abc.abstractmethod
    def _frechet_mean(self, sample): ...

    # -- public API ---------------------------------------------------------
    def identity(self, m):
        return np.eye(m)

    def _vec(self, u, base):
        if isinstance(u, TangentVector):
            if not _same_base(np.asarray(u.base), base):
                raise BaseMismatch("tangent vector is attached to another base point")
            u = u.value
        u = np.asarray(u, dtype=float)
        if u.shape[-2:] != base.shape[-2:]:
            raise DimensionMismatch(f"tangent shape {u.shape} vs base {base.shape}")
        return spd.as_symmetric(u)

    @staticmethod
    def _dims(p, q):
        if p.shape[-2:] != q.shape[-2:]:
            raise DimensionMismatch(f"{p.shape} vs {q.shape}")

    def group_op(self, p1, p2):
        """Abelian group operation; ``I`` is the identity element."""
        p1, p2 = spd.as_symmetric(p1), spd.as_symmetric(p2)
        self._dims(p1, p2)
        return self._group_op(p1, p2)

    def inverse(self, p):
        p = spd.as_symmetric(p)
        return self._lie_exp(-self._lie_log(p))

    def lie_log(self, p):
        p = spd.as_symmetric(p)
        return TangentVector(self.identity(p.shape[-1]), self._lie_log(p))

    def lie_exp(self, u):
        if isinstance(u, TangentVector):
            u = self._vec(u, self.identity(np.shape(u.value)[-1]))
        return self._lie_exp(spd.as_symmetric(u))

    def riem_log(self, base, q):
        base, q = spd.as_spd(base), spd.as_symmetric(q)
        self._dims(base, q)
        return TangentVector(base, self._log(base, q))

    def riem_exp(self, base, u):
        base = spd.as_spd(base)
        return self._exp(base, self._vec(u, base))

    def transport(self, src, dst, u):
        """Parallel transport of ``u`` from ``src`` to ``dst`` along the geodesic."""
        src, dst = spd.as_spd(src), spd.as_spd(dst)
        self._dims(src, dst)
        return TangentVector(dst, self._transport(src, dst, self._vec(u, src)))

    def inner(self, base, u, v):
        base = spd.as_spd(base)
        return self._inner(base, self._vec(u, base), self._vec(v, base))

    def norm(self, base, u):
        return np.sqrt(np.maximum(self.inner(base, u, u), 0.0))

    def distance(self, p, q):
        p, q = spd.as_symmetric(p), spd.as_symmetric(q)
        self._dims(p, q)
        return self._distance(p, q)

    def frechet_mean(self, sample):
        """Sample Fréchet mean (closed form for both metrics)."""
        sample = np.asarray(sample, dtype=float)
        if sample.ndim == 2:
            sample = sample[None]
        if sample.ndim != 3 or sample.shape[0] == 0:
            raise EmptySample("need a nonempty stack of matrices")
        return self._frechet_mean(spd.as_symmetric(sample))

    def tangent_basis(self, base):
        """Orthonormal basis of the tangent space at ``base``.

        Gram-Schmidt under the metric at ``base``, applied to the canonical
        symmetric basis. Shape ``(D, m, m)`` with ``D = m(m+1)/2``.
        """
        base = spd.as_spd(base)
        out = []
        for e in canonical_symmetric_basis(base.shape[-1]):
            for b in out:
                e = e - self._inner(base, e, b) * b
            # second pass keeps orthogonality at roundoff level
            for b in out:
                e = e - self._inner(base, e, b) * b
            out.append(e / np.sqrt(self._inner(base, e, e)))
        return np.array(out)

    def to_coords(self, base, u, basis):
        """Coordinates of tangent vector(s) in an orthonormal ``basis``."""
        base = spd.as_spd(base)
        u = self._vec(u, base)
        return self._inner(base, u[..., None, :, :], basis)

    @staticmethod
    def from_coords(coords, basis):
        return np.einsum("...d,dij->...ij", np.asarray(coords, dtype=float), basis)


def _lt_frob(a, b):
    return np.sum(a * b, axis=(-2, -1))


class LogCholesky(Geometry):
    """Log-Cholesky metric, pulled back from Cholesky factors.

    Cholesky factors ``L`` are mapped isometrically onto lower-triangular
    matrices by ``L -> strict_lower(L) + log(diag(L))``; all maps are computed
    there and pushed back through ``L -> L L^T``.
    """

    name = "log_cholesky"

    @staticmethod
    def _chart(low):
        return spd.strict_lower(low) + spd.vec_to_diag(np.log(spd.diag_vec(low)))

    @staticmethod
    def _chart_inv(z):
        return spd.strict_lower(z) + spd.vec_to_diag(np.exp(spd.diag_vec(z)))

    @staticmethod
    def _gram(low):
        return low @ np.swapaxes(low, -1, -2)

    @staticmethod
    def _to_factor_tangent(low, u):
        # X = L (L^{-1} U L^{-T})_{1/2}
        a = np.linalg.solve(low, u)
        a = np.linalg.solve(low, np.swapaxes(a, -1, -2))
        return low @ spd.half_lower(a)

    @staticmethod
    def _to_spd_tangent(low, x):
        xlt = x @ np.swapaxes(low, -1, -2)
        return xlt + np.swapaxes(xlt, -1, -2)

    def _group_op(self, p1, p2):
        l1, l2 = spd.cholesky(p1), spd.cholesky(p2)
        d = spd.diag_vec(l1) * spd.diag_vec(l2)
        return self._gram(spd.strict_lower(l1) + spd.strict_lower(l2) + spd.vec_to_diag(d))

    def _lie_log(self, p):
        z = self._chart(spd.cholesky(p))
        return z + np.swapaxes(z, -1, -2)

    def _lie_exp(self, u):
        return self._gram(self._chart_inv(spd.half_lower(u)))

    def _factor_exp(self, low, x):
        d = spd.diag_vec(low)
        return (
            spd.strict_lower(low)
            + spd.strict_lower(x)
            + spd.vec_to_diag(d * np.exp(spd.diag_vec(x) / d))
        )

    def _factor_log(self, low, k):
        d = spd.diag_vec(low)
        return (
            spd.strict_lower(k)
            - spd.strict_lower(low)
            + spd.vec_to_diag(d * np.log(spd.diag_vec(k) / d))
        )

    def _exp(self, base, u):
        low = spd.cholesky(base)
        return self._gram(self._factor_exp(low, self._to_factor_tangent(low, u)))

    def _log(self, base, q):
        low = spd.cholesky(base)
        return self._to_spd_tangent(low, self._factor_log(low, spd.cholesky(q)))

    def _transport(self, src, dst, u):
        ls, ld = spd.cholesky(src), spd.cholesky(dst)
        x = self._to_factor_tangent(ls, u)
        scale = spd.diag_vec(ld) / spd.diag_vec(ls)
        y = spd.strict_lower(x) + spd.vec_to_diag(scale * spd.diag_vec(x))
        return self._to_spd_tangent(ld, y)

    def _inner(self, base, u, v):
        low = spd.cholesky(base)
        a = self._to_factor_tangent(low, u)
        b = self._to_factor_tangent(low, v)
        d2 = spd.diag_vec(low) ** 2
        return _lt_frob(spd.strict_lower(a), spd.strict_lower(b)) + np.sum(
            spd.diag_vec(a) * spd.diag_vec(b) / d2, axis=-1
        )

    def _distance(self, p, q):
        dz = self._chart(spd.cholesky(p)) - self._chart(spd.cholesky(q))
        return np.sqrt(np.sum(dz**2, axis=(-2, -1)))

    def _frechet_mean(self, sample):
        z = self._chart(spd.cholesky(sample)).mean(axis=0)
        return self._gram(self._chart_inv(z))


class LogEuclidean(Geometry):
    """Log-Euclidean metric: the matrix logarithm is a global isometry."""

    name = "log_euclidean"

    def _group_op(self, p1, p2):
        return spd.sym_exp(spd.sym_log(p1) + spd.sym_log(p2))

    def _lie_log(self, p):
        return spd.sym_log(p)

    def _lie_exp(self, u):
        return spd.sym_exp(u)

    def _exp(self, base, u):
        return spd.sym_exp(spd.sym_log(base) + spd.dlog(base, u))

    def _log(self, base, q):
        lb = spd.sym_log(base)
        return spd.dexp(lb, spd.sym_log(q) - lb)

    def _transport(self, src, dst, u):
        return spd.dexp(spd.sym_log(dst), spd.dlog(src, u))

    def _inner(self, base, u, v):
        return _lt_frob(spd.dlog(base, u), spd.dlog(base, v))

    def _distance(self, p, q):
        d = spd.sym_log(p) - spd.sym_log(q)
        return np.sqrt(np.sum(d**2, axis=(-2, -1)))

    def _frechet_mean(self, sample):
        return spd.sym_exp(spd.sym_log(sample).mean(axis=0))


GEOMETRIES = {g.name: g for g in (LogCholesky, LogEuclidean)}


def get_geometry(name):
    """Look up a geometry by name (``log_cholesky`` or ``log_euclidean``)."""
    if isinstance(name, Geometry):
        return name
    try:
        return GEOMETRIES[name]()
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(GEOMETRIES)}") from None
