"""Boundary-normalized kernel smoothing on ``[0, 1]^q``.

Densities and marginal regressors are represented by their values on an
equispaced grid; integrals over a predictor axis use the trapezoid rule on
that grid.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BandwidthOutOfRange, DegenerateDensity, EmptySample

DENSITY_FLOOR = 1e-8


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _epanechnikov_cdf(u):
    u = np.clip(u, -1.0, 1.0)
    return 0.5 + 0.75 * (u - u**3 / 3.0)


def _quartic(u):
    return np.where(np.abs(u) <= 1.0, 0.9375 * (1.0 - u * u) ** 2, 0.0)


def _quartic_cdf(u):
    u = np.clip(u, -1.0, 1.0)
    return 0.5 + 0.9375 * (u - 2.0 * u**3 / 3.0 + u**5 / 5.0)


KERNELS = {
    "epanechnikov": (_epanechnikov, _epanechnikov_cdf),
    "quartic": (_quartic, _quartic_cdf),
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and one bandwidth per predictor."""

    bandwidths: tuple
    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family not in KERNELS:
            raise ValueError(f"unknown kernel {self.family!r}")
        bw = tuple(float(h) for h in np.atleast_1d(self.bandwidths))
        for h in bw:
            if not 0.0 < h <= 0.5:
                raise BandwidthOutOfRange(f"bandwidth {h} outside (0, 0.5]")
        object.__setattr__(self, "bandwidths", bw)

    @property
    def q(self):
        return len(self.bandwidths)

    def profile(self, u):
        return KERNELS[self.family][0](u)


@dataclass(frozen=True)
class GridSpec:
    """Equispaced nodes ``0, 1/(M-1), ..., 1`` on each predictor axis."""

    points: int = 101

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 11:
            raise ValueError("grid needs an integer number of points >= 11")

    @property
    def nodes(self):
        return np.linspace(0.0, 1.0, self.points)

    @property
    def spacing(self):
        return 1.0 / (self.points - 1)

    @property
    def weights(self):
        w = np.full(self.points, self.spacing)
        w[[0, -1]] *= 0.5
        return w

    def integrate(self, values, axis=0):
        """Trapezoid rule over the grid along ``axis``."""
        return np.tensordot(self.weights, values, axes=([0], [axis]))


def normalized_kernel(x, xi, h, family="epanechnikov"):
    """``K_h(x, xi)`` rescaled so that it integrates to one over ``x in [0, 1]``.

    The normalizer is the exact integral of the polynomial kernel over the
    part of its support inside the unit interval.
    """
    if not 0.0 < h <= 0.5:
        raise BandwidthOutOfRange(f"bandwidth {h} outside (0, 0.5]")
    prof, cdf = KERNELS[family]
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    mass = cdf((1.0 - xi) / h) - cdf(-xi / h)
    return prof((x - xi) / h) / h / mass


def grid_kernel_weights(grid, xk, h, family="epanechnikov"):
    """Kernel weights ``(M, n)`` of observations ``xk`` at the grid nodes.

    Each column is normalized so its trapezoid integral over the grid is
    exactly one, which keeps the discretized densities consistent with each
    other (marginals of the pairwise densities reproduce the univariate ones).
    """
    if h <= grid.spacing:
        raise BandwidthOutOfRange(f"bandwidth {h} not wider than the grid spacing {grid.spacing}")
    prof = KERNELS[family][0]
    raw = prof((grid.nodes[:, None] - np.asarray(xk, dtype=float)[None, :]) / h) / h
    return raw / grid.integrate(raw)[None, :]


@dataclass
class DensityEstimates:
    """Grid values of the marginal and pairwise kernel density estimates.

    ``marginal[k]`` has shape ``(M,)``; ``pairwise[k, j]`` has shape ``(M, M)``
    indexed by (node of axis k, node of axis j). ``weights[k]`` keeps the
    ``(M, n)`` kernel weights used to build them.
    """

    grid: GridSpec
    weights: list
    marginal: np.ndarray
    pairwise: np.ndarray = field(repr=False)

    @property
    def q(self):
        return len(self.weights)

    def check_positive(self, floor=DENSITY_FLOOR):
        low = self.marginal.min(axis=1)
        bad = np.flatnonzero(low < floor)
        if bad.size:
            k = int(bad[0])
            raise DegenerateDensity(
                f"marginal density of predictor {k + 1} drops to {low[k]:.3g} on the grid; "
                "bandwidth too small for the design"
            )


def estimate_densities(x, kernel, grid):
    """Marginal and pairwise density estimates of the predictors ``x`` (n, q)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, q = x.shape
    if n < 2:
        raise EmptySample("need at least two observations")
    if kernel.q != q:
        raise ValueError(f"kernel has {kernel.q} bandwidths for {q} predictors")
    weights = [
        grid_kernel_weights(grid, x[:, k], h, kernel.family) for k, h in enumerate(kernel.bandwidths)
    ]
    marginal = np.array([w.mean(axis=1) for w in weights])
    pairwise = np.empty((q, q, grid.points, grid.points))
    for k in range(q):
        for j in range(k, q):
            pkj = weights[k] @ weights[j].T / n
            pairwise[k, j] = pkj
            pairwise[j, k] = pkj.T
    return DensityEstimates(grid, weights, marginal, pairwise)


def marginal_regressor(dens, responses, k):
    """Nadaraya-Watson smoother of ``responses`` (n, D) along predictor ``k``.

    Returns the ``(M, D)`` grid values of the kernel-weighted average.
    """
    responses = np.asarray(responses, dtype=float)
    pk = dens.marginal[k]
    if pk.min() < DENSITY_FLOOR:
        raise DegenerateDensity(f"marginal density of predictor {k + 1} vanishes on the grid")
    w = dens.weights[k]
    return (w @ responses) / w.shape[1] / pk[:, None]
