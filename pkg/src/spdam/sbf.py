"""Additive regression of SPD responses on scalar predictors.

The fit follows the tangent-space route: responses are lifted to the tangent
space at their Fréchet mean, written in an orthonormal basis there, and the
resulting vector responses are decomposed by smooth backfitting. Components
are mapped back to the group through the identity.
"""

from dataclasses import dataclass, field

import numpy as np

from . import spd
from .errors import (
    BandwidthOutOfRange,
    DegenerateDensity,
    DimensionMismatch,
    EmptySample,
    NoConvergence,
    OutOfDomain,
)
from .geometry import get_geometry
from .smoothing import GridSpec, KernelSpec, estimate_densities, marginal_regressor

FORMAT_VERSION = 1
DOMAIN_TOL = 1e-9
CV_CONSTANTS = (0.1, 0.15, 0.2, 0.25, 0.35, 0.5, 0.75, 1.0, 1.5)


def _check_domain(x):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < -DOMAIN_TOL) or np.any(x > 1.0 + DOMAIN_TOL):
        raise OutOfDomain("predictor values must lie in [0, 1]")
    return np.clip(x, 0.0, 1.0)


@dataclass
class SampleTable:
    """``n`` rows of predictors ``x`` (n, q) in the unit cube and SPD responses ``y`` (n, m, m)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 3 or y.shape[-1] != y.shape[-2]:
            raise DimensionMismatch(f"responses must be (n, m, m), got {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{x.shape[0]} predictor rows vs {y.shape[0]} responses")
        if x.shape[0] == 0:
            raise EmptySample("sample has no rows")
        self.x = _check_domain(x)
        self.y = spd.as_spd(y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def q(self):
        return self.x.shape[1]

    @property
    def m(self):
        return self.y.shape[-1]

    def take(self, idx):
        return SampleTable(self.x[idx], self.y[idx])


def default_bandwidths(n, q, constant=0.5):
    """``constant * n^(-1/5)`` on every axis, capped at 0.5."""
    return (min(0.5, constant * n ** (-0.2)),) * q


class _Backfitter:
    """Discretized smooth-backfitting operator for fixed density estimates."""

    def __init__(self, dens):
        dens.check_positive()
        self.dens = dens
        w = dens.grid.weights
        self.center_weights = dens.marginal * w[None, :]
        q = dens.q
        # proj[k][j] maps grid values of f_j to the conditional mean of f_j given x_k
        self.proj = [
            [
                None if j == k else dens.pairwise[k, j] * w[None, :] / dens.marginal[k][:, None]
                for j in range(q)
            ]
            for k in range(q)
        ]

    def center(self, k, fk):
        cw = self.center_weights[k]
        return fk - (cw @ fk) / cw.sum()

    def update(self, k, comps, mhat, mbar):
        out = mhat[k] - mbar
        for j in range(len(comps)):
            if j != k:
                out = out - self.proj[k][j] @ comps[j]
        return out

    def sweep(self, comps, mhat, mbar):
        comps = comps.copy()
        for k in range(len(comps)):
            comps[k] = self.center(k, self.update(k, comps, mhat, mbar))
        return comps

    def residual(self, comps, mhat, mbar):
        """Sup-norm of (right side of the system) minus (components)."""
        return max(
            np.abs(self.update(k, comps, mhat, mbar) - comps[k]).max() for k in range(len(comps))
        )

    def centering(self, comps):
        return max(np.abs(self.center_weights[k] @ comps[k]).max() for k in range(len(comps)))


def backfit_sweep(components, mhat, dens, mbar=0.0):
    """One Gauss-Seidel pass over all components, re-centering each update.

    ``components`` and ``mhat`` are ``(q, M, D)`` grid arrays.
    """
    return _Backfitter(dens).sweep(np.asarray(components, dtype=float), np.asarray(mhat), mbar)


@dataclass
class AdditiveFit:
    """Fitted additive model.

    ``components[k]`` holds the grid values ``(M, D)`` of the k-th tangent
    component at ``mu_hat`` in coordinates of the orthonormal ``basis``.
    """

    geometry: object
    mu_hat: np.ndarray
    basis: np.ndarray
    grid: GridSpec
    kernel: KernelSpec
    components: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    rescale: tuple = None

    @property
    def q(self):
        return self.components.shape[0]

    @property
    def m(self):
        return self.mu_hat.shape[-1]

    def component_coords(self, k, x):
        """Linearly interpolated coordinates of component ``k`` at ``x``."""
        x = _check_domain(np.atleast_1d(x))
        comp = self.components[k]
        pos = x * (self.grid.points - 1)
        i0 = np.clip(np.floor(pos).astype(int), 0, self.grid.points - 2)
        frac = (pos - i0)[..., None]
        return comp[i0] * (1.0 - frac) + comp[i0 + 1] * frac

    def component_tangent(self, k, x):
        """Component ``k`` at ``x`` as symmetric matrices in the tangent space at ``mu_hat``."""
        return self.geometry.from_coords(self.component_coords(k, x), self.basis)

    def to_dict(self):
        out = {
            "format_version": FORMAT_VERSION,
            "metric": self.geometry.name,
            "m": int(self.m),
            "q": int(self.q),
            "mu_hat": self.mu_hat.tolist(),
            "grid_points": int(self.grid.points),
            "grid_nodes": self.grid.nodes.tolist(),
            "kernel": self.kernel.family,
            "bandwidths": list(self.kernel.bandwidths),
            "basis": self.basis.tolist(),
            "components": self.components.tolist(),
            "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()},
        }
        if self.rescale is not None:
            lo, hi = self.rescale
            out["rescale"] = {"min": list(map(float, lo)), "max": list(map(float, hi))}
        return out

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
        rescale = None
        if "rescale" in d:
            rescale = (np.array(d["rescale"]["min"]), np.array(d["rescale"]["max"]))
        comps = np.array(d["components"], dtype=float)
        fit = cls(
            geometry=get_geometry(d["metric"]),
            mu_hat=np.array(d["mu_hat"], dtype=float),
            basis=np.array(d["basis"], dtype=float),
            grid=GridSpec(int(d["grid_points"])),
            kernel=KernelSpec(tuple(d["bandwidths"]), d["kernel"]),
            components=comps,
            diagnostics=dict(d.get("diagnostics", {})),
            rescale=rescale,
        )
        if comps.shape != (d["q"], fit.grid.points, fit.basis.shape[0]):
            raise ValueError("component array shape does not match q, grid and basis")
        return fit


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def tangent_responses(geometry, sample):
    """Fréchet mean, orthonormal basis there, and response coordinates ``(n, D)``."""
    mu = geometry.frechet_mean(sample.y)
    basis = geometry.tangent_basis(mu)
    coords = geometry.to_coords(mu, geometry.riem_log(mu, sample.y), basis)
    return mu, basis, coords


def backfit(x, responses, kernel, grid, tol=1e-6, max_sweeps=200):
    """Smooth backfitting of vector responses ``(n, D)`` on predictors ``x`` (n, q).

    Returns the ``(q, M, D)`` component grid values and a diagnostics dict.
    Raises :class:`NoConvergence` when the sweep-to-sweep sup change still
    exceeds ``tol`` after ``max_sweeps`` passes.
    """
    responses = np.asarray(responses, dtype=float)
    dens = estimate_densities(x, kernel, grid)
    bf = _Backfitter(dens)
    q = dens.q
    mhat = np.array([marginal_regressor(dens, responses, k) for k in range(q)])
    mbar = responses.mean(axis=0)

    comps = np.zeros_like(mhat)
    history = []
    converged = False
    for sweep in range(1, max_sweeps + 1):
        new = bf.sweep(comps, mhat, mbar)
        history.append(float(np.abs(new - comps).max()))
        comps = new
        if history[-1] <= tol:
            converged = True
            break

    diagnostics = {
        "sweeps": sweep,
        "final_change": history[-1],
        "converged": converged,
        "centering": float(bf.centering(comps)),
        "fixed_point_residual": float(bf.residual(comps, mhat, mbar)),
        "mean_log_norm": float(np.linalg.norm(mbar)),
        "change_history": history,
    }
    if not converged:
        raise NoConvergence(
            f"backfitting change {history[-1]:.3g} > tol {tol:g} after {max_sweeps} sweeps",
            diagnostics,
        )
    return comps, diagnostics


def fit(sample, geometry="log_cholesky", kernel=None, grid=None, tol=1e-6, max_sweeps=200):
    """Fit the additive model.

    Steps: Fréchet mean of the responses, their logarithms at the mean in an
    orthonormal basis, then smooth backfitting of those coordinates.
    """
    geometry = get_geometry(geometry)
    grid = grid or GridSpec()
    kernel = kernel or KernelSpec(default_bandwidths(sample.n, sample.q))
    if sample.n < 10:
        raise EmptySample(f"need at least 10 observations, got {sample.n}")
    if kernel.q != sample.q:
        raise DimensionMismatch(f"{kernel.q} bandwidths for {sample.q} predictors")
    mu, basis, resp = tangent_responses(geometry, sample)
    comps, diagnostics = backfit(sample.x, resp, kernel, grid, tol, max_sweeps)
    diagnostics["n"] = int(sample.n)
    return AdditiveFit(geometry, mu, basis, grid, kernel, comps, diagnostics)


def component_to_group(fit, k, x):
    """Group-valued component ``w_k(x)``: exponential at the identity of the transported component."""
    g = fit.geometry
    u = g.transport(fit.mu_hat, g.identity(fit.m), fit.component_tangent(k, x))
    return g.lie_exp(u)


def _as_design(fit, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != fit.q:
        raise DimensionMismatch(f"expected {fit.q} predictors, got {x.shape[1]}")
    return _check_domain(x), single


def predict(fit, x):
    """``mu_hat (+) w_1(x_1) (+) ... (+) w_q(x_q)`` for rows of ``x``."""
    x, single = _as_design(fit, x)
    g = fit.geometry
    out = np.broadcast_to(fit.mu_hat, (x.shape[0], fit.m, fit.m))
    for k in range(fit.q):
        out = g.group_op(out, component_to_group(fit, k, x[:, k]))
    return out[0] if single else out


def predict_tangent(fit, x):
    """Same prediction via the exponential map at ``mu_hat`` of the summed components."""
    x, single = _as_design(fit, x)
    total = sum(fit.component_tangent(k, x[:, k]) for k in range(fit.q))
    out = fit.geometry.riem_exp(fit.mu_hat, total)
    return out[0] if single else out


def prediction_distances(fit, test):
    if test.n == 0:
        raise EmptySample("empty test set")
    return fit.geometry.distance(predict(fit, test.x), test.y)


def evaluate_rmse(fit, test):
    """Root mean squared geodesic distance between predictions and test responses."""
    d = prediction_distances(fit, test)
    return float(np.sqrt(np.mean(d**2)))


def select_bandwidth(
    sample,
    geometry="log_cholesky",
    grid=None,
    family="epanechnikov",
    constants=CV_CONSTANTS,
    folds=5,
    seed=0,
    tol=1e-6,
    max_sweeps=200,
):
    """Choose ``c`` in ``h = c n^(-1/5)`` by k-fold cross-validation.

    The score is the out-of-fold sum of squared geodesic prediction errors.
    Candidates that leave empty density regions or fail to converge score
    ``inf``. Returns ``(c, bandwidths, scores)``.
    """
    geometry = get_geometry(geometry)
    grid = grid or GridSpec()
    perm = np.random.default_rng(seed).permutation(sample.n)
    parts = np.array_split(perm, folds)
    scores = {}
    for c in constants:
        total = 0.0
        for part in parts:
            train = sample.take(np.setdiff1d(perm, part))
            test = sample.take(part)
            try:
                kern = KernelSpec(default_bandwidths(train.n, train.q, c), family)
                f = fit(train, geometry, kern, grid, tol=tol, max_sweeps=max_sweeps)
            except (DegenerateDensity, NoConvergence, BandwidthOutOfRange, EmptySample):
                total = np.inf
                break
            total += float(np.sum(prediction_distances(f, test) ** 2))
        scores[c] = total
    best = min(scores, key=scores.get)
    if not np.isfinite(scores[best]):
        raise DegenerateDensity("no bandwidth candidate produced a valid fit")
    return best, default_bandwidths(sample.n, sample.q, best), scores
