"""Monte-Carlo benchmark for additive SPD regression.

Responses are generated as ``Y = mu (+) w(X) (+) zeta`` with ``mu = I``,
uniform predictors, ``w = lie_exp(transport(mu -> e, f(X)))`` and Gaussian
noise in an orthonormal basis of the Lie algebra. Three truths ``f`` are
available: additive (I), one pairwise interaction plus additive terms (II) and
a pure product (III).
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NoConvergence
from .geometry import get_geometry
from .sbf import (
    CV_CONSTANTS,
    SampleTable,
    default_bandwidths,
    evaluate_rmse,
    fit,
    select_bandwidth,
)
from .smoothing import GridSpec, KernelSpec

SETTINGS = ("I", "II", "III")
_CALIBRATION_STREAM = 1
_REP_STREAM = 0


@dataclass(frozen=True)
class SimConfig:
    setting: str = "I"
    q: int = 3
    n: int = 100
    snr: float = 2.0
    m: int = 3
    metric: str = "log_cholesky"
    reps: int = 20
    seed: int = 0
    test_size: int = 1000
    #: fixed ``c`` in ``h = c n^(-1/5)``; ``None`` selects it per rep by 5-fold CV
    bandwidth_constant: float = None
    grid_points: int = 101
    calibration_draws: int = 100_000
    #: add noise to test responses (the reference protocol compares to the noise-free truth)
    test_noise: bool = False

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.setting in ("II", "III") and self.q < 2:
            raise ValueError(f"setting {self.setting} needs q >= 2")
        if self.q < 1 or self.m < 1 or self.test_size < 1:
            raise ValueError("q, m and test_size must be positive")


def g_entry(x, j, l, q):
    """``exp(-|j-l|/q) sin(2 q pi (x - (j+l)/q))`` with 1-based ``j, l``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-abs(j - l) / q) * np.sin(2 * q * np.pi * (x - (j + l) / q))


def _g_matrix(x, q, m):
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (m, m))
    for j in range(1, m + 1):
        for l in range(1, m + 1):
            out[..., j - 1, l - 1] = g_entry(x, j, l, q)
    return out


def make_f(setting, q, m=3):
    """True regression function ``f(x) -> (N, m, m)`` for design rows ``x`` (N, q)."""
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}")
    jl = np.add.outer(np.arange(1, m + 1), np.arange(1, m + 1))

    def f(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != q:
            raise ValueError(f"expected {q} predictors")
        if setting == "I":
            return sum(_g_matrix(x[:, k], q, m) for k in range(q))
        if setting == "II":
            out = _g_matrix(x[:, 0], q, m) * _g_matrix(x[:, 1], q, m)
            return out + sum(_g_matrix(x[:, k], q, m) for k in range(2, q))
        out = np.exp(-jl * (x[:, 0] + x[:, 1])[:, None, None])
        for k in range(2, q):
            out = out * np.sin(2 * np.pi * x[:, k])[:, None, None]
        return out

    return f


def true_component(k, q, m=3):
    """Setting-I component ``f_k`` as a function of its scalar argument."""
    return lambda x: _g_matrix(x, q, m)


def draw_noise(sigma, geometry, rng, size=None, m=3):
    """Noise ``zeta`` with ``lie_log zeta = sum_j Z_j v_j``, ``Z_j ~ N(0, sigma^2)``.

    ``v_j`` is the orthonormal basis of the Lie algebra from
    :meth:`Geometry.tangent_basis` at the identity.
    """
    geometry = get_geometry(geometry)
    basis = geometry.tangent_basis(geometry.identity(m))
    shape = () if size is None else (size,)
    z = sigma * rng.standard_normal(shape + (basis.shape[0],))
    return geometry.lie_exp(geometry.from_coords(z, basis))


def signal_power(setting, q, geometry, rng, draws=100_000, m=3):
    """Monte-Carlo estimate of ``E ||lie_log w(X)||_e^2`` for uniform ``X``."""
    geometry = get_geometry(geometry)
    f = make_f(setting, q, m)
    eye = geometry.identity(m)
    total = 0.0
    # chunked to bound memory
    for start in range(0, draws, 20_000):
        size = min(20_000, draws - start)
        u = geometry.transport(eye, eye, f(rng.uniform(size=(size, q))))
        total += float(np.sum(geometry.inner(eye, u, u)))
    return total / draws


def calibrate_sigma(setting, q, snr, geometry, rng, mc_draws=100_000, m=3):
    """Noise scale giving ``E||lie_log w||^2 / E||lie_log zeta||^2 = snr``."""
    d = m * (m + 1) // 2
    return math.sqrt(signal_power(setting, q, geometry, rng, mc_draws, m) / (d * snr))


def substream(seed, *key):
    """Independent Philox generator for ``(seed, key...)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def generate(config, rng, sigma):
    """Draw a training table of size ``n`` and a test table of size ``test_size``.

    Test responses are the noise-free regression values unless
    ``config.test_noise`` is set.
    """
    geom = get_geometry(config.metric)
    f = make_f(config.setting, config.q, config.m)
    mu = geom.identity(config.m)

    def draw(size, noisy):
        x = rng.uniform(size=(size, config.q))
        w = geom.lie_exp(geom.transport(mu, geom.identity(config.m), f(x)))
        y = geom.group_op(np.broadcast_to(mu, w.shape), w)
        if noisy:
            y = geom.group_op(y, draw_noise(sigma, geom, rng, size, config.m))
        return SampleTable(x, y)

    train = draw(config.n, True)
    test = draw(config.test_size, config.test_noise)
    return train, test


def _choose_kernel(config, train, grid):
    if config.bandwidth_constant is not None:
        c = config.bandwidth_constant
        return c, KernelSpec(default_bandwidths(train.n, train.q, c))
    c, bw, _ = select_bandwidth(train, config.metric, grid, constants=CV_CONSTANTS)
    return c, KernelSpec(bw)


def run_rep(config, rep, sigma):
    """One Monte-Carlo replicate; returns a dict with the test RMSE or a failure."""
    rng = substream(config.seed, _REP_STREAM, rep)
    train, test = generate(config, rng, sigma)
    grid = GridSpec(config.grid_points)
    try:
        c, kern = _choose_kernel(config, train, grid)
        model = fit(train, config.metric, kern, grid)
    except NoConvergence as exc:
        return {"rep": rep, "rmse": None, "error": str(exc)}
    return {
        "rep": rep,
        "rmse": evaluate_rmse(model, test),
        "bandwidth_constant": c,
        "sweeps": model.diagnostics["sweeps"],
    }


def worker_count(limit=None):
    n = os.cpu_count() or 1
    env = os.environ.get("MAM_THREADS")
    if env:
        n = min(n, max(1, int(env)))
    if limit is not None:
        n = min(n, limit)
    return max(1, n)


def _map_reps(fn, args, workers):
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args)))


@dataclass
class SimReport:
    config: dict
    sigma: float
    rmse_mean: float
    rmse_se: float
    rmse: list
    failed: int
    single_rep: bool
    reps: list = field(default_factory=list)
    wall_clock: float = None

    def to_json(self, include_timing=False):
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock")
        return json.dumps(d, indent=2, sort_keys=True)


def run_benchmark(config, workers=None):
    """Run ``config.reps`` replicates and aggregate the test RMSE.

    Replicates that fail to converge are counted in ``failed`` and excluded
    from the mean. The standard error is the sample SD over ``sqrt(reps)``,
    reported as 0 (with ``single_rep`` set) when only one replicate succeeds.
    """
    t0 = time.perf_counter()
    sigma = calibrate_sigma(
        config.setting,
        config.q,
        config.snr,
        config.metric,
        substream(config.seed, _CALIBRATION_STREAM),
        config.calibration_draws,
        config.m,
    )
    workers = worker_count(config.reps) if workers is None else workers
    results = _map_reps(run_rep, [(config, r, sigma) for r in range(config.reps)], workers)
    ok = np.array([r["rmse"] for r in results if r["rmse"] is not None], dtype=float)
    single = ok.size <= 1
    return SimReport(
        config=asdict(config),
        sigma=sigma,
        rmse_mean=float(ok.mean()) if ok.size else float("nan"),
        rmse_se=0.0 if single else float(ok.std(ddof=1) / np.sqrt(ok.size)),
        rmse=[r["rmse"] for r in results],
        failed=sum(r["rmse"] is None for r in results),
        single_rep=single,
        reps=results,
        wall_clock=time.perf_counter() - t0,
    )


# -- convergence-rate probe -------------------------------------------------------


def component_ise(model, k, truth, interior=True, resolution=1):
    """Integrated squared error of component ``k`` against ``truth`` (uniform design, ``mu = I``).

    The fitted component is transported from ``mu_hat`` to the identity and
    compared in the norm there. ``interior`` restricts to ``[2h, 1 - 2h]``;
    ``resolution`` multiplies the number of quadrature nodes.
    """
    g = model.geometry
    eye = g.identity(model.m)
    h = model.kernel.bandwidths[k]
    a, b = (2 * h, 1 - 2 * h) if interior else (0.0, 1.0)
    nodes = int(np.ceil((b - a) * (model.grid.points - 1))) * resolution + 1
    x = np.linspace(a, b, nodes)
    est = g.transport(model.mu_hat, eye, model.component_tangent(k, x)).value
    diff = est - truth(x)
    err = g.inner(eye, diff, diff)
    return float(np.trapezoid(err, x))


def _rate_rep(config, n, rep, sigma, constant, resolution):
    cfg = SimConfig(**{**asdict(config), "n": n, "test_size": 1})
    rng = substream(config.seed, _REP_STREAM, n, rep)
    train, _ = generate(cfg, rng, sigma)
    grid = GridSpec(config.grid_points)
    model = fit(train, config.metric, KernelSpec(default_bandwidths(n, config.q, constant)), grid)
    out = {}
    for interior in (True, False):
        out["interior" if interior else "full"] = max(
            component_ise(model, k, true_component(k, config.q, config.m), interior, resolution)
            for k in range(config.q)
        )
    return out


def rate_probe(config, n_list=(100, 200, 400, 800), reps=20, constant=0.2, resolution=1, workers=None):
    """Empirical convergence rate of the component estimates (Setting I).

    For each ``n`` the max-over-components ISE is averaged over ``reps``
    replicates with fixed ``h = constant * n^(-1/5)``; the returned slopes are
    least-squares fits of ``log mean ISE`` on ``log n``.
    """
    if config.setting != "I":
        raise ValueError("the rate probe needs the additive setting I")
    sigma = calibrate_sigma(
        config.setting, config.q, config.snr, config.metric,
        substream(config.seed, _CALIBRATION_STREAM), config.calibration_draws, config.m,
    )
    args = [(config, n, r, sigma, constant, resolution) for n in n_list for r in range(reps)]
    workers = worker_count(len(args)) if workers is None else workers
    res = _map_reps(_rate_rep, args, workers)
    out = {"n": list(n_list), "sigma": sigma, "constant": constant}
    logn = np.log(np.asarray(n_list, dtype=float))
    for key in ("interior", "full"):
        means = [
            float(np.mean([r[key] for r in res[i * reps:(i + 1) * reps]])) for i in range(len(n_list))
        ]
        out[f"{key}_ise"] = means
        out[f"{key}_slope"] = float(np.polyfit(logn, np.log(means), 1)[0])
    return out
