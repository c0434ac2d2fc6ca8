"""Hyperparameter posterior, grid exploration and posterior marginals.

The hyperparameter posterior is the Laplace ratio

    log pi(theta | y) = log pi(x*, theta, y) - log pi_G(x* | theta, y) + const

evaluated in internal coordinates.  A grid is laid out on the standardized
axes of the Hessian at its mode and used to integrate the latent marginals
(a Gaussian mixture per state) and the hyperparameter marginals.
"""
from __future__ import annotations

import logging
import os
import time
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np
from scipy import integrate, interpolate, optimize, special

from .augment import EPSILON, AugmentedModel, build_augmented
from .gaussian_approx import (GRAD_TOL, MAX_ITER, STEP_TOL, ConvergenceError, FactorizationError, GaussianApprox,
                              find_mode, log_joint_at)
from .model import DOF_LOWER, DlmSpec, HyperPoint, ModelError

log = logging.getLogger(__name__)

WORKERS_ENV = "ROBUSTDLM_WORKERS"
QUANTILES = (0.025, 0.5, 0.975)


class GridError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


DEFAULT_DROP = 2.5
# low-dimensional grids are cheap, and 2.5 log units cuts the mixture at ~2.2 sd
WIDE_DROP = 8.0
WIDE_DROP_DIMS = 3
# lattice size grows like r**d; many-series groups fall back to the mode
MAX_GRID_DIM = 6


@dataclass(frozen=True)
class GridSettings:
    step: float = 0.75              # standardized step between grid points
    drop: float | None = None       # log-density drop that ends the exploration; None = auto
    fd_step: float = 1e-4           # finite-difference step for the mode-search gradient
    hessian_step: float = 0.1       # finite-difference step for the Hessian at the mode
    max_grid_points: int = 20_000
    bound: float = 30.0             # |z| limit for the mode search
    max_axis_steps: int = 40
    mixture_points: int = 75
    mixture_width: float = 6.0
    grad_tol: float = GRAD_TOL      # Newton stopping rules for the state mode
    step_tol: float = STEP_TOL
    max_newton: int = MAX_ITER
    max_grid_dim: int = MAX_GRID_DIM  # above this, integrate at the mode only

    def drop_for(self, dim: int) -> float:
        """Explicit ``drop`` if set, else WIDE_DROP up to WIDE_DROP_DIMS free dimensions."""
        if self.drop is not None:
            return self.drop
        return WIDE_DROP if dim <= WIDE_DROP_DIMS else DEFAULT_DROP


@dataclass(frozen=True, eq=False)
class ThetaGridPoint:
    h: HyperPoint
    z: np.ndarray                   # free internal coordinates
    index: tuple[int, ...]          # lattice index on the standardized axes
    log_post_unnorm: float
    weight: float
    approx: GaussianApprox


@dataclass(frozen=True, eq=False)
class ThetaGrid:
    points: list
    mode: np.ndarray                # free internal coordinates of the mode
    hessian: np.ndarray             # of -log pi(z | y) at the mode
    eigvals: np.ndarray
    eigvecs: np.ndarray
    settings: GridSettings
    free_names: list
    evaluations: int
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.points])

    @property
    def axes(self) -> np.ndarray:
        """Columns map one standardized step to a change in internal coordinates."""
        return self.eigvecs / np.sqrt(self.eigvals)


@dataclass(frozen=True, eq=False)
class PosteriorMarginal:
    support: np.ndarray
    density: np.ndarray
    mean: float
    sd: float
    quantiles: dict
    degenerate: bool = False

    @classmethod
    def point_mass(cls, value: float) -> "PosteriorMarginal":
        return cls(np.array([value]), np.array([1.0]), float(value), 0.0,
                   {q: float(value) for q in QUANTILES}, True)

    def integral(self) -> float:
        if self.degenerate:
            return 1.0
        return float(integrate.trapezoid(self.density, self.support))


# ---------------------------------------------------------------------------
# parallel map with ordered results


def _workers(workers) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def parallel_map(fn, items, workers=None) -> list:
    """``list(map(fn, items))``; results keep input order whatever the scheduling."""
    items = list(items)
    n = _workers(workers)
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# hyperparameter posterior


def log_post_theta(model: AugmentedModel, h: HyperPoint, x0=None,
                   **newton) -> tuple[float, GaussianApprox]:
    """Laplace ratio ``log pi(x*, theta, y) - log pi_G(x* | theta, y)``."""
    approx = find_mode(model, h, x0=x0, **newton)
    value = log_joint_at(model, h, approx.mode) - approx.log_density_at_mode()
    return value, approx


class _Posterior:
    """``log pi(z | y)`` on the free internal coordinates with Newton warm starts."""

    def __init__(self, model: AugmentedModel, settings: "GridSettings"):
        self.model = model
        self.newton = dict(grad_tol=settings.grad_tol, step_tol=settings.step_tol,
                           max_iter=settings.max_newton)
        self.spec = model.spec
        self.free = self.spec.free_mask()
        self.template = self.spec.fixed_internal()
        self.bound = settings.bound
        self.x_warm = None
        self.evaluations = 0

    def full(self, zf) -> np.ndarray:
        z = self.template.copy()
        z[self.free] = zf
        return z

    def evaluate(self, zf, x0=None):
        self.evaluations += 1
        zf = np.asarray(zf, dtype=float)
        if np.any(np.abs(zf) > self.bound + 1e-12):
            return -np.inf, None
        try:
            h = self.spec.hyper_from_internal(self.full(zf))
            value, approx = log_post_theta(self.model, h, x0=self.x_warm if x0 is None else x0,
                                           **self.newton)
        except (ConvergenceError, FactorizationError, ModelError, FloatingPointError) as exc:
            log.debug("log_post_theta failed at %s: %s", zf, exc)
            return -np.inf, None
        if not np.isfinite(value):
            return -np.inf, None
        return value, approx

    def __call__(self, zf) -> float:
        value, approx = self.evaluate(zf)
        if approx is not None:
            self.x_warm = approx.mode
        return value


def _initial_internal(spec: DlmSpec, bound: float) -> np.ndarray:
    y = spec.observations
    level = np.nanmean(y, axis=0)
    level = level[np.isfinite(level)]
    d = np.diff(level)
    var = float(np.var(d)) / 3.0 if d.size > 1 else float(np.nanvar(y))
    var = var if np.isfinite(var) and var > 0 else 1.0
    obs_var = np.array([np.nanvar(np.diff(s.values[s.observed])) / 3.0
                        if s.observed.sum() > 2 else var for s in spec.series])
    obs_var = np.where(np.isfinite(obs_var) & (obs_var > 0), obs_var, var)
    z = list(-np.log(obs_var)) + [-np.log(var)]
    if spec.is_student:
        z.append(np.log(10.0 - DOF_LOWER))
    z = np.clip(np.array(z), -bound + 1, bound - 1)
    fixed = spec.fixed_internal()
    return np.where(np.isnan(fixed), z, fixed)


def _fd_gradient(f, z, h, bound=np.inf):
    """Central differences; one-sided where a central point would leave ``|z| <= bound``."""
    g = np.empty(z.size)
    f0 = None
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        if z[i] + h > bound:
            f0 = f(z) if f0 is None else f0
            g[i] = (f0 - f(z - e)) / h
        elif z[i] - h < -bound:
            f0 = f(z) if f0 is None else f0
            g[i] = (f(z + e) - f0) / h
        else:
            g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def _fd_hessian(f, z, h, f0=None):
    d = z.size
    f0 = f(z) if f0 is None else f0
    hess = np.empty((d, d))
    eye = np.eye(d) * h
    for i in range(d):
        hess[i, i] = (f(z + eye[i]) - 2 * f0 + f(z - eye[i])) / h**2
        for j in range(i):
            v = (f(z + eye[i] + eye[j]) - f(z + eye[i] - eye[j])
                 - f(z - eye[i] + eye[j]) + f(z - eye[i] - eye[j])) / (4 * h**2)
            hess[i, j] = hess[j, i] = v
    return hess


def find_theta_mode(post: _Posterior, z0: np.ndarray, settings: GridSettings):
    """Quasi-Newton search for the mode of ``log pi(z | y)``."""
    neg = lambda z: -post(z)
    trace = []

    def fun(z):
        v = neg(z)
        trace.append((z.copy(), v))
        return v if np.isfinite(v) else 1e300

    def jac(z):
        return _fd_gradient(fun, z, settings.fd_step, settings.bound)

    bounds = [(-settings.bound, settings.bound)] * z0.size
    res = optimize.minimize(fun, z0, jac=jac, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 500, "ftol": 1e-13, "gtol": 1e-7})
    if not np.all(np.isfinite(res.x)) or not np.isfinite(post(res.x)):
        raise GridError(f"hyperparameter mode search failed: {res.message}", trace)
    return res.x, trace


def _explore(logdens, mode, hessian, settings: GridSettings, workers=None):
    """Lattice exploration on the standardized axes of ``hessian``.

    Returns ``(eigvals, eigvecs, accepted, warnings, n_evaluated)`` where ``accepted`` maps
    lattice indices to ``(z, value, payload)``.  ``logdens(z)`` returns a
    ``(value, payload)`` pair.
    """
    d = mode.size
    notes = []
    eigvals, eigvecs = np.linalg.eigh(hessian)
    if np.any(eigvals <= 0):
        notes.append("Hessian at the mode is not positive definite; eigenvalues clipped")
        floor = max(1e-6 * np.max(np.abs(eigvals)), 1e-8)
        eigvals = np.maximum(eigvals, floor)
    axes = eigvecs / np.sqrt(eigvals)
    step = settings.step
    drop = settings.drop_for(d)

    def point(idx):
        return mode + axes @ (step * np.asarray(idx, dtype=float))

    evaluated = {}
    center = (0,) * d
    evaluated[center] = logdens(mode)
    top = evaluated[center][0]
    if not np.isfinite(top):
        raise GridError("log density is not finite at the mode")

    # walk each standardized axis in both directions
    extent = np.zeros((d, 2), dtype=int)
    for k in range(d):
        for side, sign in enumerate((-1, 1)):
            j = 0
            while j < settings.max_axis_steps:
                idx = tuple(sign * (j + 1) if i == k else 0 for i in range(d))
                evaluated[idx] = logdens(point(idx))
                if not top - evaluated[idx][0] <= drop:
                    break
                j += 1
            extent[k, side] = j
    lower, upper = -extent[:, 0], extent[:, 1]
    for k in range(d):
        if upper[k] - lower[k] + 1 < 3:
            notes.append(f"fewer than 3 grid points along standardized axis {k}")

    # flood fill of the box from the mode, level by level
    def inside(idx):
        return all(lo <= i <= hi for i, lo, hi in zip(idx, lower, upper))

    def ok(idx):
        return top - evaluated[idx][0] <= drop

    accepted = {center}
    frontier = [center]
    while frontier:
        candidates = []
        seen = set()
        for idx in frontier:
            for k in range(d):
                for sgn in (-1, 1):
                    nb = list(idx)
                    nb[k] += sgn
                    nb = tuple(nb)
                    if inside(nb) and nb not in accepted and nb not in seen:
                        seen.add(nb)
                        candidates.append(nb)
        candidates.sort()
        todo = [c for c in candidates if c not in evaluated]
        for c, res in zip(todo, parallel_map(lambda c: logdens(point(c)), todo, workers)):
            evaluated[c] = res
        frontier = [c for c in candidates if ok(c)]
        accepted.update(frontier)
        if len(evaluated) > settings.max_grid_points:
            raise GridError(f"grid exceeded {settings.max_grid_points} points; the Hessian "
                            "at the mode does not describe the posterior")
    result = {idx: (point(idx),) + tuple(evaluated[idx]) for idx in sorted(accepted)}
    return eigvals, eigvecs, result, notes, len(evaluated)


def explore_grid(model: AugmentedModel, settings: GridSettings | None = None,
                 workers=None) -> ThetaGrid:
    """Locate the hyperparameter mode and lay out the integration grid."""
    settings = settings or GridSettings()
    spec = model.spec
    post = _Posterior(model, settings)
    names = [nm for nm, free in zip(spec.hyper_names(), post.free) if free]
    z0 = _initial_internal(spec, settings.bound)[post.free]

    if z0.size == 0:
        value, approx = post.evaluate(z0)
        if approx is None:
            raise GridError("fit failed at the fixed hyperparameters")
        h = spec.hyper_from_internal(post.full(z0))
        pt = ThetaGridPoint(h, z0, (), value, 1.0, approx)
        return ThetaGrid([pt], z0, np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)),
                         settings, names, post.evaluations)

    mode, trace = find_theta_mode(post, z0, settings)
    _, mode_approx = post.evaluate(mode)
    x_star = mode_approx.mode

    f = lambda z: post.evaluate(z, x0=x_star)[0]
    hess = -_fd_hessian(f, mode, settings.hessian_step)
    if not np.all(np.isfinite(hess)):
        raise GridError("non-finite Hessian at the hyperparameter mode", trace)

    if mode.size > settings.max_grid_dim:
        eigvals, eigvecs = np.linalg.eigh(hess)
        notes = [f"{mode.size} free hyperparameters exceed max_grid_dim="
                 f"{settings.max_grid_dim}; states integrated at the mode only"]
        accepted = {(0,) * mode.size: (mode, post.evaluate(mode, x0=x_star)[0], mode_approx)}
    else:
        eigvals, eigvecs, accepted, notes, n_eval = _explore(
            lambda z: post.evaluate(z, x0=x_star), mode, hess, settings, workers)
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    values = np.array([v for (_, v, _) in accepted.values()])
    w = np.exp(values - values.max())
    w /= w.sum()
    points = []
    for (idx, (z, value, approx)), wk in zip(accepted.items(), w):
        points.append(ThetaGridPoint(spec.hyper_from_internal(post.full(z)), z, idx,
                                     float(value), float(wk), approx))
    return ThetaGrid(points, mode, hess, eigvals, eigvecs, settings, names,
                     post.evaluations, notes)


# ---------------------------------------------------------------------------
# marginals


def _mixture_cdf(x, means, sds, weights):
    return np.sum(weights * special.ndtr((x[:, None] - means) / sds), axis=1)


def _mixture_quantiles(means, sds, weights, probs=QUANTILES, iters=80):
    """Quantiles of Gaussian mixtures by vectorized bisection.

    ``means`` and ``sds`` are ``(T, U)``; ``weights`` is ``(U,)``.
    """
    lo = np.min(means - 12 * sds, axis=1)
    hi = np.max(means + 12 * sds, axis=1)
    out = {}
    for q in probs:
        a, b = lo.copy(), hi.copy()
        for _ in range(iters):
            mid = 0.5 * (a + b)
            c = np.sum(weights * special.ndtr((mid[:, None] - means) / sds), axis=1)
            below = c < q
            a = np.where(below, mid, a)
            b = np.where(below, b, mid)
        out[q] = 0.5 * (a + b)
    return out


def mixture_moments(grid: ThetaGrid) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of every state under the grid mixture."""
    w = grid.weights
    means = np.array([p.approx.mode for p in grid.points])
    var = np.array([p.approx.marginal_variances for p in grid.points])
    mean = w @ means
    second = w @ (var + means**2)
    return mean, np.maximum(second - mean**2, 0.0)


def state_marginals(grid: ThetaGrid) -> list[PosteriorMarginal]:
    """Per-state Gaussian mixtures over the grid points."""
    s = grid.settings
    w = grid.weights
    means = np.array([p.approx.mode for p in grid.points]).T          # (T, U)
    sds = np.sqrt(np.array([p.approx.marginal_variances for p in grid.points]).T)
    mean, var = mixture_moments(grid)
    sd = np.sqrt(var)
    quant = _mixture_quantiles(means, sds, w)
    unit = np.linspace(-s.mixture_width, s.mixture_width, s.mixture_points)
    out = []
    for t in range(means.shape[0]):
        support = mean[t] + sd[t] * unit
        dens = np.sum(w * np.exp(-0.5 * ((support[:, None] - means[t]) / sds[t]) ** 2)
                      / (np.sqrt(2 * np.pi) * sds[t]), axis=1)
        dens = dens / integrate.trapezoid(dens, support)
        out.append(PosteriorMarginal(support, dens, float(mean[t]), float(sd[t]),
                                     {q: float(quant[q][t]) for q in QUANTILES}))
    return out


def _to_natural(name: str):
    """Map from an internal coordinate to its natural value, and ``log |d nat / dz|``."""
    if name == "dof":
        return (lambda z: DOF_LOWER + np.exp(z)), (lambda z: z)
    return np.exp, (lambda z: z)


def _density_summaries(x, dens):
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    mean = float(integrate.trapezoid(x * dens, x))
    var = float(integrate.trapezoid((x - mean) ** 2 * dens, x))
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    quant = {q: float(np.interp(q, cdf[keep], x[keep])) for q in QUANTILES}
    return mean, float(np.sqrt(max(var, 0.0))), quant


def _axis_marginal(positions, weights, center, width, name, n_fine=401):
    """Collapse weighted points onto one internal axis and smooth the result."""
    bins = np.rint((positions - center) / width).astype(int)
    ids = np.arange(bins.min(), bins.max() + 1)
    mass = np.array([weights[bins == i].sum() for i in ids])
    centers = center + ids * width
    keep = mass > 0
    centers, mass = centers[keep], mass[keep]
    to_nat, log_jac = _to_natural(name)
    if centers.size == 1:
        return PosteriorMarginal.point_mass(float(to_nat(centers[0]))), True
    log_d = np.log(mass / width)
    # one extra bin on each side by linear extrapolation when the density decays
    left_slope = (log_d[1] - log_d[0]) / (centers[1] - centers[0])
    right_slope = (log_d[-1] - log_d[-2]) / (centers[-1] - centers[-2])
    xs, ys = list(centers), list(log_d)
    if left_slope > 0:
        xs.insert(0, centers[0] - width)
        ys.insert(0, log_d[0] - left_slope * width)
    if right_slope < 0:
        xs.append(centers[-1] + width)
        ys.append(log_d[-1] + right_slope * width)
    xs, ys = np.array(xs), np.array(ys)
    interp = interpolate.PchipInterpolator(xs, ys)
    zf = np.linspace(xs[0], xs[-1], n_fine)
    dz = np.exp(interp(zf))
    nat = to_nat(zf)
    dens = dz * np.exp(-log_jac(zf))
    dens = dens / integrate.trapezoid(dens, nat)
    mean, sd, quant = _density_summaries(nat, dens)
    return PosteriorMarginal(nat, dens, mean, sd, quant), False


def _gaussian_axis_marginal(center, sd, name, n_fine=401, width=6.0):
    to_nat, log_jac = _to_natural(name)
    zf = center + sd * np.linspace(-width, width, n_fine)
    nat = to_nat(zf)
    dens = np.exp(-0.5 * ((zf - center) / sd) ** 2 - log_jac(zf))
    dens = dens / integrate.trapezoid(dens, nat)
    mean, sd_nat, quant = _density_summaries(nat, dens)
    return PosteriorMarginal(nat, dens, mean, sd_nat, quant)


def hyper_marginals(grid: ThetaGrid, spec: DlmSpec | None = None) -> dict:
    """Marginal posterior of every hyperparameter in natural coordinates.

    For each free internal coordinate the grid weights are collapsed into
    bins one lattice step wide along that coordinate, the binned log density
    is interpolated and mapped to the natural scale with its Jacobian.
    Fixed hyperparameters are reported as point masses.
    """
    out = {}
    names = grid.free_names
    w = grid.weights
    zs = np.array([p.z for p in grid.points]).reshape(len(grid.points), -1)
    axes = grid.axes if zs.shape[1] else np.zeros((0, 0))
    single = len(grid.points) == 1 and zs.shape[1] > 0
    cov = np.linalg.inv(grid.hessian) if single else None
    for k, name in enumerate(names):
        if single:
            # mode-only grid: Gaussian approximation of pi(z | y) from the Hessian
            out[name] = _gaussian_axis_marginal(grid.mode[k], float(np.sqrt(cov[k, k])),
                                                _base_name(name))
            continue
        width = grid.settings.step * float(np.linalg.norm(axes[k]))
        marg, _ = _axis_marginal(zs[:, k], w, grid.mode[k], width, _base_name(name))
        out[name] = marg
    if spec is not None:
        h = grid.points[0].h
        values = dict(zip(spec.hyper_names(), list(h.obs_precision) + [h.sys_precision]
                          + ([h.dof] if spec.is_student else [])))
        for name, free in zip(spec.hyper_names(), spec.free_mask()):
            if not free:
                out[name] = PosteriorMarginal.point_mass(values[name])
    return out


def _base_name(name: str) -> str:
    return name.split("[")[0]


# ---------------------------------------------------------------------------
# top level


@dataclass(frozen=True, eq=False)
class FitResult:
    spec: DlmSpec
    model: AugmentedModel
    grid: ThetaGrid
    diagnostics: dict

    @cached_property
    def _moments(self):
        return mixture_moments(self.grid)

    @property
    def state_means(self) -> np.ndarray:
        return self._moments[0]

    @property
    def state_sds(self) -> np.ndarray:
        return np.sqrt(self._moments[1])

    @cached_property
    def state_marginals(self) -> list[PosteriorMarginal]:
        return state_marginals(self.grid)

    @cached_property
    def hyper_marginals(self) -> dict:
        return hyper_marginals(self.grid, self.spec)

    @property
    def mode(self) -> HyperPoint:
        best = max(self.grid.points, key=lambda p: p.log_post_unnorm)
        return best.h


def fit(spec: DlmSpec, settings: GridSettings | None = None, workers=None,
        epsilon: float = EPSILON) -> FitResult:
    settings = settings or GridSettings()
    start = time.perf_counter()
    model = build_augmented(spec, epsilon)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        grid = explore_grid(model, settings, workers)
    diagnostics = {
        "grid_size": len(grid),
        "evaluations": grid.evaluations,
        "newton_iterations": [p.approx.iterations for p in grid.points],
        "masked": model.masked(),
        "warnings": [str(c.message) for c in caught],
        "wall_time": time.perf_counter() - start,
    }
    return FitResult(spec, model, grid, diagnostics)
