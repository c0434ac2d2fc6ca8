"""Reference computations used to validate the approximate engine.

``kalman_smooth`` is exact for Gaussian system noise.  ``dense_posterior``
integrates small models by brute-force quadrature on a tensor grid; the sum
over the state grid is carried out with forward/backward recursions, which
is the same tensor sum evaluated in chain order.

Both target the engine's posterior exactly, including the fixed
``N(0, 1/eps)`` prior placed on every state.  The densities are evaluated
with :mod:`scipy.stats` rather than the engine's own kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .augment import EPSILON, AugmentedModel
from .model import log_prior_internal

MAX_DENSE_STATES = 8


@dataclass(frozen=True)
class SmootherResult:
    means: np.ndarray
    variances: np.ndarray
    log_marginal_likelihood: float
    filtered_means: np.ndarray
    filtered_variances: np.ndarray


def kalman_smooth(y, obs_variance, sys_variance, epsilon: float = EPSILON) -> SmootherResult:
    """Kalman filter and RTS smoother for the random walk plus noise model.

    ``y`` is ``(n_d,)`` or ``(n_series, n_d)`` with ``NaN`` for gaps;
    ``obs_variance`` is a scalar or one value per series.  The state prior is
    ``a_1 ~ N(0, 1/epsilon)``; for ``t >= 2`` the ``N(0, 1/epsilon)`` state
    prior enters as an extra zero-valued observation of ``a_t`` with variance
    ``1/epsilon``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n_series, n = y.shape
    obs_var = np.broadcast_to(np.asarray(obs_variance, dtype=float), (n_series,))
    prior_var = 1.0 / epsilon

    mf = np.empty(n)
    pf = np.empty(n)
    loglik = 0.0
    m, p = 0.0, prior_var
    for t in range(n):
        if t > 0:
            p = p + sys_variance
            f = p + prior_var
            loglik -= 0.5 * (np.log(2 * np.pi * f) + m * m / f)
            k = p / f
            m, p = m - k * m, p * prior_var / f
        for s in range(n_series):
            if np.isnan(y[s, t]):
                continue
            f = p + obs_var[s]
            v = y[s, t] - m
            loglik -= 0.5 * (np.log(2 * np.pi * f) + v * v / f)
            k = p / f
            m, p = m + k * v, p * obs_var[s] / f
        mf[t], pf[t] = m, p

    ms = mf.copy()
    ps = pf.copy()
    for t in range(n - 2, -1, -1):
        pred = pf[t] + sys_variance
        j = pf[t] / pred
        ms[t] = mf[t] + j * (ms[t + 1] - mf[t])
        ps[t] = pf[t] + j * j * (ps[t + 1] - pred)
    return SmootherResult(ms, ps, float(loglik), mf, pf)


def dense_precision(n, obs_precision_sum, sys_variance, epsilon: float = EPSILON) -> np.ndarray:
    """``eps I + R / sys_variance + diag(obs_precision_sum)`` as a dense matrix."""
    r = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    r[0, 0] = r[-1, -1] = 1.0
    return epsilon * np.eye(n) + r / sys_variance + np.diag(np.broadcast_to(obs_precision_sum, (n,)))


@dataclass(frozen=True, eq=False)
class DensePosterior:
    theta_axes: tuple
    log_theta: np.ndarray          # log pi(z, y) on the theta tensor grid (internal coords)
    theta_weights: np.ndarray      # normalized quadrature weights on the same grid
    state_axes: tuple
    state_densities: np.ndarray    # (n_d, R) normalized marginal densities
    state_means: np.ndarray
    state_variances: np.ndarray

    @property
    def theta_mode(self) -> np.ndarray:
        idx = np.unravel_index(np.argmax(self.log_theta), self.log_theta.shape)
        return np.array([ax[i] for ax, i in zip(self.theta_axes, idx)])

    def theta_marginal(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Marginal density of internal coordinate ``k`` on its axis."""
        other = tuple(i for i in range(self.theta_weights.ndim) if i != k)
        mass = self.theta_weights.sum(axis=other)
        ax = self.theta_axes[k]
        return ax, mass / _trapezoid_weights(ax)

    def theta_mean(self, k: int, transform=None) -> float:
        grids = np.meshgrid(*self.theta_axes, indexing="ij")
        vals = grids[k] if transform is None else transform(grids[k])
        return float(np.sum(self.theta_weights * vals))


def _trapezoid_weights(ax) -> np.ndarray:
    ax = np.asarray(ax, dtype=float)
    if ax.size == 1:
        return np.ones(1)
    w = np.zeros(ax.size)
    h = np.diff(ax)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _system_logpdf(delta, sys_precision, dof):
    # delta: (R, R); sys_precision, dof: (B,) -> (B, R, R)
    prec = sys_precision[:, None, None]
    if dof is None:
        return stats.norm.logpdf(delta[None], scale=np.sqrt(1.0 / prec))
    nu = dof[:, None, None]
    scale = np.sqrt((nu - 2.0) / (nu * prec))
    return stats.t.logpdf(delta[None], df=nu, scale=scale)


def dense_posterior(model: AugmentedModel, theta_axes: Sequence, state_axes,
                    max_states: int = MAX_DENSE_STATES, chunk: int = 256) -> DensePosterior:
    """Brute-force posterior on a tensor grid of hyperparameters and states.

    ``theta_axes`` holds one array of internal-coordinate values per
    hyperparameter (a single value holds it fixed).  ``state_axes`` is one
    array shared by all states or one array per state; every state axis must
    have the same length.
    """
    spec = model.spec
    n = model.n_d
    if n > max_states:
        raise ValueError(f"dense quadrature refused for n_d={n} > {max_states}")
    theta_axes = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in theta_axes)
    if len(theta_axes) != spec.n_hyper:
        raise ValueError(f"expected {spec.n_hyper} theta axes, got {len(theta_axes)}")
    if np.ndim(state_axes[0]) == 0:
        state_axes = [np.asarray(state_axes, dtype=float)] * n
    state_axes = tuple(np.asarray(a, dtype=float) for a in state_axes)
    if len(state_axes) != n or len({a.size for a in state_axes}) != 1:
        raise ValueError("need one state axis per state, all of equal length")
    log_dx = np.array([np.log(_trapezoid_weights(a)) for a in state_axes])   # (n, R)
    xs = np.array(state_axes)                                                  # (n, R)

    shape = tuple(a.size for a in theta_axes)
    zs = np.array(list(product(*theta_axes)))                                  # (U, m)
    n_obs = spec.n_series
    obs_prec = np.exp(zs[:, :n_obs])
    sys_prec = np.exp(zs[:, n_obs])
    dof = 2.0 + np.exp(zs[:, -1]) if spec.is_student else None

    y = spec.observations
    eps = model.epsilon
    base = stats.norm.logpdf(xs, scale=np.sqrt(1.0 / eps))                    # (n, R)
    log_z = np.empty(len(zs))
    m1 = np.empty((len(zs), n))
    m2 = np.empty((len(zs), n))
    dens = np.empty((len(zs), n, xs.shape[1]))
    for lo in range(0, len(zs), chunk):
        sl = slice(lo, lo + chunk)
        b = len(zs[sl])
        unary = np.broadcast_to(base, (b,) + base.shape).copy()               # (B, n, R)
        for s in range(n_obs):
            for t in range(n):
                if not np.isnan(y[s, t]):
                    unary[:, t] += stats.norm.logpdf(
                        y[s, t], loc=xs[t][None], scale=np.sqrt(1.0 / obs_prec[sl, s])[:, None])
        pair = [_system_logpdf(xs[t + 1][None, :] - xs[t][:, None], sys_prec[sl],
                               None if dof is None else dof[sl]) for t in range(n - 1)]
        alpha = [unary[:, 0]]
        for t in range(1, n):
            alpha.append(unary[:, t] + logsumexp(
                (alpha[-1] + log_dx[t - 1])[:, :, None] + pair[t - 1], axis=1))
        beta = [np.zeros_like(unary[:, -1])]
        for t in range(n - 2, -1, -1):
            beta.insert(0, logsumexp(pair[t] + (unary[:, t + 1] + log_dx[t + 1] + beta[0])[:, None, :],
                                     axis=2))
        lz = logsumexp(alpha[-1] + log_dx[-1], axis=1)
        log_z[sl] = lz
        for t in range(n):
            d = np.exp(alpha[t] + beta[t] - lz[:, None])
            w = d * np.exp(log_dx[t])
            m1[sl, t] = w @ xs[t]
            m2[sl, t] = w @ xs[t] ** 2
            dens[sl, t] = d

    prior = np.array([log_prior_internal(z, spec.priors, n_obs=n_obs, student=spec.is_student)
                      for z in zs])
    log_theta = (log_z + prior).reshape(shape)
    tw = np.ones(shape)
    for k, ax in enumerate(theta_axes):
        tw = tw * _trapezoid_weights(ax).reshape([-1 if i == k else 1 for i in range(len(shape))])
    logw = log_theta + np.log(tw)
    weights = np.exp(logw - logsumexp(logw))
    wflat = weights.ravel()
    mean = wflat @ m1
    var = wflat @ m2 - mean**2
    state_dens = np.einsum("u,utr->tr", wflat, dens)
    return DensePosterior(theta_axes, log_theta, weights, state_axes, state_dens, mean, var)
