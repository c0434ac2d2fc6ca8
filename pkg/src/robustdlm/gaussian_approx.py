"""Gaussian approximation to the full conditional of the state vector.

The full conditional is ``-eps/2 |a|^2 + sum_t g_t(a_t) + sum_t h_t(a_t - a_{t-1})``.
Its Hessian is tridiagonal, so every Newton step costs one banded Cholesky
factorization.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .augment import AugmentedModel
from .likelihood import (LOG_2PI, TermEval, gaussian_correction_term,
                         gaussian_obs_term, student_t_correction_term)
from .model import HyperPoint, log_prior

GRAD_TOL = 1e-8
STEP_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 20
D2_CLAMP = -1e-10


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class FactorizationError(RuntimeError):
    """The approximation Hessian is not positive definite."""


@dataclass(frozen=True, eq=False)
class BandedSpd:
    """Symmetric positive-definite tridiagonal matrix stored by its two bands."""

    diag: np.ndarray
    off: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.size

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower factor in LAPACK band storage: row 0 diagonal, row 1 subdiagonal."""
        ab = np.zeros((2, self.n))
        ab[0] = self.diag
        ab[1, :-1] = self.off
        try:
            return linalg.cholesky_banded(ab, lower=True)
        except linalg.LinAlgError as exc:
            raise FactorizationError(str(exc)) from exc

    @property
    def log_det(self) -> float:
        return float(2.0 * np.sum(np.log(self.cholesky[0])))

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve_banded((self.cholesky, True), np.asarray(b, dtype=float))

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def inverse_bands(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and first off-diagonal of the inverse.

        Backward recursion on the bidiagonal factor ``L``::

            S[n-1, n-1]  = 1 / L[n-1]^2
            S[i, i+1]    = -(l[i] / L[i]) * S[i+1, i+1]
            S[i, i]      = 1 / L[i]^2 - (l[i] / L[i]) * S[i, i+1]
        """
        c = self.cholesky
        d = c[0].tolist()
        l = c[1].tolist()
        n = self.n
        var = [0.0] * n
        cov = [0.0] * max(n - 1, 0)
        var[-1] = 1.0 / (d[-1] * d[-1])
        for i in range(n - 2, -1, -1):
            r = l[i] / d[i]
            cov[i] = -r * var[i + 1]
            var[i] = 1.0 / (d[i] * d[i]) - r * cov[i]
        return np.array(var), np.array(cov)


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    mode: np.ndarray
    precision: BandedSpd
    log_det_precision: float
    iterations: int
    grad_norm: float

    @cached_property
    def _inverse(self):
        return self.precision.inverse_bands()

    @property
    def marginal_variances(self) -> np.ndarray:
        return self._inverse[0]

    @property
    def lag_covariances(self) -> np.ndarray:
        """``Cov(a_t, a_{t+1})`` under the approximation."""
        return self._inverse[1]

    def log_density_at_mode(self) -> float:
        return 0.5 * self.log_det_precision - 0.5 * self.mode.size * LOG_2PI


def _evolution_term(model: AugmentedModel, h: HyperPoint, delta) -> TermEval:
    if model.spec.is_student:
        return student_t_correction_term(delta, h.sys_precision, h.dof)
    return gaussian_correction_term(delta, h.sys_precision)


def _terms(model: AugmentedModel, h: HyperPoint, x: np.ndarray):
    obs = gaussian_obs_term(model.obs_y, x[model.obs_t], h.obs_precisions[model.obs_series])
    evo = _evolution_term(model, h, np.diff(x))
    return obs, evo


def log_likelihood_terms(model: AugmentedModel, h: HyperPoint, x) -> tuple[float, float]:
    """Sum of observation terms and sum of correction terms at ``x``."""
    obs, evo = _terms(model, h, np.asarray(x, dtype=float))
    return float(np.sum(obs.value)), float(np.sum(evo.value))


def log_state_prior(model: AugmentedModel, x) -> float:
    """Independent ``N(0, 1/eps)`` prior on every state."""
    x = np.asarray(x, dtype=float)
    eps = model.epsilon
    return float(0.5 * x.size * (np.log(eps) - LOG_2PI) - 0.5 * eps * np.dot(x, x))


def log_joint_at(model: AugmentedModel, h: HyperPoint, x) -> float:
    """``log pi(theta) + log pi(a) + sum g_t + sum h_t`` in internal coordinates."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_d,):
        raise ValueError(f"state vector must have shape ({model.n_d},), got {x.shape}")
    g, hh = log_likelihood_terms(model, h, x)
    return log_prior(h, model.spec.priors) + log_state_prior(model, x) + g + hh


def _objective(model, h, x) -> float:
    g, hh = log_likelihood_terms(model, h, x)
    return g + hh - 0.5 * model.epsilon * float(np.dot(x, x))


def _gradient_and_precision(model, h, x):
    n = model.n_d
    obs, evo = _terms(model, h, x)
    grad = -model.epsilon * x + np.bincount(model.obs_t, weights=obs.d1, minlength=n)
    grad[1:] += evo.d1
    grad[:-1] -= evo.d1
    w = -np.minimum(evo.d2, D2_CLAMP)
    diag = model.epsilon + np.bincount(model.obs_t, weights=-obs.d2, minlength=n)
    diag[1:] += w
    diag[:-1] += w
    return grad, BandedSpd(diag, -w)


def initial_state(model: AugmentedModel) -> np.ndarray:
    """Cold start: per-time mean of the observations, gaps linearly interpolated."""
    y = model.spec.observations
    seen = ~np.all(np.isnan(y), axis=0)
    if not np.any(seen):
        return np.zeros(model.n_d)
    level = np.full(model.n_d, np.nan)
    level[seen] = np.nanmean(y[:, seen], axis=0)
    t = np.arange(model.n_d)
    return np.interp(t, t[seen], level[seen])


def find_mode(model: AugmentedModel, h: HyperPoint, x0=None, grad_tol: float = GRAD_TOL,
              step_tol: float = STEP_TOL, max_iter: int = MAX_ITER) -> GaussianApprox:
    """Newton iterations with step halving on the full-conditional log density."""
    x = initial_state(model) if x0 is None else np.array(x0, dtype=float)
    f = _objective(model, h, x)
    steps = 0
    for _ in range(max_iter + 1):
        grad, prec = _gradient_and_precision(model, h, x)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < grad_tol:
            break
        if steps == max_iter:
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations (|grad|={gnorm:.3g})", x)
        step = prec.solve(grad)
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_new = x + alpha * step
            f_new = _objective(model, h, x_new)
            if f_new >= f:
                break
            alpha *= 0.5
        else:
            # no ascent along the Newton direction: round-off level
            if gnorm < 1e3 * grad_tol:
                break
            raise ConvergenceError(f"line search failed (|grad|={gnorm:.3g})", x)
        x, f = x_new, f_new
        steps += 1
        if alpha * np.max(np.abs(step)) < step_tol * (1.0 + np.max(np.abs(x))):
            grad, prec = _gradient_and_precision(model, h, x)
            gnorm = float(np.max(np.abs(grad)))
            break
    prec.cholesky  # raises FactorizationError if indefinite
    return GaussianApprox(x, prec, prec.log_det, steps, gnorm)

