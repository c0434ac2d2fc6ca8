"""Log-density kernels with analytic first and second derivatives.

All kernels are vectorized over their arguments.  Derivatives are taken
with respect to the scalar linear predictor the term depends on: the state
``a_t`` for observation terms, ``delta = a_t - a_{t-1}`` for correction terms.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .model import ModelError

LOG_2PI = np.log(2.0 * np.pi)


class TermEval(NamedTuple):
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def gaussian_obs_term(y, mean, precision) -> TermEval:
    """``log N(y; mean, 1/precision)`` differentiated in ``mean``."""
    precision = np.asarray(precision, dtype=float)
    if np.any(~(precision > 0)):
        raise ModelError("precision must be positive")
    resid = np.asarray(y, dtype=float) - np.asarray(mean, dtype=float)
    value = 0.5 * (np.log(precision) - LOG_2PI) - 0.5 * precision * resid**2
    d1 = precision * resid
    d2 = np.broadcast_to(-precision, np.shape(value)).astype(float)
    return TermEval(value, d1, d2)


def gaussian_correction_term(delta, precision) -> TermEval:
    """Gaussian system noise as a faked zero observation with predictor ``delta``."""
    return gaussian_obs_term(0.0, delta, precision)


def student_t_log_norm(tau, nu):
    """Log normalizing constant of the marginal-precision Student-t."""
    tau = np.asarray(tau, dtype=float)
    nu = np.asarray(nu, dtype=float)
    log_scale = 0.5 * (np.log(nu - 2.0) - np.log(nu) - np.log(tau))
    return gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * np.log(np.pi * nu) - log_scale


def student_t_correction_term(delta, tau, nu) -> TermEval:
    """Log Student-t density of ``delta`` with variance ``1/tau`` and ``nu`` dof.

    The scale is ``sqrt((nu - 2) / (nu * tau))``.  The second derivative is
    positive for ``|delta| > scale * sqrt(nu)``.
    """
    tau = np.asarray(tau, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(~(tau > 0)):
        raise ModelError("tau must be positive")
    if np.any(~(nu > 2)):
        raise ModelError("nu must exceed 2 for the marginal precision to exist")
    delta = np.asarray(delta, dtype=float)
    c = tau / (nu - 2.0)           # 1 / (nu * scale^2)
    u = c * delta**2
    half = 0.5 * (nu + 1.0)
    value = student_t_log_norm(tau, nu) - half * np.log1p(u)
    d1 = -2.0 * half * c * delta / (1.0 + u)
    d2 = -2.0 * half * c * (1.0 - u) / (1.0 + u) ** 2
    return TermEval(value, d1, d2)
