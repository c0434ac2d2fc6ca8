"""Model and prior declarations for the first-order random-walk DLM.

    y_t = a_t + v_t,        v_t ~ N(0, 1/obs_precision)
    a_t = a_{t-1} + w_t,    w_t ~ N(0, 1/sys_precision)  or  t(0, sys_precision, dof)

Hyperparameters are kept as precisions.  Exploration happens in an unbounded
internal parametrization::

    z_obs = log(obs_precision), z_sys = log(sys_precision), z_dof = log(dof - 2)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, special

GAUSSIAN = "gaussian"
STUDENT_T = "student_t"
FAMILIES = (GAUSSIAN, STUDENT_T)

# bounds of the "flexible" range whose prior mass is fixed by ``DofPrior.df``
DOF_LOWER = 2.0
DOF_FLEX_UPPER = 10.0


class ModelError(ValueError):
    """Invalid model, prior or hyperparameter value."""


# ---------------------------------------------------------------------------
# noise families


@dataclass(frozen=True)
class Gaussian:
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.variance) or self.variance <= 0:
            raise ModelError(f"variance must be positive, got {self.variance}")

    @property
    def precision(self) -> float:
        return 1.0 / self.variance

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(0.0, np.sqrt(self.variance), size=size)


@dataclass(frozen=True)
class StudentT:
    """Student-t with marginal precision ``tau`` (variance ``1/tau``), ``dof > 2``."""

    marginal_precision: float
    dof: float

    def __post_init__(self):
        if not np.isfinite(self.marginal_precision) or self.marginal_precision <= 0:
            raise ModelError(f"marginal precision must be positive, got {self.marginal_precision}")
        if not self.dof > DOF_LOWER:
            raise ModelError(f"dof must exceed 2 for a finite variance, got {self.dof}")

    @property
    def variance(self) -> float:
        return 1.0 / self.marginal_precision

    @property
    def scale(self) -> float:
        return np.sqrt((self.dof - 2.0) / (self.dof * self.marginal_precision))

    def sample(self, rng: np.random.Generator, size=None):
        return self.scale * rng.standard_t(self.dof, size=size)


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) prior on a precision; mean is ``shape / rate``."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ModelError(f"Gamma shape and rate must be positive, got {self.shape}, {self.rate}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape * np.log(self.rate) - special.gammaln(self.shape)
                   + (self.shape - 1.0) * np.log(x) - self.rate * x)
        return np.where(x > 0, out, -np.inf)


def _flex_mass(lam: float) -> float:
    # P(1/nu >= 1/10) for 1/nu ~ Exp(lam) truncated to (0, 1/2)
    if lam == 0.0:
        return 0.8
    return float(np.exp(-0.1 * lam) * np.expm1(-0.4 * lam) / np.expm1(-0.5 * lam))


@dataclass(frozen=True)
class DofPrior:
    """Prior on the degrees of freedom through the flexibility ``kappa = 1/nu``.

    ``kappa`` follows an exponential law truncated to ``(0, 1/2)``, so the
    prior mode sits at ``kappa = 0`` (the Gaussian limit).  The rate is
    solved so that ``P(2 < nu <= 10) = df``.  Values of ``df`` above 0.8 can
    only be met with a negative rate, which moves the mode to ``nu = 2``.
    """

    df: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.df < 1.0:
            raise ModelError(f"df must lie in (0, 1), got {self.df}")

    @cached_property
    def rate(self) -> float:
        if abs(self.df - 0.8) < 1e-14:
            return 0.0
        return optimize.brentq(lambda lam: _flex_mass(lam) - self.df, -700.0, 700.0,
                               xtol=1e-14, rtol=1e-15)

    @cached_property
    def _log_norm(self) -> float:
        lam = self.rate
        if lam == 0.0:
            return np.log(0.5)
        return float(np.log(-np.expm1(-0.5 * lam) / lam))

    def logpdf(self, nu):
        """Log density in ``nu``; ``-inf`` outside ``(2, inf)``."""
        nu = np.asarray(nu, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            kappa = 1.0 / nu
            out = -self.rate * kappa - self._log_norm - 2.0 * np.log(nu)
        return np.where(nu > DOF_LOWER, out, -np.inf)

    def cdf(self, nu):
        nu = np.asarray(nu, dtype=float)
        lam = self.rate
        kappa = np.clip(1.0 / np.maximum(nu, DOF_LOWER), 0.0, 0.5)
        if lam == 0.0:
            upper = 0.5 - kappa
        else:
            upper = (np.exp(-lam * kappa) - np.exp(-0.5 * lam)) / lam
        return np.where(nu > DOF_LOWER, upper / np.exp(self._log_norm), 0.0)

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.uniform(size=size)
        lam = self.rate
        if lam == 0.0:
            kappa = 0.5 * u
        else:
            kappa = -np.log1p(u * np.expm1(-0.5 * lam)) / lam
        return 1.0 / kappa


@dataclass(frozen=True)
class PriorSpec:
    obs_precision: GammaPrior = GammaPrior(1.0, 2.375)
    sys_precision: GammaPrior = GammaPrior(1.0, 2.375)
    dof: DofPrior = DofPrior(0.3)


# ---------------------------------------------------------------------------
# data and model


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Observed series; ``NaN`` entries or ``missing=True`` mark gaps."""

    values: np.ndarray
    missing: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        missing = np.isnan(values)
        if self.missing is not None:
            extra = np.asarray(self.missing, dtype=bool).ravel()
            if extra.shape != values.shape:
                raise ModelError("missing mask must match the series length")
            missing = missing | extra
        if values.size < 2:
            raise ModelError(f"a series needs at least 2 time points, got {values.size}")
        if not np.all(np.isfinite(values[~missing])):
            raise ModelError("observed values must be finite")
        values = np.where(missing, np.nan, values)
        values.flags.writeable = False
        missing.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    def __len__(self):
        return self.values.size

    @property
    def observed(self) -> np.ndarray:
        return ~self.missing


_FIXABLE = ("obs_precision", "sys_precision", "dof")


@dataclass(frozen=True, eq=False)
class DlmSpec:
    """A random-walk DLM with one or more series sharing the state path.

    ``fixed`` maps any of ``obs_precision``, ``sys_precision`` or ``dof`` to a
    value that is held constant instead of being integrated out.
    """

    series: TimeSeries | Sequence[TimeSeries]
    family: str = GAUSSIAN
    priors: PriorSpec = field(default_factory=PriorSpec)
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        series = self.series
        if isinstance(series, TimeSeries):
            series = (series,)
        elif isinstance(series, np.ndarray) and series.ndim == 2:
            series = tuple(TimeSeries(row) for row in series)
        elif isinstance(series, np.ndarray) or (
                isinstance(series, Sequence) and series and np.isscalar(series[0])):
            series = (TimeSeries(series),)
        else:
            series = tuple(s if isinstance(s, TimeSeries) else TimeSeries(s) for s in series)
        if not series:
            raise ModelError("at least one series is required")
        if len({len(s) for s in series}) != 1:
            raise ModelError("all series in a group must share the same length")
        if self.family not in FAMILIES:
            raise ModelError(f"unknown system-noise family {self.family!r}")
        fixed = dict(self.fixed)
        for key in fixed:
            if key not in _FIXABLE:
                raise ModelError(f"cannot fix {key!r}; choose from {_FIXABLE}")
        if "dof" in fixed and self.family != STUDENT_T:
            raise ModelError("dof can only be fixed for the Student-t family")
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "fixed", fixed)

    @property
    def n_d(self) -> int:
        return len(self.series[0])

    @property
    def n_series(self) -> int:
        return len(self.series)

    @property
    def is_student(self) -> bool:
        return self.family == STUDENT_T

    @property
    def observations(self) -> np.ndarray:
        """``(n_series, n_d)`` array with ``NaN`` at missing entries."""
        return np.vstack([s.values for s in self.series])

    @property
    def n_hyper(self) -> int:
        return self.n_series + 1 + int(self.is_student)

    def hyper_names(self) -> list[str]:
        if self.n_series == 1:
            names = ["obs_precision"]
        else:
            names = [f"obs_precision[{i}]" for i in range(self.n_series)]
        names.append("sys_precision")
        if self.is_student:
            names.append("dof")
        return names

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n_hyper, dtype=bool)
        if "obs_precision" in self.fixed:
            mask[: self.n_series] = False
        if "sys_precision" in self.fixed:
            mask[self.n_series] = False
        if "dof" in self.fixed:
            mask[-1] = False
        return mask

    def fixed_internal(self) -> np.ndarray:
        """Full internal vector with fixed entries filled and free ones ``NaN``."""
        z = np.full(self.n_hyper, np.nan)
        if "obs_precision" in self.fixed:
            z[: self.n_series] = np.log(self.fixed["obs_precision"])
        if "sys_precision" in self.fixed:
            z[self.n_series] = np.log(self.fixed["sys_precision"])
        if "dof" in self.fixed:
            z[-1] = np.log(self.fixed["dof"] - DOF_LOWER)
        return z

    def hyper_from_internal(self, z) -> "HyperPoint":
        return HyperPoint.from_internal(z, n_obs=self.n_series, student=self.is_student)


# ---------------------------------------------------------------------------
# hyperparameters


@dataclass(frozen=True)
class HyperPoint:
    obs_precision: tuple[float, ...]
    sys_precision: float
    dof: float | None = None

    def __post_init__(self):
        obs = self.obs_precision
        obs = tuple(float(v) for v in np.atleast_1d(np.asarray(obs, dtype=float)))
        object.__setattr__(self, "obs_precision", obs)
        object.__setattr__(self, "sys_precision", float(self.sys_precision))
        values = list(obs) + [self.sys_precision]
        if self.dof is not None:
            object.__setattr__(self, "dof", float(self.dof))
            values.append(self.dof)
        if not all(np.isfinite(v) for v in values):
            raise ModelError(f"non-finite hyperparameter in {values}")
        if min(obs) <= 0 or self.sys_precision <= 0:
            raise ModelError("precisions must be positive")
        if self.dof is not None and not self.dof > DOF_LOWER:
            raise ModelError(f"dof must exceed 2, got {self.dof}")

    @property
    def obs_precisions(self) -> np.ndarray:
        return np.asarray(self.obs_precision)

    @property
    def internal_coords(self) -> np.ndarray:
        return transform_to_internal(self)

    @classmethod
    def from_internal(cls, z, n_obs: int = 1, student: bool | None = None) -> "HyperPoint":
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise ModelError(f"non-finite internal coordinates {z}")
        if student is None:
            student = z.size == n_obs + 2
        if z.size != n_obs + 1 + int(student):
            raise ModelError(f"expected {n_obs + 1 + int(student)} internal coordinates, got {z.size}")
        dof = DOF_LOWER + np.exp(z[-1]) if student else None
        return cls(tuple(np.exp(z[:n_obs])), float(np.exp(z[n_obs])), dof)


def transform_to_internal(h: HyperPoint) -> np.ndarray:
    parts = [np.log(h.obs_precisions), [np.log(h.sys_precision)]]
    if h.dof is not None:
        parts.append([np.log(h.dof - DOF_LOWER)])
    return np.concatenate(parts)


def from_internal(z, n_obs: int = 1, student: bool | None = None) -> HyperPoint:
    return HyperPoint.from_internal(z, n_obs=n_obs, student=student)


def log_prior_natural(h: HyperPoint, priors: PriorSpec) -> float:
    """Log prior density with respect to the natural coordinates."""
    lp = float(np.sum(priors.obs_precision.logpdf(h.obs_precisions)))
    lp += float(priors.sys_precision.logpdf(h.sys_precision))
    if h.dof is not None:
        lp += float(priors.dof.logpdf(h.dof))
    return lp


def log_jacobian(h: HyperPoint) -> float:
    """``log |d natural / d internal|``."""
    jac = float(np.sum(np.log(h.obs_precisions))) + np.log(h.sys_precision)
    if h.dof is not None:
        with np.errstate(divide="ignore"):
            jac += np.log(h.dof - DOF_LOWER)
    return float(jac)


def log_prior(h: HyperPoint, priors: PriorSpec) -> float:
    """Log prior density of the internal coordinates (natural density + Jacobian)."""
    return log_prior_natural(h, priors) + log_jacobian(h)


def log_prior_internal(z, priors: PriorSpec, n_obs: int = 1, student: bool | None = None) -> float:
    """``log_prior`` evaluated directly at internal coordinates.

    Unlike :class:`HyperPoint`, this accepts ``z_dof = -inf`` (``nu = 2``) and
    returns ``-inf`` there.
    """
    z = np.asarray(z, dtype=float)
    if student is None:
        student = z.size == n_obs + 2
    if student and np.isneginf(z[-1]):
        return -np.inf
    return log_prior(HyperPoint.from_internal(z, n_obs=n_obs, student=student), priors)
