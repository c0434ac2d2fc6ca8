"""DIC, CPO / LPML and the relative comparison statistics between two fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .engine import FitResult

LOG_2PI = math.log(2 * math.pi)
GH_NODES = 21
CPO_METHOD = "gauss-hermite"
# 1/cpo beyond exp(700) is treated as a numerically zero predictive density
LOG_INV_CPO_LIMIT = 700.0

EVIDENCE_BANDS = (
    (-1.0, 1.0, "worth mention"),
    (1.0, 5.0, "positive"),
    (5.0, 9.0, "strong"),
    (9.0, math.inf, "very strong"),
)
BELOW_BANDS = "favours gaussian"


@dataclass(frozen=True, eq=False)
class FitScores:
    dic: float
    p_d: float
    neg_lpml: float
    cpo: np.ndarray
    flagged: tuple = ()

    def to_dict(self) -> dict:
        return {"dic": self.dic, "p_d": self.p_d, "neg_lpml": self.neg_lpml,
                "cpo": [float(c) for c in self.cpo], "flagged": list(self.flagged)}


@dataclass(frozen=True)
class PairComparison:
    rdic: float
    lpsbf: float
    rpsbf: float
    evidence_label: str

    @property
    def two_lpsbf(self) -> float:
        return 2.0 * self.lpsbf

    def to_dict(self) -> dict:
        return {"rdic": self.rdic, "lpsbf": self.lpsbf, "2psbf": self.two_lpsbf,
                "rpsbf": self.rpsbf, "evidence": self.evidence_label}


def _grid_arrays(fit: FitResult):
    model = fit.model
    pts = fit.grid.points
    w = np.array([p.weight for p in pts])
    tau = np.array([p.h.obs_precisions[model.obs_series] for p in pts])     # (U, I)
    m = np.array([p.approx.mode[model.obs_t] for p in pts])                 # (U, I)
    v = np.array([p.approx.marginal_variances[model.obs_t] for p in pts])  # (U, I)
    return w, tau, m, v, model.obs_y


def deviance_summary(y, weights, tau, means, variances) -> tuple[float, float, float]:
    """Expected deviance, plug-in deviance and ``p_d`` for Gaussian observations.

    Arrays are ``(U, I)`` over grid points and observations; ``weights`` is ``(U,)``.
    The plug-in uses the posterior means of the states and of the precisions.
    """
    weights = np.asarray(weights, dtype=float)
    y = np.asarray(y, dtype=float)
    dev = -np.log(tau) + LOG_2PI + tau * ((y - means) ** 2 + variances)
    expected = float(weights @ dev.sum(axis=1))
    x_bar = weights @ means
    tau_bar = weights @ tau
    plug = float(np.sum(-np.log(tau_bar) + LOG_2PI + tau_bar * (y - x_bar) ** 2))
    return expected, plug, expected - plug


def compute_dic(fit: FitResult) -> tuple[float, float]:
    """``(DIC, p_d)`` with ``DIC = 2 E[D] - D(posterior means)``."""
    w, tau, m, v, y = _grid_arrays(fit)
    expected, plug, p_d = deviance_summary(y, w, tau, m, v)
    return expected + p_d, p_d


def log_inverse_cpo_terms(y, tau, means, variances, method: str = CPO_METHOD):
    """``log E[1 / N(y; x, 1/tau)]`` for ``x ~ N(mean, var)``, elementwise.

    ``method="exact"`` is the closed form, finite only for ``var * tau < 1``.
    It is exact for the Gaussian approximation but diverges when a state's
    leave-one-out precision collapses (Student-t terms at clamped curvature);
    the default 21-node Gauss-Hermite rule stays bounded there.
    """
    y, tau, means, variances = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                     for a in (y, tau, means, variances)))
    if method == "exact":
        shrink = 1.0 - variances * tau
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (0.5 * (LOG_2PI - np.log(tau)) - 0.5 * np.log(shrink)
                   + 0.5 * tau * (y - means) ** 2 / shrink)
        return np.where(shrink > 0, out, np.inf)
    if method == "gauss-hermite":
        nodes, gw = np.polynomial.hermite.hermgauss(GH_NODES)
        x = means[..., None] + np.sqrt(2.0 * variances)[..., None] * nodes
        inv_lik = (0.5 * (LOG_2PI - np.log(tau)))[..., None] + 0.5 * tau[..., None] * (y[..., None] - x) ** 2
        return logsumexp(inv_lik + np.log(gw / np.sqrt(np.pi)), axis=-1)
    raise ValueError(f"unknown cpo method {method!r}")


def compute_cpo(fit: FitResult, method: str = CPO_METHOD) -> FitScores:
    """CPO per observation through ``1/cpo_i = E[1 / pi(y_i | x, theta) | y]``."""
    w, tau, m, v, y = _grid_arrays(fit)
    terms = log_inverse_cpo_terms(y, tau, m, v, method)
    with np.errstate(divide="ignore"):
        log_inv = logsumexp(terms + np.log(w)[:, None], axis=0)
    bad = ~np.isfinite(log_inv) | (log_inv > LOG_INV_CPO_LIMIT)
    flagged = tuple(int(i) for i in np.flatnonzero(bad))
    if flagged:
        warnings.warn(f"numerically zero CPO at observations {flagged}; excluded from LPML",
                      RuntimeWarning, stacklevel=2)
    cpo = np.exp(-log_inv)
    neg_lpml = float(np.sum(log_inv[~bad]))
    dic, p_d = compute_dic(fit)
    return FitScores(dic, p_d, neg_lpml, cpo, flagged)


def score(fit: FitResult, method: str = CPO_METHOD) -> FitScores:
    return compute_cpo(fit, method)


def evidence_label(two_lpsbf: float) -> str:
    for lo, hi, label in EVIDENCE_BANDS:
        if lo < two_lpsbf <= hi:
            return label
    if math.isnan(two_lpsbf):
        return "undefined"
    return BELOW_BANDS


def _ratio(num: float, den: float) -> float:
    return num / den if den != 0 else math.nan


def compare(gauss: FitScores, student: FitScores) -> PairComparison:
    """Relative DIC, log pseudo Bayes factor and relative lPsBF.

    ``lpsbf`` is positive when the Student-t fit predicts better, which is
    the orientation of the evidence bands.  ``rpsbf`` is the
    ratio ``(LPML_G - LPML_t) / LPML_t``.
    """
    lpml_g, lpml_t = -gauss.neg_lpml, -student.neg_lpml
    rdic = _ratio(gauss.dic - student.dic, student.dic)
    lpsbf = gauss.neg_lpml - student.neg_lpml
    rpsbf = _ratio(lpml_g - lpml_t, lpml_t)
    return PairComparison(rdic, lpsbf, rpsbf, evidence_label(2.0 * lpsbf))
