"""Augmented observation model: real observations plus faked zero observations.

Each system equation ``a_t - a_{t-1} - w_t = 0`` becomes an artificial
observation ``z = 0`` with linear predictor ``a_t - a_{t-1}`` and the system
noise density as its likelihood.  Inference runs on the state vector ``a``
directly, with a fixed low-precision Gaussian prior on every state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DlmSpec, ModelError

EPSILON = 1e-5

OBSERVATION = 0
EVOLUTION = 1


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    """Augmented response and row layout.

    Observation rows come first (series-major, time ascending, missing
    entries dropped), then the ``n_d - 1`` evolution rows.  For row ``r``,
    ``state[r]`` is the state it touches and, for evolution rows,
    ``prev_state[r]`` is the lagged state (``-1`` for observation rows).
    """

    spec: DlmSpec
    z: np.ndarray
    role: np.ndarray
    state: np.ndarray
    prev_state: np.ndarray
    series: np.ndarray
    state_dim: int
    epsilon: float = EPSILON

    @property
    def n_d(self) -> int:
        return self.state_dim

    @property
    def family(self) -> str:
        return self.spec.family

    @property
    def obs_rows(self) -> np.ndarray:
        return np.flatnonzero(self.role == OBSERVATION)

    @property
    def evo_rows(self) -> np.ndarray:
        return np.flatnonzero(self.role == EVOLUTION)

    @property
    def n_obs(self) -> int:
        return int(np.sum(self.role == OBSERVATION))

    # compact views used by the solver
    @property
    def obs_y(self) -> np.ndarray:
        return self.z[self.role == OBSERVATION]

    @property
    def obs_t(self) -> np.ndarray:
        return self.state[self.role == OBSERVATION]

    @property
    def obs_series(self) -> np.ndarray:
        return self.series[self.role == OBSERVATION]

    def masked(self) -> list[tuple[int, int]]:
        """``(series, time)`` pairs without an observation row."""
        y = self.spec.observations
        return [tuple(int(v) for v in idx) for idx in np.argwhere(np.isnan(y))]


def build_augmented(spec: DlmSpec, epsilon: float = EPSILON) -> AugmentedModel:
    n = spec.n_d
    if n < 2:
        raise ModelError(f"n_d must be at least 2, got {n}")
    if not epsilon > 0:
        raise ModelError("epsilon must be positive")
    y = spec.observations
    s_idx, t_idx = np.nonzero(~np.isnan(y))
    obs_z = y[s_idx, t_idx]
    evo_t = np.arange(1, n)

    z = np.concatenate([obs_z, np.zeros(n - 1)])
    role = np.concatenate([np.full(obs_z.size, OBSERVATION), np.full(n - 1, EVOLUTION)])
    state = np.concatenate([t_idx, evo_t])
    prev_state = np.concatenate([np.full(obs_z.size, -1), evo_t - 1])
    series = np.concatenate([s_idx, np.full(n - 1, -1)])
    for arr in (z, role, state, prev_state, series):
        arr.flags.writeable = False
    return AugmentedModel(spec, z, role, state.astype(int), prev_state.astype(int),
                          series.astype(int), n, float(epsilon))


@dataclass(frozen=True)
class Rw1Precision:
    """Structure matrix of the first-order random walk (tridiagonal)."""

    n: int
    diag: np.ndarray
    off: np.ndarray

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def quadratic_form(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sum(self.diag * x * x) + 2.0 * np.sum(self.off * x[1:] * x[:-1]))

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.diag * x
        out[:-1] += self.off * x[1:]
        out[1:] += self.off * x[:-1]
        return out


def build_rw1_precision(n: int) -> Rw1Precision:
    if n < 2:
        raise ModelError(f"RW1 structure needs n >= 2, got {n}")
    diag = np.full(n, 2.0)
    diag[0] = diag[-1] = 1.0
    return Rw1Precision(n, diag, -np.ones(n - 1))
