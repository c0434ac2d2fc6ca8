"""Approximate Bayesian inference for random-walk DLMs with robust system noise."""
from .engine import FitResult, GridSettings, fit
from .model import (GAUSSIAN, STUDENT_T, DlmSpec, DofPrior, GammaPrior, HyperPoint, PriorSpec,
                    TimeSeries)
from .oracle import kalman_smooth
from .selection import compare, score

__all__ = ["FitResult", "GridSettings", "fit", "GAUSSIAN", "STUDENT_T", "DlmSpec", "DofPrior",
           "GammaPrior", "HyperPoint", "PriorSpec", "TimeSeries", "kalman_smooth", "compare",
           "score"]
