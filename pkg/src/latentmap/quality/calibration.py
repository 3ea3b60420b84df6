"""Four-parameter logistic calibration of raw quality scores.

Mapping: q -> (xi1 - xi2) / (1 + exp(-(q - xi3) / |xi4|)) + xi2 with the
asymptotes pinned at xi1 = 1, xi2 = 0 so calibrated scores live in (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import least_squares

from ..errors import ConfigurationError, DegenerateFitError

__all__ = ["LogisticParams", "apply_logistic", "fit_logistic", "CalibratedScorer"]


@dataclass(frozen=True)
class LogisticParams:
    xi3: float
    xi4: float
    xi1: float = 1.0
    xi2: float = 0.0

    def __post_init__(self):
        if self.xi4 == 0:
            raise ConfigurationError("logistic slope parameter xi4 must be nonzero")


def apply_logistic(params: LogisticParams, q):
    """Squash a raw score into (xi2, xi1); strictly monotone in q."""
    span = params.xi1 - params.xi2
    z = (q - params.xi3) / abs(params.xi4)
    if torch.is_tensor(q):
        return span * torch.sigmoid(z) + params.xi2
    if z >= 0:
        return span / (1.0 + math.exp(-z)) + params.xi2
    ez = math.exp(z)
    return span * ez / (1.0 + ez) + params.xi2


def fit_logistic(scores, targets=None) -> LogisticParams:
    """Least-squares fit of (xi3, xi4) against targets in [0, 1].

    Without targets, falls back to xi3 = mean(scores), |xi4| = std(scores),
    which centres the logistic on the score distribution.
    """
    scores = np.asarray([float(s) for s in scores], dtype=np.float64)
    if len(np.unique(scores)) < 2:
        raise DegenerateFitError("need at least 2 distinct scores to calibrate")
    loc = float(scores.mean())
    spread = float(scores.std())
    if targets is None:
        return LogisticParams(xi3=loc, xi4=max(spread, 1e-12))
    targets = np.asarray([float(t) for t in targets], dtype=np.float64)
    if targets.shape != scores.shape:
        raise ConfigurationError("scores and targets must have equal length")

    def residuals(theta):
        xi3, xi4 = theta
        return 1.0 / (1.0 + np.exp(-(scores - xi3) / abs(xi4))) - targets

    fit = least_squares(residuals, x0=[loc, max(spread, 1e-6)], method="lm")
    return LogisticParams(xi3=float(fit.x[0]), xi4=float(fit.x[1]))


class CalibratedScorer:
    """A scorer composed with the logistic map; scores land in (0, 1)."""

    def __init__(self, scorer, params: LogisticParams):
        self.scorer = scorer
        self.params = params
        self.identifier = f"{scorer.identifier}+logistic"
        self.score_range = (params.xi2, params.xi1)

    def score(self, x):
        return apply_logistic(self.params, self.scorer.score(x))

    __call__ = score
