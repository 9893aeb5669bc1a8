"""Gaussian-uncertainty losses and the unsupervised-weight warm-up schedule.

Every loss is the negative log of a Gaussian likelihood with the predicting
network's own sigma, reduced to ``log(sigma) + residual^2 / (2 sigma^2)``
(constant terms dropped; they carry no gradient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .networks import ScorePrediction


@dataclass(frozen=True)
class BetaSchedule:
    """Exponential warm-up of the unsupervised loss weight.

    value(t) = peak * exp(-sharpness * (1 - t/horizon)^2), clamped to its
    peak once t reaches the horizon; nondecreasing on [0, horizon].
    """

    peak: float = 0.2
    sharpness: float = 5.0
    horizon: float = 200.0

    def value(self, t: float) -> float:
        if t < 0:
            raise ContractError(f"schedule epoch must be nonnegative, got {t}")
        u = min(float(t), self.horizon)
        return self.peak * math.exp(-self.sharpness * (1.0 - u / self.horizon) ** 2)


DEFAULT_BETA_SCHEDULE = BetaSchedule()


def beta_at(t: float, schedule: BetaSchedule = DEFAULT_BETA_SCHEDULE) -> float:
    """Unsupervised-loss weight at training epoch ``t``."""
    return schedule.value(t)


def _as_target(target) -> Tensor:
    if isinstance(target, Tensor):
        return target
    return Tensor(np.asarray(target, dtype=np.float64))


def gaussian_nll(target, pred: ScorePrediction) -> Tensor:
    """log(sigma) + (target - mu)^2 / (2 sigma^2), elementwise.

    ``target`` is a constant (scalar or an array matching a batched
    prediction); the result stays in the autodiff graph of ``pred``.
    """
    if np.any(pred.sigma.array <= 0.0):
        raise ContractError("prediction sigma must be strictly positive")
    residual = ad.sub(_as_target(target), pred.mu)
    squared = ad.mul(residual, residual)
    var2 = ad.mul(ad.mul(pred.sigma, pred.sigma), Tensor(2.0))
    return ad.add(ad.log(pred.sigma), ad.div(squared, var2))


def supervised_loss(
    student_pred: ScorePrediction,
    reference_pred: ScorePrediction,
    s,
    s_l,
) -> tuple[Tensor, Tensor]:
    """Per-sample supervised terms (direct regression, relative regression).

    The first term scores the direct prediction against the ground truth s;
    the second scores the relative prediction against |s - s_l|. During
    burn-in the caller passes the teacher's prediction in the student slot.
    """
    l_reg_s = gaussian_nll(s, student_pred)
    target_rel = np.abs(np.asarray(s, dtype=np.float64) - np.asarray(s_l, dtype=np.float64))
    l_reg_r = gaussian_nll(target_rel, reference_pred)
    return l_reg_s, l_reg_r


def unsupervised_loss(student_pred: ScorePrediction, s_bar) -> Tensor:
    """Pseudo-label regression term for the student on unlabeled data."""
    return gaussian_nll(s_bar, student_pred)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-epoch loss components; total = l_reg_s + l_reg_r + beta * l_unsup."""

    l_reg_s: float
    l_reg_r: float
    l_unsup: float
    beta: float
    total: float

    @classmethod
    def from_terms(
        cls, l_reg_s: float, l_reg_r: float, l_unsup: float, beta: float
    ) -> "LossBreakdown":
        return cls(
            l_reg_s=l_reg_s,
            l_reg_r=l_reg_r,
            l_unsup=l_unsup,
            beta=beta,
            total=(l_reg_s + l_reg_r) + beta * l_unsup,
        )
