"""Rank-correlation metric and student-only test evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, MetricUndefinedError
from .networks import FeatureSequence, TeacherParams, teacher_forward

_EVAL_CHUNK = 256


def _ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their ranks."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman's rank correlation: Pearson correlation of the rank series."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise MetricUndefinedError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise MetricUndefinedError(f"need at least 2 values, got {a.size}")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise MetricUndefinedError("rank correlation is undefined for a constant series")
    ra = _ranks(a) - (a.size + 1) / 2.0
    rb = _ranks(b) - (b.size + 1) / 2.0
    return float(np.sum(ra * rb) / np.sqrt(np.sum(ra * ra) * np.sum(rb * rb)))


@dataclass(frozen=True)
class PredictionRow:
    sample_id: str
    truth: float
    mu: float
    sigma: float


def evaluate(
    student: TeacherParams, test_set: Sequence[FeatureSequence]
) -> tuple[float, list[PredictionRow]]:
    """Score a labeled test set with the student network only, unaugmented.

    Returns Spearman's correlation against the ground truth and one
    prediction row per sample. Parameters are read, never mutated.
    """
    samples = list(test_set)
    for s in samples:
        if s.score is None:
            raise ContractError(f"test sample {s.sample_id!r} has no score")
    mus: list[np.ndarray] = []
    sigmas: list[np.ndarray] = []
    with ad.no_grad():
        for lo in range(0, len(samples), _EVAL_CHUNK):
            batch = samples[lo : lo + _EVAL_CHUNK]
            pred = teacher_forward(
                student, Tensor(np.stack([s.features.array for s in batch]))
            )
            mus.append(pred.mu_values)
            sigmas.append(pred.sigma_values)
    mu = np.concatenate(mus) if mus else np.empty(0)
    sigma = np.concatenate(sigmas) if sigmas else np.empty(0)
    truths = np.array([s.score for s in samples], dtype=np.float64)
    rho = spearman(truths, mu)
    rows = [
        PredictionRow(s.sample_id, float(truths[i]), float(mu[i]), float(sigma[i]))
        for i, s in enumerate(samples)
    ]
    return rho, rows


def write_predictions_csv(rows: Sequence[PredictionRow], path) -> None:
    lines = ["sample_id,truth,mu,sigma\n"]
    for r in rows:
        lines.append(f"{r.sample_id},{r.truth!r},{r.mu!r},{r.sigma!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
