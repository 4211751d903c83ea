"""Knowledge-distillation loss functions (pure; no training loop ships)."""

from __future__ import annotations

import math
import warnings

import numpy as np


def kd_loss(teacher: np.ndarray, student_log: np.ndarray) -> float:
    """Cross-entropy of a student log-distribution against teacher probabilities.

    Returns ``-sum_y q(y) * log p(y)``.  The teacher must sum to one within
    1e-6.  A log-zero student entry under positive teacher mass yields an
    infinite loss (flagged with a warning).
    """
    teacher = np.asarray(teacher, dtype=np.float64)
    student_log = np.asarray(student_log, dtype=np.float64)
    if teacher.shape != student_log.shape:
        raise ValueError("teacher and student must cover the same vocabulary")
    if abs(teacher.sum() - 1.0) > 1e-6:
        raise ValueError(f"teacher distribution sums to {teacher.sum():.8f}, not 1")
    support = teacher > 0.0
    if np.any(np.isneginf(student_log[support])):
        warnings.warn("student assigns zero probability under teacher support",
                      RuntimeWarning, stacklevel=2)
        return math.inf
    return float(-(teacher[support] * student_log[support]).sum())


def kd_combined_loss(l_att: float, l_kd: float, kd_weight: float) -> float:
    """Interpolate the label loss and the distillation loss."""
    if not 0.0 <= kd_weight <= 1.0:
        raise ValueError("kd_weight must be in [0, 1]")
    return (1.0 - kd_weight) * l_att + kd_weight * l_kd
