"""Block boundary detection.

A hypothesis that extends a prefix with the eos token or with a token the
prefix already contains has probably outrun the encoded evidence, and so has
any hypothesis scoring below such a continuation.  The repetition score
``r`` is the best score reachable by repeating any prefix position (eos
counts as a repeat of the initial token, since the two share one index);
the reliability of an extension is ``s = alpha_new - r``.  A boundary fires
when any member of the pruned beam is unreliable, at which point the judged
(prefix, position) pairs are remembered so the same repetition is not
re-penalized once more blocks arrive: a repeat that persists with more
evidence is probably genuine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .core import LOG_ZERO, Beam


@dataclass
class EvaluatedSet:
    """Judged (prefix tokens, repeated position) pairs; insertion is idempotent."""

    pairs: Set[Tuple[Tuple[int, ...], int]] = field(default_factory=set)

    def add(self, prefix: Tuple[int, ...], position: int) -> None:
        self.pairs.add((tuple(prefix), position))

    def __contains__(self, pair: Tuple[Tuple[int, ...], int]) -> bool:
        return pair in self.pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def clear(self) -> None:
        self.pairs.clear()


@dataclass(frozen=True)
class ReliabilityReport:
    """Boundary-detection verdict for one beam hypothesis."""

    hyp_index: int
    prefix: Tuple[int, ...]
    r: float
    s: float
    j_star: Optional[int]

    @property
    def reliable(self) -> bool:
        return self.s > 0.0


def repetition_score(prefix: Tuple[int, ...], dist: np.ndarray, alpha_prev: float,
                     excluded: EvaluatedSet, repetition_criterion: bool = True
                     ) -> Tuple[float, Optional[int]]:
    """Best score among repeated continuations of ``prefix``.

    With the repetition criterion on, maximizes ``dist[prefix[j]] + alpha_prev``
    over positions ``j`` whose (prefix, j) pair has not been judged before;
    eos participates as the repetition of position 0.  With the criterion
    off, only the eos continuation is evaluated (and the exclusion set is
    ignored, position 0 reported).  Returns ``(r, argmax position)``;
    ``r`` is log-zero when every candidate is excluded.
    """
    prefix = tuple(prefix)
    if not repetition_criterion:
        eos_score = float(dist[prefix[0]])
        if eos_score == LOG_ZERO:
            return LOG_ZERO, None
        return eos_score + alpha_prev, 0
    best = LOG_ZERO
    best_j: Optional[int] = None
    for j, tok in enumerate(prefix):
        if (prefix, j) in excluded:
            continue
        score = float(dist[tok])
        if score == LOG_ZERO:
            continue
        if best_j is None or score > best:
            best = score
            best_j = j
    if best_j is None:
        return LOG_ZERO, None
    return best + alpha_prev, best_j


def reliability(alpha_new: float, r: float) -> float:
    """Reliability score ``s = alpha_new - r``; excluded-everything means +inf."""
    if r == LOG_ZERO:
        return float("inf")
    return alpha_new - r


@dataclass(frozen=True)
class BoundaryDecision:
    boundary: bool
    triggered: Tuple[int, ...]  # beam indices whose reports fired


def detect_boundary(beam: Beam, reports: Sequence[ReliabilityReport],
                    evaluated: EvaluatedSet, strict: bool = False) -> BoundaryDecision:
    """Fire a boundary when any top-K hypothesis is unreliable.

    The default trigger is ``s <= 0``; ``strict`` uses ``s < 0``.  The
    (prefix, position) pairs of the triggering hypotheses are recorded into
    ``evaluated`` so they stop contributing to later repetition maxima.
    """
    triggered = []
    for rep in reports:
        fire = rep.s < 0.0 if strict else rep.s <= 0.0
        if fire:
            triggered.append(rep.hyp_index)
            if rep.j_star is not None:
                evaluated.add(rep.prefix, rep.j_star)
    return BoundaryDecision(boundary=bool(triggered), triggered=tuple(triggered))
