"""Shared domain types and log-domain score arithmetic.

Everything downstream (encoder, scorers, block boundary detection, search)
works on the immutable value types defined here.  Scores are 64-bit floats
accumulated in the log domain; log-zero is represented by ``float("-inf")``,
which propagates correctly through :func:`log_add`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

LOG_ZERO = float("-inf")


class FileFormatError(ValueError):
    """Raised by text-format parsers; carries the offending path and line."""

    def __init__(self, path: str, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


def log_add(a: float, b: float) -> float:
    """Numerically stable ``log(exp(a) + exp(b))``.

    Commutative; ``-inf`` acts as the identity.  Both arguments must be
    finite or ``-inf``.
    """
    if a == LOG_ZERO:
        return b
    if b == LOG_ZERO:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


@dataclass(frozen=True)
class Vocabulary:
    """Closed token inventory with reserved blank and shared sos/eos indices.

    Token indices are dense ``0..len(tokens)-1``.  A single index serves as
    both start-of-sequence and end-of-sequence, so an emitted eos counts as
    a repetition of the initial token during boundary detection.  The blank
    index is reserved for CTC and is never a valid label extension.
    """

    tokens: Tuple[str, ...]
    blank_id: int
    sos_eos_id: int

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least blank and sos/eos tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token strings must be unique")
        for name, idx in (("blank_id", self.blank_id), ("sos_eos_id", self.sos_eos_id)):
            if not 0 <= idx < len(self.tokens):
                raise ValueError(f"{name} {idx} out of range for {len(self.tokens)} tokens")
        if self.blank_id == self.sos_eos_id:
            raise ValueError("blank_id must differ from sos_eos_id")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise KeyError(f"unknown token {token!r}") from None

    def text(self, ids: Sequence[int], skip_markers: bool = True) -> str:
        """Render token ids as a space-joined string, dropping sos/eos by default."""
        out = []
        for i in ids:
            if skip_markers and i == self.sos_eos_id:
                continue
            out.append(self.tokens[i])
        return " ".join(out)

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        """Read a vocabulary file: one token per line, line order = index.

        Header directives ``#blank <idx>`` and ``#soseos <idx>`` assign the
        reserved indices; other ``#`` lines are comments.
        """
        tokens: List[str] = []
        blank_id: Optional[int] = None
        sos_eos_id: Optional[int] = None
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    if parts and parts[0] == "blank":
                        blank_id = _directive_int(path, line_no, parts)
                    elif parts and parts[0] == "soseos":
                        sos_eos_id = _directive_int(path, line_no, parts)
                    continue
                if len(line.split()) != 1:
                    raise FileFormatError(path, line_no, "token lines must hold a single token")
                tokens.append(line)
        if blank_id is None or sos_eos_id is None:
            raise FileFormatError(path, 0, "missing #blank or #soseos directive")
        try:
            return cls(tuple(tokens), blank_id, sos_eos_id)
        except ValueError as exc:
            raise FileFormatError(path, 0, str(exc)) from exc

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#blank {self.blank_id}\n#soseos {self.sos_eos_id}\n")
            for tok in self.tokens:
                fh.write(tok + "\n")


def _directive_int(path: str, line_no: int, parts: List[str]) -> int:
    if len(parts) != 2:
        raise FileFormatError(path, line_no, f"directive #{parts[0]} expects one integer")
    try:
        return int(parts[1])
    except ValueError:
        raise FileFormatError(path, line_no, f"bad integer in #{parts[0]} directive") from None


@dataclass(frozen=True)
class Hypothesis:
    """A token prefix with accumulated log scores and per-scorer resumable state.

    ``tokens`` always starts with the sos/eos id.  ``score_total`` is the
    weighted sum of ``score_components`` (raw, unweighted per-scorer
    accumulations) under the run's weighting.
    """

    tokens: Tuple[int, ...]
    score_total: float
    score_components: Dict[str, float] = field(default_factory=dict)
    scorer_states: Dict[str, Any] = field(default_factory=dict)

    @property
    def length(self) -> int:
        """Number of emitted tokens, excluding the leading sos."""
        return len(self.tokens) - 1


@dataclass(frozen=True)
class Beam:
    """Pruned hypothesis set at one output index."""

    hypotheses: Tuple[Hypothesis, ...]
    output_index: int

    def best(self) -> Hypothesis:
        return self.hypotheses[0]


def sort_hypotheses(hyps: Iterable[Hypothesis]) -> List[Hypothesis]:
    """Deterministic total order: score descending, then smaller token tuple."""
    return sorted(hyps, key=lambda h: (-h.score_total, h.tokens))


@dataclass(frozen=True)
class BlockLayout:
    """Block geometry in downsampled frames plus the downsampling factor.

    ``n_left``/``n_center``/``n_right`` count downsampled frames; centers of
    consecutive blocks tile the utterance with hop ``n_center``.
    ``frame_shift_ms`` is the shift of one pre-downsampling frame.
    """

    n_left: int
    n_center: int
    n_right: int
    downsample: int = 1
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        if self.n_center < 1:
            raise ValueError("n_center must be >= 1")
        if self.n_left < 0 or self.n_right < 0:
            raise ValueError("context sizes must be >= 0")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        if self.frame_shift_ms <= 0:
            raise ValueError("frame_shift_ms must be > 0")


@dataclass(frozen=True)
class EncodedBlock:
    """Encoder output for the center frames of one block.

    ``frame_start``/``frame_end`` give the half-open downsampled-frame range
    the center covers; consecutive blocks tile the utterance contiguously.
    """

    index: int
    vectors: np.ndarray
    frame_start: int
    frame_end: int
    is_last: bool = False

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("block index is 1-based")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.frame_end - self.frame_start:
            raise ValueError("vectors must be [n_center_effective x d_model]")
        if self.frame_end <= self.frame_start:
            raise ValueError("empty block center")


@dataclass(frozen=True)
class DecodeConfig:
    """Behavioral contract of one decoding run.

    ``i_max=None`` resolves to a generous per-utterance bound of the
    downsampled frame count plus two.  ``repetition_criterion=False``
    restricts boundary detection to eos alone.  ``bbd_score_source``
    selects whether reliability scores are computed from the attention
    component only or from the joint fused score.  ``strict_boundary``
    makes the boundary fire only on s < 0 instead of s <= 0.
    """

    beam_width: int = 5
    i_max: Optional[int] = None
    ctc_weight: float = 0.0
    lm_weight: float = 0.0
    conservative: bool = False
    repetition_criterion: bool = True
    bbd_score_source: str = "attention"
    strict_boundary: bool = False
    end_margin: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.i_max is not None and self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must be in [0, 1]")
        if self.lm_weight < 0.0:
            raise ValueError("lm_weight must be >= 0")
        if self.bbd_score_source not in ("attention", "joint"):
            raise ValueError("bbd_score_source must be 'attention' or 'joint'")

    def effective_i_max(self, n_frames: int) -> int:
        return self.i_max if self.i_max is not None else n_frames + 2


def combined_score(components: Mapping[str, float], config: DecodeConfig) -> float:
    """Hybrid weighting of per-scorer log scores.

    Returns ``(1 - ctc_weight) * att + ctc_weight * ctc + lm_weight * lm``.
    Missing optional entries contribute zero; zero-weight terms are skipped
    so a log-zero component under a zero weight cannot poison the sum.
    """
    if not 0.0 <= config.ctc_weight <= 1.0:
        raise ValueError("ctc_weight must be in [0, 1]")
    if "attention" not in components:
        raise ValueError("components must contain an attention score")
    total = 0.0
    w_att = 1.0 - config.ctc_weight
    if w_att != 0.0:
        total += w_att * components["attention"]
    if config.ctc_weight != 0.0 and "ctc" in components:
        total += config.ctc_weight * components["ctc"]
    if config.lm_weight != 0.0 and "lm" in components:
        total += config.lm_weight * components["lm"]
    return total
