"""Incremental CTC prefix scoring.

For a label prefix ``g`` and extension ``c``, two path-probability vectors
are tracked per frame ``t``: ``gn[t]`` sums alignments that realize exactly
``g·c`` and end with a non-blank emission, ``gb[t]`` those ending with a
blank.  With ``phi_t = gb(g)[t-1] (+ gn(g)[t-1] when last(g) != c)``::

    gn(g·c)[t] = logadd(gn(g·c)[t-1], phi_t) + log p(c | x_t)
    gb(g·c)[t] = logadd(gb(g·c)[t-1], gn(g·c)[t-1]) + log p(blank | x_t)

initialized with ``gb(empty)[0] = 0`` and everything else log-zero.  The
prefix score ``psi(g·c)`` accumulates ``phi_t + log p(c | x_t)`` over
frames, i.e. the probability that the labeling *begins with* ``g·c``; an
eos extension instead scores the probability that the labeling is exactly
``g``.  The recursion is frame-wise, so scores resume exactly when new
encoder blocks append frames: only the new columns are ever computed, and
every state memoizes its columns (atomic swaps of a pure function's value,
safe to share across retained beam snapshots).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..core import LOG_ZERO, EncodedBlock, FileFormatError, Vocabulary
from .base import NonMonotoneBlockStream, Scorer, ScorerError, check_prefix, block_vectors, frame_count

_NEG_INF = np.float64(LOG_ZERO)


@dataclass
class _CandidateColumns:
    """Per-candidate recursion columns for all extensions of one prefix."""

    frames: int
    gn: np.ndarray   # [frames + 1, W]
    gb: np.ndarray
    psi: np.ndarray  # [W]


class CtcState:
    """Resumable per-hypothesis recursion state.

    ``frames`` counts the columns folded so far; ``psi`` is the log prefix
    probability fixed when the hypothesis was created (the accumulated score
    component).  ``parent`` links to the prefix-minus-one state so columns
    can be extended when new frames arrive after this state was built.
    """

    __slots__ = ("tokens", "parent", "frames", "gn", "gb", "psi", "terminal", "cand")

    def __init__(self, tokens: Tuple[int, ...], parent: Optional["CtcState"],
                 frames: int, gn: Optional[np.ndarray], gb: Optional[np.ndarray],
                 psi: float, terminal: bool = False):
        self.tokens = tuple(tokens)
        self.parent = parent
        self.frames = frames
        self.gn = gn
        self.gb = gb
        self.psi = psi
        self.terminal = terminal
        self.cand: Optional[_CandidateColumns] = None


def _root_state(vocab: Vocabulary) -> CtcState:
    return CtcState((vocab.sos_eos_id,), None, 0,
                    np.array([LOG_ZERO]), np.array([0.0]), 0.0)


class CtcPrefixScorer(Scorer):
    """Scores label extensions by CTC prefix probability deltas.

    The step vector holds ``psi(g·c) - psi(g)`` per candidate; the blank
    entry is log-zero (blank is never a label) and the eos entry scores
    completing the hypothesis.  Accumulated over a search path the component
    telescopes to the log prefix probability, each step evaluated with the
    frames available when it was decoded.

    Arguments
    ---------
    vocab : Vocabulary
    projection : (weight, bias) or None
        Linear map from encoder vectors to posterior logits over the
        vocabulary (softmax includes the blank column).
    log_posteriors : np.ndarray or None
        Fixed per-frame log posteriors ``[T, len(vocab)]``, bypassing the
        projection (file-driven runs).
    """

    def __init__(self, vocab: Vocabulary,
                 projection: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                 log_posteriors: Optional[np.ndarray] = None):
        if (projection is None) == (log_posteriors is None):
            raise ValueError("provide exactly one of projection or log_posteriors")
        self.vocab = vocab
        self.projection = projection
        self.log_posteriors = log_posteriors
        self.columns_computed = 0  # diagnostics: recursion column-slots evaluated

    def initial_state(self, vocab: Vocabulary) -> CtcState:
        return _root_state(vocab)

    def _posteriors(self, blocks: Sequence[EncodedBlock]) -> np.ndarray:
        t_b = frame_count(blocks)
        if self.log_posteriors is not None:
            if self.log_posteriors.shape[0] < t_b:
                raise ScorerError(f"posterior matrix has {self.log_posteriors.shape[0]} "
                                  f"frames, blocks cover {t_b}")
            return self.log_posteriors[:t_b]
        w, b = self.projection
        h = block_vectors(blocks)
        if h.shape[0] != t_b:
            raise ScorerError("block frame ranges do not match their vectors")
        logits = h @ w + b
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def score_step(self, state: CtcState, tokens: Tuple[int, ...],
                   blocks: Sequence[EncodedBlock]) -> Tuple[np.ndarray, CtcState]:
        check_prefix(state.tokens, tokens)
        t_b = frame_count(blocks)
        if t_b < state.frames:
            raise NonMonotoneBlockStream("non-monotone block stream")
        width = len(self.vocab)
        if state.terminal:
            return np.full(width, LOG_ZERO), state
        x = self._posteriors(blocks)
        self._ensure_frames(state, x, t_b)
        cand = self._extend_candidates(state, x, t_b)
        if state.psi == LOG_ZERO:
            # impossible prefix: every extension stays impossible
            return np.full(width, LOG_ZERO), state
        delta = cand.psi - state.psi
        delta[self.vocab.blank_id] = LOG_ZERO
        delta[self.vocab.sos_eos_id] = complete_score(state) - state.psi
        return delta, state

    def select_state(self, handle: CtcState, token: int) -> CtcState:
        state = handle
        if state.terminal:
            raise ScorerError("cannot extend a completed hypothesis")
        if token == self.vocab.blank_id:
            raise ScorerError("blank extension rejected")
        cand = state.cand
        if cand is None:
            raise ScorerError("select_state before score_step")
        if token == self.vocab.sos_eos_id:
            return CtcState(state.tokens + (token,), state, cand.frames, None, None,
                            complete_score(state), terminal=True)
        t = cand.frames
        return CtcState(state.tokens + (token,), state, t,
                        cand.gn[: t + 1, token].copy(), cand.gb[: t + 1, token].copy(),
                        float(cand.psi[token]))

    # -- column machinery ------------------------------------------------------

    def _ensure_frames(self, state: CtcState, x: np.ndarray, t_b: int) -> None:
        """Extend a state's own gamma columns to frame ``t_b``."""
        if state.terminal or state.frames >= t_b:
            return
        old = state.frames
        gn = np.concatenate([state.gn, np.full(t_b - old, LOG_ZERO)])
        gb = np.concatenate([state.gb, np.full(t_b - old, LOG_ZERO)])
        if state.parent is None:
            blank = self.vocab.blank_id
            for t in range(old + 1, t_b + 1):
                gb[t] = gb[t - 1] + x[t - 1, blank]
        else:
            parent = state.parent
            self._ensure_frames(parent, x, t_b)
            c = state.tokens[-1]
            parent_last = state.tokens[-2] if len(state.tokens) >= 3 else None
            blank = self.vocab.blank_id
            pgn, pgb = parent.gn, parent.gb
            for t in range(old + 1, t_b + 1):
                if parent_last == c:
                    phi = pgb[t - 1]
                else:
                    phi = np.logaddexp(pgb[t - 1], pgn[t - 1])
                gn[t] = np.logaddexp(gn[t - 1], phi) + x[t - 1, c]
                gb[t] = np.logaddexp(gb[t - 1], gn[t - 1]) + x[t - 1, blank]
        self.columns_computed += t_b - old
        state.gn, state.gb, state.frames = gn, gb, t_b

    def _extend_candidates(self, state: CtcState, x: np.ndarray, t_b: int) -> _CandidateColumns:
        """Extend (or build) the all-candidate columns of a prefix to ``t_b``."""
        width = len(self.vocab)
        cand = state.cand
        if cand is None:
            cand = _CandidateColumns(
                frames=0,
                gn=np.full((1, width), LOG_ZERO),
                gb=np.full((1, width), LOG_ZERO),
                psi=np.full(width, LOG_ZERO))
        if cand.frames >= t_b:
            return cand
        old = cand.frames
        gn = np.vstack([cand.gn, np.full((t_b - old, width), LOG_ZERO)])
        gb = np.vstack([cand.gb, np.full((t_b - old, width), LOG_ZERO)])
        psi = cand.psi.copy()
        last = state.tokens[-1] if len(state.tokens) >= 2 else None
        blank = self.vocab.blank_id
        sgn, sgb = state.gn, state.gb
        for t in range(old + 1, t_b + 1):
            phi = np.full(width, np.logaddexp(sgb[t - 1], sgn[t - 1]))
            if last is not None:
                phi[last] = sgb[t - 1]
            gn[t] = np.logaddexp(gn[t - 1], phi) + x[t - 1]
            gb[t] = np.logaddexp(gb[t - 1], gn[t - 1]) + x[t - 1, blank]
            psi = np.logaddexp(psi, phi + x[t - 1])
        self.columns_computed += (t_b - old) * width
        new_cand = _CandidateColumns(frames=t_b, gn=gn, gb=gb, psi=psi)
        state.cand = new_cand
        return new_cand


def complete_score(state: CtcState) -> float:
    """Log probability that the labeling is exactly the state's prefix."""
    if state.terminal:
        return state.psi
    return float(np.logaddexp(state.gn[state.frames], state.gb[state.frames]))


def prefix_score(state: CtcState) -> float:
    """Log probability that the labeling begins with the state's prefix."""
    return state.psi


def ctc_prefix_score(state: CtcState, prefix: Tuple[int, ...], extension: int,
                     frames: np.ndarray, vocab: Vocabulary) -> Tuple[float, CtcState]:
    """Score one extension against posterior rows covering frames ``1..T_b``.

    ``frames`` holds probability-domain posteriors ``[T_b, len(vocab)]`` that
    extend (never rewrite) the frames already folded into ``state``; each row
    must sum to one within 1e-4.  Returns the absolute log prefix score of
    ``prefix + (extension,)`` and the extension's resumable state.
    """
    check_prefix(state.tokens, prefix)
    if extension == vocab.blank_id:
        raise ValueError("blank extension rejected")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != len(vocab):
        raise ValueError(f"posteriors must be [T, {len(vocab)}]")
    sums = frames.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-4):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"posterior row {bad} sums to {sums[bad]:.6f}, not 1")
    if frames.shape[0] < state.frames:
        raise NonMonotoneBlockStream("posterior frames shrank versus state")
    with np.errstate(divide="ignore"):
        log_post = np.log(frames)
    scorer = CtcPrefixScorer(vocab, log_posteriors=log_post)
    t_b = frames.shape[0]
    scorer._ensure_frames(state, log_post, t_b)
    cand = scorer._extend_candidates(state, log_post, t_b)
    if extension == vocab.sos_eos_id:
        return complete_score(state), scorer.select_state(state, extension)
    return float(cand.psi[extension]), scorer.select_state(state, extension)


def load_posteriors(path: str, vocab: Vocabulary) -> np.ndarray:
    """Read a posterior file: header ``T W`` then T rows of W probabilities.

    ``W`` must equal the full token count (blank column included).  Returns
    log-domain posteriors.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FileFormatError(path, 1, "header must be 'T W'")
        try:
            t, w = int(header[0]), int(header[1])
        except ValueError:
            raise FileFormatError(path, 1, "malformed header numbers") from None
        if w != len(vocab):
            raise FileFormatError(path, 1, f"width {w} != vocabulary size {len(vocab)}")
        rows = []
        for line_no, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            vals = raw.split()
            if len(vals) != w:
                raise FileFormatError(path, line_no, f"expected {w} values, got {len(vals)}")
            try:
                row = [float(v) for v in vals]
            except ValueError:
                raise FileFormatError(path, line_no, "bad float value") from None
            if abs(sum(row) - 1.0) > 1e-4:
                raise FileFormatError(path, line_no, f"row sums to {sum(row):.6f}, not 1")
            rows.append(row)
        if len(rows) != t:
            raise FileFormatError(path, line_no if rows else 1,
                                  f"expected {t} rows, got {len(rows)}")
    with np.errstate(divide="ignore"):
        return np.log(np.array(rows, dtype=np.float64))
