"""Uniform incremental scorer contract.

A scorer maps ``(state, prefix, blocks)`` to a log-score vector over the
vocabulary plus a handle from which the state for any chosen extension can
be derived lazily.  States are pure functions of ``(prefix tokens, blocks
seen)``: any internal caching must be unobservable, so a from-scratch
recomputation yields the same scores.
"""

from __future__ import annotations

from typing import Any, Sequence, Tuple

import numpy as np

from ..core import EncodedBlock, Vocabulary


class ScorerError(RuntimeError):
    pass


class NonMonotoneBlockStream(ScorerError):
    """The block list shrank relative to what a state has already consumed."""


class Scorer:
    """Base class; subclasses implement the three-method contract."""

    def initial_state(self, vocab: Vocabulary) -> Any:
        raise NotImplementedError

    def score_step(self, state: Any, tokens: Tuple[int, ...],
                   blocks: Sequence[EncodedBlock]) -> Tuple[np.ndarray, Any]:
        """Score all one-token extensions of ``tokens`` given blocks ``1..b``.

        Returns ``(log-score vector over the vocabulary, handle)``; pass the
        handle to :meth:`select_state` to obtain the state of a chosen child.
        """
        raise NotImplementedError

    def select_state(self, handle: Any, token: int) -> Any:
        raise NotImplementedError


def check_prefix(state_tokens: Tuple[int, ...], tokens: Tuple[int, ...]) -> None:
    if tuple(state_tokens) != tuple(tokens):
        raise ScorerError(f"state prefix {state_tokens} does not match {tokens}")


def block_vectors(blocks: Sequence[EncodedBlock]) -> np.ndarray:
    """Concatenate the center frames of the available blocks."""
    if not blocks:
        raise ScorerError("no encoded blocks available")
    return np.concatenate([b.vectors for b in blocks], axis=0)


def frame_count(blocks: Sequence[EncodedBlock]) -> int:
    return blocks[-1].frame_end if blocks else 0
