"""Sequential language models for shallow fusion.

These scorers condition only on the token prefix, never on encoder blocks.
States are the prefix itself, so cloning and extending is trivial.
"""

from __future__ import annotations

import math
from typing import Dict, Sequence, Tuple

import numpy as np

from ..core import LOG_ZERO, EncodedBlock, Vocabulary
from .base import Scorer, check_prefix


class _PrefixState:
    __slots__ = ("tokens",)

    def __init__(self, tokens: Tuple[int, ...]):
        self.tokens = tuple(tokens)


class UniformLM(Scorer):
    """Assigns ``-log |V|`` to every token."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._dist = np.full(len(vocab), -math.log(len(vocab)))

    def initial_state(self, vocab: Vocabulary) -> _PrefixState:
        return _PrefixState((vocab.sos_eos_id,))

    def score_step(self, state, tokens, blocks: Sequence[EncodedBlock] = ()):
        check_prefix(state.tokens, tokens)
        return self._dist.copy(), state

    def select_state(self, handle, token: int):
        return _PrefixState(handle.tokens + (token,))


class BigramTableLM(Scorer):
    """Table-driven bigram LM: ``log p(next | last token)``.

    ``table`` maps a context token id to a full conditional distribution
    (array of probabilities over the vocabulary).  Contexts missing from the
    table fall back to uniform.
    """

    def __init__(self, vocab: Vocabulary, table: Dict[int, np.ndarray]):
        self.vocab = vocab
        self._log_table: Dict[int, np.ndarray] = {}
        for ctx, probs in table.items():
            probs = np.asarray(probs, dtype=np.float64)
            if probs.shape != (len(vocab),):
                raise ValueError(f"conditional for context {ctx} must cover the vocabulary")
            if abs(probs.sum() - 1.0) > 1e-6:
                raise ValueError(f"conditional for context {ctx} sums to {probs.sum():.8f}")
            with np.errstate(divide="ignore"):
                self._log_table[ctx] = np.log(probs)
        self._uniform = np.full(len(vocab), -math.log(len(vocab)))

    def initial_state(self, vocab: Vocabulary) -> _PrefixState:
        return _PrefixState((vocab.sos_eos_id,))

    def score_step(self, state, tokens, blocks: Sequence[EncodedBlock] = ()):
        check_prefix(state.tokens, tokens)
        dist = self._log_table.get(tokens[-1], self._uniform)
        return dist.copy(), state

    def select_state(self, handle, token: int):
        return _PrefixState(handle.tokens + (token,))
