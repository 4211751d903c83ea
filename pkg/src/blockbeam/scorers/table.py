"""Table-driven scorer for scripting exact decoding scenarios.

A script assigns a full log distribution to ``(prefix, block count)`` pairs.
File format, one entry per line::

    PREFIX | b | token:logp token:logp ...

``PREFIX`` is the space-joined token strings including the leading sos
marker and ``b`` is a block count or ``*`` (any).  Listed probabilities of
an entry must sum to one within 1e-6; unlisted tokens get log-zero.
Prefixes with no entry at all score log-zero everywhere, which prunes their
extensions and keeps scenario files finite.

Scenario files may carry header directives so a file is self-contained::

    #tokens <s> he his ...
    #blank <idx>
    #soseos <idx>
    #blocks <B>
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import LOG_ZERO, EncodedBlock, FileFormatError, Vocabulary
from .base import Scorer, check_prefix


class _PrefixState:
    __slots__ = ("tokens",)

    def __init__(self, tokens: Tuple[int, ...]):
        self.tokens = tuple(tokens)


class TableScorer(Scorer):
    """Looks up scripted distributions; exact block count wins over wildcard."""

    def __init__(self, vocab: Vocabulary,
                 rows: Dict[Tuple[Tuple[str, ...], Optional[int]], np.ndarray]):
        self.vocab = vocab
        self._rows = dict(rows)
        self._dead = np.full(len(vocab), LOG_ZERO)

    @classmethod
    def from_entries(cls, vocab: Vocabulary,
                     entries: Sequence[Tuple[Sequence[str], Optional[int], Dict[str, float]]]
                     ) -> "TableScorer":
        """Build from ``(prefix token strings, b or None, {token: prob})`` triples."""
        rows = {}
        for prefix, b, probs in entries:
            vec = np.full(len(vocab), LOG_ZERO)
            total = 0.0
            for tok, p in probs.items():
                vec[vocab.id_of(tok)] = math.log(p) if p > 0 else LOG_ZERO
                total += p
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"entry {' '.join(prefix)!r} sums to {total:.8f}, not 1")
            rows[(tuple(prefix), b)] = vec
        return cls(vocab, rows)

    def initial_state(self, vocab: Vocabulary) -> _PrefixState:
        return _PrefixState((vocab.sos_eos_id,))

    def score_step(self, state, tokens, blocks: Sequence[EncodedBlock]):
        check_prefix(state.tokens, tokens)
        key = tuple(self.vocab.tokens[t] for t in tokens)
        vec = self._rows.get((key, len(blocks)))
        if vec is None:
            vec = self._rows.get((key, None))
        if vec is None:
            vec = self._dead
        return vec.copy(), state

    def select_state(self, handle, token: int):
        return _PrefixState(handle.tokens + (token,))


@dataclass
class ScenarioScript:
    """A parsed scenario: scripted scorer plus the block count it plays over."""

    scorer: TableScorer
    vocab: Vocabulary
    n_blocks: int


def parse_table_file(path: str, vocab: Optional[Vocabulary] = None) -> ScenarioScript:
    """Parse a scenario table file, honoring header directives."""
    tokens: Optional[List[str]] = None
    blank_id: Optional[int] = None
    sos_eos_id: Optional[int] = None
    n_blocks = 1
    raw_rows: List[Tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if not parts:
                    continue
                if parts[0] == "tokens":
                    tokens = parts[1:]
                elif parts[0] == "blank":
                    blank_id = _to_int(path, line_no, parts[1])
                elif parts[0] == "soseos":
                    sos_eos_id = _to_int(path, line_no, parts[1])
                elif parts[0] == "blocks":
                    n_blocks = _to_int(path, line_no, parts[1])
                continue
            raw_rows.append((line_no, line))
    if vocab is None:
        if tokens is None or blank_id is None or sos_eos_id is None:
            raise FileFormatError(path, 0, "missing #tokens/#blank/#soseos directives "
                                           "and no vocabulary given")
        try:
            vocab = Vocabulary(tuple(tokens), blank_id, sos_eos_id)
        except ValueError as exc:
            raise FileFormatError(path, 0, str(exc)) from exc

    rows: Dict[Tuple[Tuple[str, ...], Optional[int]], np.ndarray] = {}
    for line_no, line in raw_rows:
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise FileFormatError(path, line_no, "entry must be 'PREFIX | b | token:logp ...'")
        prefix = tuple(parts[0].split())
        for tok in prefix:
            if tok not in vocab.tokens:
                raise FileFormatError(path, line_no, f"unknown prefix token {tok!r}")
        b: Optional[int]
        if parts[1] == "*":
            b = None
        else:
            b = _to_int(path, line_no, parts[1])
        vec = np.full(len(vocab), LOG_ZERO)
        for item in parts[2].split():
            tok, _, val = item.rpartition(":")
            if not tok:
                raise FileFormatError(path, line_no, f"malformed entry {item!r}")
            try:
                logp = float(val)
            except ValueError:
                raise FileFormatError(path, line_no, f"bad log probability in {item!r}") from None
            try:
                vec[vocab.id_of(tok)] = logp
            except KeyError:
                raise FileFormatError(path, line_no, f"unknown token {tok!r}") from None
        total = float(np.exp(vec[np.isfinite(vec)]).sum())
        if abs(total - 1.0) > 1e-6:
            raise FileFormatError(path, line_no, f"distribution sums to {total:.8f}, not 1")
        rows[(prefix, b)] = vec
    return ScenarioScript(TableScorer(vocab, rows), vocab, n_blocks)


def _to_int(path: str, line_no: int, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise FileFormatError(path, line_no, f"expected an integer, got {text!r}") from None


def format_table_file(vocab: Vocabulary, n_blocks: int,
                      entries: Sequence[Tuple[Sequence[str], Optional[int], Dict[str, float]]]
                      ) -> str:
    """Render a self-contained scenario file from probability-domain entries."""
    lines = [
        "#tokens " + " ".join(vocab.tokens),
        f"#blank {vocab.blank_id}",
        f"#soseos {vocab.sos_eos_id}",
        f"#blocks {n_blocks}",
    ]
    for prefix, b, probs in entries:
        b_txt = "*" if b is None else str(b)
        items = " ".join(f"{tok}:{math.log(p)!r}" for tok, p in probs.items())
        lines.append(f"{' '.join(prefix)} | {b_txt} | {items}")
    return "\n".join(lines) + "\n"
