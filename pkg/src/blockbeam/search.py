"""Beam-search engines.

Two entry points share one expansion core:

* :func:`batch_beam_search` runs ordinary label-synchronous beam search over
  the fully encoded utterance, collecting hypotheses that emit eos into the
  completed set until the ending criterion fires.

* :class:`DecodingSession` (and its one-shot wrapper
  :func:`blockwise_synchronous_beam_search`) decodes synchronously with the
  encoder: with the blocks available so far it keeps extending hypotheses
  until boundary detection finds an unreliable beam member, then rewinds one
  output step (two under conservative decoding), waits for the next block,
  and resumes from the retained beam.  After the last block, ordinary
  decoding finishes the utterance over the complete encoder output.

Every pruned beam is retained per output index, so rewinds restore exact
hypothesis and scorer-state snapshots without recomputation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bbd import BoundaryDecision, EvaluatedSet, ReliabilityReport, detect_boundary, reliability, repetition_score
from .core import (LOG_ZERO, Beam, DecodeConfig, EncodedBlock, Hypothesis, Vocabulary,
                   combined_score, sort_hypotheses)
from .scorers.base import Scorer, frame_count


class BeamCollapseError(RuntimeError):
    """Every candidate extension scored log-zero."""


@dataclass
class SearchTrace:
    """Chronological decoding log plus the retained per-step beams."""

    beams: Dict[int, Beam] = field(default_factory=dict)
    events: List[dict] = field(default_factory=list)
    index_boundaries: List[Tuple[int, int]] = field(default_factory=list)  # (b, I_b)
    redecoded_steps: int = 0
    completed: Tuple[Hypothesis, ...] = ()
    forced: bool = False

    @property
    def boundary_checks(self) -> List[dict]:
        return [e for e in self.events if e["type"] == "bbd_check"]

    def to_records(self) -> List[dict]:
        return list(self.events)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.events:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


@dataclass(frozen=True)
class DecodeResult:
    best: Hypothesis
    completed: Tuple[Hypothesis, ...]
    trace: SearchTrace
    forced: bool


@dataclass
class _ParentScores:
    """Step distributions of one expanded hypothesis, kept for boundary checks."""

    prefix: Tuple[int, ...]
    alpha_att: float
    alpha_joint: float
    dist_att: np.ndarray
    dist_joint: np.ndarray
    dists: Dict[str, np.ndarray]
    handles: Dict[str, object]
    components: Dict[str, float]


@dataclass
class _ChildMeta:
    parent: _ParentScores
    token: int


def _validate_scorers(scorers: Dict[str, Scorer], config: DecodeConfig) -> Dict[str, Scorer]:
    """Check the scorer set against the weighting and drop zero-weight scorers.

    A scorer under a zero weight takes no part in the run, so decoding with
    ``lm_weight=0`` is identical to decoding without the LM.
    """
    if "attention" not in scorers:
        raise ValueError("scorer set must contain an 'attention' scorer")
    if config.ctc_weight > 0.0 and "ctc" not in scorers:
        raise ValueError("ctc_weight > 0 requires a 'ctc' scorer")
    if config.lm_weight > 0.0 and "lm" not in scorers:
        raise ValueError("lm_weight > 0 requires an 'lm' scorer")
    active = {"attention": scorers["attention"]}
    if config.ctc_weight > 0.0:
        active["ctc"] = scorers["ctc"]
    if config.lm_weight > 0.0:
        active["lm"] = scorers["lm"]
    return active


def _fused_step(dists: Dict[str, np.ndarray], config: DecodeConfig) -> np.ndarray:
    joint = np.zeros_like(dists["attention"])
    w_att = 1.0 - config.ctc_weight
    if w_att != 0.0:
        joint = joint + w_att * dists["attention"]
    if config.ctc_weight != 0.0 and "ctc" in dists:
        joint = joint + config.ctc_weight * dists["ctc"]
    if config.lm_weight != 0.0 and "lm" in dists:
        joint = joint + config.lm_weight * dists["lm"]
    return joint


def _expand(beam: Beam, blocks: Sequence[EncodedBlock], scorers: Dict[str, Scorer],
            config: DecodeConfig) -> Tuple[Beam, List[_ChildMeta]]:
    if not beam.hypotheses:
        raise ValueError("cannot expand an empty beam")
    candidates: List[Tuple[float, Tuple[int, ...], _ParentScores, int]] = []
    for hyp in beam.hypotheses:
        dists: Dict[str, np.ndarray] = {}
        handles: Dict[str, object] = {}
        for name, scorer in scorers.items():
            dist, handle = scorer.score_step(hyp.scorer_states[name], hyp.tokens, blocks)
            dists[name] = dist
            handles[name] = handle
        joint = _fused_step(dists, config)
        parent = _ParentScores(
            prefix=hyp.tokens,
            alpha_att=hyp.score_components.get("attention", 0.0),
            alpha_joint=hyp.score_total,
            dist_att=dists["attention"],
            dist_joint=joint,
            dists=dists,
            handles=handles,
            components=hyp.score_components)
        for tok in range(joint.shape[0]):
            step = joint[tok]
            if step == LOG_ZERO:
                continue
            candidates.append((hyp.score_total + step, hyp.tokens + (tok,), parent, tok))
    if not candidates:
        raise BeamCollapseError("beam collapse")
    candidates.sort(key=lambda c: (-c[0], c[1]))
    kept = candidates[: config.beam_width]
    children: List[Hypothesis] = []
    metas: List[_ChildMeta] = []
    for total, tokens, parent, tok in kept:
        components = {name: parent.components.get(name, 0.0) + float(parent.dists[name][tok])
                      for name in scorers}
        states = {name: scorers[name].select_state(parent.handles[name], tok)
                  for name in scorers}
        children.append(Hypothesis(tokens, float(total), components, states))
        metas.append(_ChildMeta(parent=parent, token=tok))
    return Beam(tuple(children), beam.output_index + 1), metas


def search_step(beam: Beam, blocks: Sequence[EncodedBlock], scorers: Dict[str, Scorer],
                config: DecodeConfig) -> Beam:
    """Expand every hypothesis over all tokens and keep the top-K children."""
    active = _validate_scorers(scorers, config)
    new_beam, _ = _expand(beam, blocks, active, config)
    return new_beam


class _Engine:
    """Shared state of one decoding run: retained beams, completed set, trace."""

    def __init__(self, scorers: Dict[str, Scorer], config: DecodeConfig, vocab: Vocabulary):
        self.scorers = _validate_scorers(scorers, config)
        self.config = config
        self.vocab = vocab
        self.trace = SearchTrace()
        init = Hypothesis(
            tokens=(vocab.sos_eos_id,),
            score_total=0.0,
            score_components={name: 0.0 for name in self.scorers},
            scorer_states={name: sc.initial_state(vocab) for name, sc in self.scorers.items()})
        self.trace.beams[0] = Beam((init,), 0)
        self.omega_hat: List[Hypothesis] = []
        self.omega_r = EvaluatedSet()
        self._max_i_seen = 0
        self._last_active = 0

    @property
    def beams(self) -> Dict[int, Beam]:
        return self.trace.beams

    def step(self, i: int, b: int, blocks: Sequence[EncodedBlock]) -> Tuple[Beam, List[_ChildMeta]]:
        new_beam, metas = _expand(self.beams[i - 1], blocks, self.scorers, self.config)
        if i <= self._max_i_seen:
            self.trace.redecoded_steps += 1
        else:
            self._max_i_seen = i
        self.beams[i] = new_beam
        self._last_active = i
        self.trace.events.append({
            "type": "step", "i": i, "b": b,
            "beam": [{"tokens": list(h.tokens), "score": h.score_total}
                     for h in new_beam.hypotheses]})
        return new_beam, metas

    def bbd_check(self, i: int, b: int, beam: Beam, metas: List[_ChildMeta]) -> BoundaryDecision:
        joint_mode = self.config.bbd_score_source == "joint"
        reports = []
        for idx, (hyp, meta) in enumerate(zip(beam.hypotheses, metas)):
            if joint_mode:
                dist, a_prev, a_new = meta.parent.dist_joint, meta.parent.alpha_joint, hyp.score_total
            else:
                dist, a_prev = meta.parent.dist_att, meta.parent.alpha_att
                a_new = hyp.score_components["attention"]
            r, j_star = repetition_score(meta.parent.prefix, dist, a_prev, self.omega_r,
                                         self.config.repetition_criterion)
            reports.append(ReliabilityReport(idx, meta.parent.prefix, r, reliability(a_new, r), j_star))
        decision = detect_boundary(beam, reports, self.omega_r, self.config.strict_boundary)
        self.trace.events.append({
            "type": "bbd_check", "i": i, "b": b,
            "decision": "boundary" if decision.boundary else "continue",
            "hyps": [{"s": rep.s, "r": rep.r, "j_star": rep.j_star} for rep in reports]})
        return decision

    def ending_criterion(self, beam: Beam) -> bool:
        if not self.omega_hat or not beam.hypotheses:
            return False
        best_done = max(h.score_total for h in self.omega_hat)
        return best_done >= beam.hypotheses[0].score_total + self.config.end_margin

    def final_phase(self, start_i: int, blocks: Sequence[EncodedBlock], b: int) -> None:
        """Ordinary decoding over all available blocks until the ending criterion."""
        i = start_i
        i_cap = self.config.effective_i_max(frame_count(blocks))
        eos = self.vocab.sos_eos_id
        while i <= i_cap:
            prev = self.beams[i - 1]
            if not prev.hypotheses or self.ending_criterion(prev):
                break
            new_beam, _ = self.step(i, b, blocks)
            actives = tuple(h for h in new_beam.hypotheses if h.tokens[-1] != eos)
            done = [h for h in new_beam.hypotheses if h.tokens[-1] == eos]
            if done:
                self.omega_hat.extend(done)
            self.beams[i] = Beam(actives, i)
            if actives:
                self._last_active = i
            else:
                self._last_active = i - 1
            i += 1

    def result(self) -> DecodeResult:
        completed = tuple(sort_hypotheses(self.omega_hat))
        if completed:
            best, forced = completed[0], False
        else:
            best, forced = self.best_active(), True
        self.trace.completed = completed
        self.trace.forced = forced
        self.trace.events.append({
            "type": "final", "best_tokens": list(best.tokens), "best_score": best.score_total,
            "forced": forced, "completed": len(completed)})
        return DecodeResult(best=best, completed=completed, trace=self.trace, forced=forced)

    def best_active(self) -> Hypothesis:
        return self.beams[self._last_active].best()


class DecodingSession:
    """Streaming driver: push encoder blocks, finalize, query the partial best.

    ``push_block`` performs every decoding step possible before the next
    boundary; if a pushed block is marked last, decoding runs to completion
    eagerly.  ``finalize`` declares the stream complete (for streams whose
    last block was not marked), runs the ordinary decoding phase, and
    returns the result.
    """

    def __init__(self, scorers: Dict[str, Scorer], config: DecodeConfig, vocab: Vocabulary):
        self._engine = _Engine(scorers, config, vocab)
        self.config = config
        self._blocks: List[EncodedBlock] = []
        self._b = 1
        self._i = 1
        self._i_prev = 0  # index boundary of the previous block
        self._mode = "blockwise"
        self._finalized = False
        self._result: Optional[DecodeResult] = None

    @property
    def trace(self) -> SearchTrace:
        return self._engine.trace

    def push_block(self, block: EncodedBlock) -> None:
        if self._finalized or self._result is not None:
            raise RuntimeError("push after finalize rejected")
        if block.vectors.shape[0] < 1:
            raise ValueError("empty encoded block")
        if block.index != len(self._blocks) + 1:
            raise ValueError(f"blocks must arrive in order; got index {block.index}, "
                             f"expected {len(self._blocks) + 1}")
        self._blocks.append(block)
        self._advance()

    def finalize(self) -> DecodeResult:
        if self._result is not None:
            return self._result
        if not self._blocks:
            raise ValueError("block stream ended before any block")
        self._finalized = True
        self._advance()
        return self._result

    def partial_best(self) -> Hypothesis:
        """Best hypothesis decodable so far (completed ones included)."""
        if self._result is not None:
            return self._result.best
        pool = list(self._engine.omega_hat)
        pool.extend(self._engine.beams[self._i - 1].hypotheses)
        if not pool:
            pool = list(self._engine.beams[0].hypotheses)
        return sort_hypotheses(pool)[0]

    # -- driving ---------------------------------------------------------------

    def _advance(self) -> None:
        while self._result is None:
            n = len(self._blocks)
            if self._mode == "blockwise":
                if self._b > n:
                    if not self._finalized:
                        return
                    self._b = n
                    self._mode = "final"
                    continue
                if self._blocks[self._b - 1].is_last or (self._finalized and self._b == n):
                    self._mode = "final"
                    continue
                self._blockwise_round()
            else:
                blocks = tuple(self._blocks)
                self._engine.final_phase(self._i, blocks, b=len(blocks))
                self._result = self._engine.result()

    def _blockwise_round(self) -> None:
        """Decode with the first b blocks until a boundary or the step cap."""
        blocks = tuple(self._blocks[: self._b])
        i_cap = self.config.effective_i_max(frame_count(blocks))
        while self._i <= i_cap:
            beam, metas = self._engine.step(self._i, self._b, blocks)
            decision = self._engine.bbd_check(self._i, self._b, beam, metas)
            if decision.boundary:
                i = self._i
                if self.config.conservative and i >= 2:
                    boundary = i - 2
                else:
                    boundary = i - 1
                boundary = max(boundary, self._i_prev)
                self._set_boundary(boundary)
                return
            self._i += 1
        # step cap reached without a boundary: nothing more is decodable with
        # this many blocks, so hand the index boundary over and move on
        self._set_boundary(max(min(self._i - 1, i_cap), self._i_prev))

    def _set_boundary(self, boundary: int) -> None:
        self._engine.trace.index_boundaries.append((self._b, boundary))
        self._engine.trace.events.append({"type": "index_boundary", "b": self._b, "i_b": boundary})
        self._i_prev = boundary
        self._b += 1
        self._i = boundary + 1


def batch_beam_search(blocks: Sequence[EncodedBlock], scorers: Dict[str, Scorer],
                      config: DecodeConfig, vocab: Vocabulary) -> DecodeResult:
    """Label-synchronous beam search over the complete encoder output."""
    blocks = tuple(blocks)
    if not blocks:
        raise ValueError("no encoded blocks")
    engine = _Engine(scorers, config, vocab)
    engine.final_phase(1, blocks, b=len(blocks))
    return engine.result()


def blockwise_synchronous_beam_search(blocks: Sequence[EncodedBlock],
                                      scorers: Dict[str, Scorer],
                                      config: DecodeConfig,
                                      vocab: Vocabulary) -> DecodeResult:
    """One-shot blockwise synchronous decoding of an ordered block stream."""
    blocks = list(blocks)
    if not blocks:
        raise ValueError("block stream ends before any block")
    if not blocks[-1].is_last:
        blocks[-1] = replace(blocks[-1], is_last=True)
    session = DecodingSession(scorers, config, vocab)
    for block in blocks:
        session.push_block(block)
    return session.finalize()


def score_sequence(tokens: Sequence[int], scorers: Dict[str, Scorer], config: DecodeConfig,
                   vocab: Vocabulary, blocks: Sequence[EncodedBlock]
                   ) -> Tuple[float, Dict[str, float]]:
    """From-scratch score of a full token sequence (leading sos included)."""
    scorers = _validate_scorers(scorers, config)
    states = {name: sc.initial_state(vocab) for name, sc in scorers.items()}
    components = {name: 0.0 for name in scorers}
    total = 0.0
    prefix = (tokens[0],)
    for tok in tokens[1:]:
        dists = {}
        for name, scorer in scorers.items():
            dist, handle = scorer.score_step(states[name], prefix, blocks)
            dists[name] = dist
            states[name] = scorer.select_state(handle, tok)
        step = _fused_step(dists, config)
        total += float(step[tok])
        for name in scorers:
            components[name] += float(dists[name][tok])
        prefix = prefix + (tok,)
    return total, components
