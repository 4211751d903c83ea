"""Measurement harness: error rates, latency simulation, reports.

Streaming runs are timed on a simulated arrival timeline: block ``b``'s
input frames become available once its center plus right context has been
spoken (capped at the utterance end, where lookahead is truncated), and the
measured encode and decode work for that block is laid onto the timeline
after its arrival.  Response time is the span between the end of the audio
and the completion of decoding; the real-time factor divides total processor
time by the audio duration.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import DecodeConfig, FileFormatError, Vocabulary
from .encoder import BlockLayout, ContextualBlockEncoder, FeatureSequence, downsampled_length, tile_centers
from .scorers.base import Scorer
from .search import DecodeResult, DecodingSession, batch_beam_search


# ---------------------------------------------------------------------------
# edit distance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EditStats:
    distance: int
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int
    hyp_len: int

    @property
    def ref_empty(self) -> bool:
        return self.ref_len == 0

    @property
    def error_rate(self) -> float:
        if self.ref_len > 0:
            return self.distance / self.ref_len
        return 1.0 if self.hyp_len > 0 else 0.0


def edit_distance(ref: Sequence, hyp: Sequence) -> EditStats:
    """Minimal unit-cost edit distance with a substitution/insertion/deletion split.

    With an empty reference every hypothesis token counts as an insertion
    and the rate is reported against the hypothesis length (flagged via
    ``ref_empty``).
    """
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i, j] == dist[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(int(dist[n, m]), subs, ins, dels, n, m)


# ---------------------------------------------------------------------------
# utterance results
# ---------------------------------------------------------------------------

RESULT_SCHEMA = "blockbeam.result.v1"


@dataclass
class UtteranceResult:
    """Everything measured about one decoded utterance."""

    utt_id: str
    mode: str
    tokens: List[int]
    text: str
    score_total: float
    score_components: Dict[str, float]
    forced: bool
    audio_seconds: float
    cpu_seconds: float
    rtf: float
    response_seconds: float
    block_seconds: List[float]
    boundary_summary: Dict[str, object]
    ref: Optional[List[str]] = None
    edit: Optional[EditStats] = None

    def to_record(self) -> dict:
        rec = {
            "schema": RESULT_SCHEMA,
            "id": self.utt_id,
            "mode": self.mode,
            "tokens": list(self.tokens),
            "text": self.text,
            "score_total": self.score_total,
            "score_components": self.score_components,
            "forced": self.forced,
            "audio_seconds": self.audio_seconds,
            "cpu_seconds": self.cpu_seconds,
            "rtf": self.rtf,
            "response_seconds": self.response_seconds,
            "block_seconds": list(self.block_seconds),
            "boundary_summary": self.boundary_summary,
            "ref": self.ref,
            "edit": None,
        }
        if self.edit is not None:
            rec["edit"] = {"distance": self.edit.distance, "sub": self.edit.substitutions,
                           "ins": self.edit.insertions, "del": self.edit.deletions,
                           "ref_len": self.edit.ref_len, "hyp_len": self.edit.hyp_len}
        return rec

    def to_line(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))


def reemit_record_line(line: str) -> str:
    """Canonical re-emission of a parsed record line (round-trip identical)."""
    return json.dumps(json.loads(line), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# latency measurement
# ---------------------------------------------------------------------------

class ClockError(RuntimeError):
    pass


class _Stopwatch:
    """Wraps a clock source and rejects non-monotone readings."""

    def __init__(self, clock: Callable[[], float]):
        self._clock = clock
        self._last = clock()

    def lap(self) -> float:
        now = self._clock()
        delta = now - self._last
        if delta < 0:
            raise ClockError("non-monotonic clock; aborting measurement")
        self._last = now
        return delta


def block_arrival_seconds(seq: FeatureSequence, layout: BlockLayout) -> List[float]:
    """Simulated availability time of each block's input, capped at audio end."""
    t_raw = seq.frames.shape[0]
    n = downsampled_length(t_raw, layout.downsample)
    arrivals = []
    for _, ce in tile_centers(n, layout):
        need_rows = min(ce + layout.n_right, n)
        need_raw = min(need_rows * layout.downsample, t_raw)
        arrivals.append(need_raw * layout.frame_shift_ms / 1000.0)
    return arrivals


def measure_run(seq: FeatureSequence, encoder: ContextualBlockEncoder,
                scorers: Dict[str, Scorer], config: DecodeConfig, vocab: Vocabulary,
                mode: str = "streaming", utt_id: str = "utt",
                ref: Optional[List[str]] = None,
                wall_clock: Optional[Callable[[], float]] = None,
                cpu_clock: Optional[Callable[[], float]] = None
                ) -> Tuple[UtteranceResult, DecodeResult]:
    """Decode one utterance and measure response time and real-time factor."""
    if mode not in ("streaming", "batch"):
        raise ValueError("mode must be 'streaming' or 'batch'")
    wall = _Stopwatch(wall_clock or time.perf_counter)
    cpu = _Stopwatch(cpu_clock or time.process_time)
    audio_end = seq.duration_seconds
    block_seconds: List[float] = []
    cpu_total = 0.0

    if mode == "streaming":
        arrivals = block_arrival_seconds(seq, encoder.layout)
        session = DecodingSession(scorers, config, vocab)
        timeline = 0.0
        wall.lap()
        cpu.lap()
        for arrive, block in zip(arrivals, encoder.encode_stream(seq)):
            session.push_block(block)
            work = wall.lap()
            cpu_total += cpu.lap()
            block_seconds.append(work)
            timeline = max(timeline, arrive) + work
        result = session.finalize()
        finish_work = wall.lap()
        cpu_total += cpu.lap()
        timeline = max(timeline, audio_end) + finish_work
        response = timeline - audio_end
    else:
        wall.lap()
        cpu.lap()
        blocks = encoder.encode_utterance(seq)
        result = batch_beam_search(blocks, scorers, config, vocab)
        response = wall.lap()
        cpu_total += cpu.lap()
        block_seconds = [response]

    trace = result.trace
    boundary_summary = {
        "checks": len(trace.boundary_checks),
        "boundaries": len(trace.index_boundaries),
        "index_boundaries": [[b, ib] for b, ib in trace.index_boundaries],
        "redecoded_steps": trace.redecoded_steps,
    }
    text = vocab.text(result.best.tokens)
    edit = edit_distance(ref, text.split()) if ref is not None else None
    utt = UtteranceResult(
        utt_id=utt_id, mode=mode, tokens=list(result.best.tokens), text=text,
        score_total=result.best.score_total,
        score_components=dict(result.best.score_components),
        forced=result.forced,
        audio_seconds=audio_end, cpu_seconds=cpu_total,
        rtf=cpu_total / audio_end if audio_end > 0 else 0.0,
        response_seconds=response, block_seconds=block_seconds,
        boundary_summary=boundary_summary, ref=ref, edit=edit)
    return utt, result


# ---------------------------------------------------------------------------
# manifests, synthetic inputs, summaries
# ---------------------------------------------------------------------------

def read_manifest(path: str) -> List[Tuple[str, str, Optional[List[str]]]]:
    """Manifest lines: ``id <tab> feature-file [<tab> reference tokens]``."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise FileFormatError(path, line_no, "manifest line needs 'id<TAB>feature-file'")
            ref = parts[2].split() if len(parts) > 2 and parts[2].strip() else None
            entries.append((parts[0], parts[1], ref))
    return entries


def read_references(path: str) -> Dict[str, List[str]]:
    """Reference lines: ``id <tab> tokens``."""
    refs: Dict[str, List[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FileFormatError(path, line_no, "reference line needs 'id<TAB>tokens'")
            refs[parts[0]] = parts[1].split()
    return refs


def synthetic_features(seed: int, seconds: float, feat_dim: int = 8,
                       frame_shift_ms: float = 10.0) -> FeatureSequence:
    """Fixed-seed synthetic feature sequence for latency experiments."""
    if not 0 < seconds <= 60:
        raise ValueError("seconds must be in (0, 60]")
    rng = np.random.default_rng(seed)
    t = max(1, round(seconds * 1000.0 / frame_shift_ms))
    return FeatureSequence(rng.normal(0.0, 1.0, size=(t, feat_dim)), frame_shift_ms)


def summarize(results: Sequence[UtteranceResult]) -> Dict[str, float]:
    """Micro-averaged error rate plus latency aggregates."""
    return summarize_records([r.to_record() for r in results])


def summarize_records(records: Sequence[dict]) -> Dict[str, float]:
    """Recompute the summary from emitted per-utterance records."""
    scored = [r for r in records if r.get("edit")]
    total_dist = sum(r["edit"]["distance"] for r in scored)
    total_ref = sum(r["edit"]["ref_len"] for r in scored)
    return {
        "utterances": len(records),
        "scored": len(scored),
        "error_rate": total_dist / total_ref if total_ref else 0.0,
        "total_distance": total_dist,
        "total_ref_len": total_ref,
        "mean_rtf": float(np.mean([r["rtf"] for r in records])) if records else 0.0,
        "mean_response_seconds": (float(np.mean([r["response_seconds"] for r in records]))
                                  if records else 0.0),
    }


def format_summary_table(results: Sequence[UtteranceResult]) -> str:
    lines = [f"{'id':<16} {'mode':<10} {'rate':>6} {'rtf':>7} {'resp(s)':>8}  text"]
    for r in results:
        rate = f"{r.edit.error_rate:.3f}" if r.edit is not None else "-"
        lines.append(f"{r.utt_id:<16} {r.mode:<10} {rate:>6} {r.rtf:>7.3f} "
                     f"{r.response_seconds:>8.3f}  {r.text}")
    s = summarize(results)
    lines.append(f"summary: {s['utterances']} utt, error_rate={s['error_rate']:.4f} "
                 f"({s['total_distance']}/{s['total_ref_len']}), mean_rtf={s['mean_rtf']:.3f}, "
                 f"mean_response={s['mean_response_seconds']:.3f}s")
    return "\n".join(lines)
