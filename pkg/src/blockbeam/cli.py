"""Command-line front end.

Modes: ``decode`` (batch or streaming over a manifest), ``compare`` (run
both and diff them), ``scenario`` (table-scorer script runner), ``delay``
(theoretical delay calculator).  Utterance results are emitted as
line-delimited JSON records followed by a human-readable summary table.
"""

from __future__ import annotations

import argparse
import sys
from typing import Dict, List, Optional

import numpy as np

from . import harness
from .core import Beam, DecodeConfig, EncodedBlock, FileFormatError, Vocabulary
from .encoder import BlockLayout, ContextualBlockEncoder, EncoderWeights, FeatureSequence, theoretical_delay
from .scorers import (AttentionDecoderScorer, CtcPrefixScorer, DecoderWeights, UniformLM,
                      parse_table_file)
from .search import blockwise_synchronous_beam_search
from .tensorio import read_tensors


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _block_triple(value: str) -> tuple:
    parts = value.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected L,C,R")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError("block sizes must be integers") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockbeam")
    sub = parser.add_subparsers(dest="command", required=True)

    p_delay = sub.add_parser("delay", help="print the theoretical encoder delay in seconds")
    p_delay.add_argument("--block", type=_block_triple, required=True, metavar="L,C,R")
    p_delay.add_argument("--downsample", type=int, default=4)
    p_delay.add_argument("--frame-shift-ms", type=float, default=10.0)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="sectioned tensor weights file")
    common.add_argument("--vocab", required=True)
    common.add_argument("--input", required=True, help="manifest: id<TAB>features[<TAB>ref]")
    common.add_argument("--block", type=_block_triple, default=(16, 16, 8), metavar="L,C,R")
    common.add_argument("--downsample", type=int, default=4)
    common.add_argument("--beam", type=int, default=5)
    common.add_argument("--ctc-weight", type=float, default=0.0)
    common.add_argument("--lm-weight", type=float, default=0.0)
    common.add_argument("--conservative", type=_on_off, default=False, metavar="on|off")
    common.add_argument("--repetition", type=_on_off, default=True, metavar="on|off")
    common.add_argument("--strict-boundary", type=_on_off, default=False, metavar="on|off")
    common.add_argument("--bbd-source", choices=("attention", "joint"), default="attention")
    common.add_argument("--i-max", type=int, default=None)
    common.add_argument("--trace", default=None, help="write per-utterance trace files here")
    common.add_argument("--ref", default=None, help="reference file: id<TAB>tokens")

    p_decode = sub.add_parser("decode", parents=[common], help="decode a manifest")
    p_decode.add_argument("--mode", choices=("batch", "streaming"), default="streaming")

    sub.add_parser("compare", parents=[common],
                   help="decode in both modes and diff outputs and timing")

    p_scen = sub.add_parser("scenario", help="run a table-scorer script")
    p_scen.add_argument("table", help="scenario table file")
    p_scen.add_argument("--vocab", default=None)
    p_scen.add_argument("--beam", type=int, default=5)
    p_scen.add_argument("--blocks", type=int, default=None, help="override the script block count")
    p_scen.add_argument("--conservative", type=_on_off, default=False, metavar="on|off")
    p_scen.add_argument("--repetition", type=_on_off, default=True, metavar="on|off")
    p_scen.add_argument("--strict-boundary", type=_on_off, default=False, metavar="on|off")
    p_scen.add_argument("--i-max", type=int, default=32)
    p_scen.add_argument("--trace", default=None)
    return parser


def _config(args, bbd_source: str = "attention") -> DecodeConfig:
    return DecodeConfig(
        beam_width=args.beam,
        i_max=getattr(args, "i_max", None),
        ctc_weight=getattr(args, "ctc_weight", 0.0),
        lm_weight=getattr(args, "lm_weight", 0.0),
        conservative=args.conservative,
        repetition_criterion=args.repetition,
        bbd_score_source=getattr(args, "bbd_source", bbd_source),
        strict_boundary=args.strict_boundary)


def _load_run(args):
    vocab = Vocabulary.load(args.vocab)
    tensors = read_tensors(args.model)
    enc_weights = EncoderWeights.from_tensors(tensors)
    dec_weights = DecoderWeights.from_tensors(tensors)
    scorers: Dict[str, object] = {"attention": AttentionDecoderScorer(dec_weights, vocab)}
    if args.ctc_weight > 0.0:
        if "ctc.proj.weight" not in tensors:
            raise ValueError("ctc weight > 0 but the model has no ctc.proj tensors")
        scorers["ctc"] = CtcPrefixScorer(
            vocab, projection=(tensors["ctc.proj.weight"], tensors["ctc.proj.bias"]))
    if args.lm_weight > 0.0:
        scorers["lm"] = UniformLM(vocab)
    refs = harness.read_references(args.ref) if args.ref else {}
    entries = harness.read_manifest(args.input)
    return vocab, enc_weights, scorers, refs, entries


def _decode_entry(args, vocab, enc_weights, scorers, mode, utt_id, feat_path, ref):
    seq = FeatureSequence.load(feat_path)
    l, c, r = args.block
    layout = BlockLayout(l, c, r, args.downsample, seq.frame_shift_ms)
    encoder = ContextualBlockEncoder(enc_weights, layout)
    config = _config(args)
    utt, result = harness.measure_run(seq, encoder, scorers, config, vocab,
                                      mode=mode, utt_id=utt_id, ref=ref)
    if args.trace:
        result.trace.write(f"{args.trace}.{utt_id}.{mode}.jsonl")
    return utt, result


def cmd_delay(args) -> int:
    l, c, r = args.block
    layout = BlockLayout(l, c, r, args.downsample, args.frame_shift_ms)
    print(f"{theoretical_delay(layout):g}")
    return 0


def cmd_decode(args) -> int:
    vocab, enc_weights, scorers, refs, entries = _load_run(args)
    results = []
    for utt_id, feat_path, ref in entries:
        ref = refs.get(utt_id, ref)
        utt, _ = _decode_entry(args, vocab, enc_weights, scorers, args.mode,
                               utt_id, feat_path, ref)
        print(utt.to_line())
        results.append(utt)
    print(harness.format_summary_table(results))
    return 0


def cmd_compare(args) -> int:
    vocab, enc_weights, scorers, refs, entries = _load_run(args)
    total_diffs = 0
    rows = []
    for utt_id, feat_path, ref in entries:
        ref = refs.get(utt_id, ref)
        batch, _ = _decode_entry(args, vocab, enc_weights, scorers, "batch",
                                 utt_id, feat_path, ref)
        stream, _ = _decode_entry(args, vocab, enc_weights, scorers, "streaming",
                                  utt_id, feat_path, ref)
        print(batch.to_line())
        print(stream.to_line())
        diffs = harness.edit_distance(batch.tokens, stream.tokens).distance
        total_diffs += diffs
        rows.append((utt_id, diffs, batch.response_seconds, stream.response_seconds))
    print(f"{'id':<16} {'token_diffs':>11} {'batch_resp':>11} {'stream_resp':>12}")
    for utt_id, diffs, br, sr in rows:
        print(f"{utt_id:<16} {diffs:>11d} {br:>11.3f} {sr:>12.3f}")
    print(f"total token diffs: {total_diffs}")
    return 0


def cmd_scenario(args) -> int:
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    script = parse_table_file(args.table, vocab)
    n_blocks = args.blocks or script.n_blocks
    blocks = [EncodedBlock(index=b, vectors=np.zeros((1, 1)), frame_start=b - 1,
                           frame_end=b, is_last=(b == n_blocks))
              for b in range(1, n_blocks + 1)]
    config = _config(args)
    result = blockwise_synchronous_beam_search(blocks, {"attention": script.scorer},
                                               config, script.vocab)
    if args.trace:
        result.trace.write(args.trace)
    for b, ib in result.trace.index_boundaries:
        print(f"I_{b} = {ib}")
    flag = " (forced)" if result.forced else ""
    print(f"best{flag}: {script.vocab.text(result.best.tokens)}")
    print(f"score: {result.best.score_total:.6f}")
    print(f"completed: {len(result.completed)}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "delay":
            return cmd_delay(args)
        if args.command == "decode":
            return cmd_decode(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "scenario":
            return cmd_scenario(args)
    except (FileFormatError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
