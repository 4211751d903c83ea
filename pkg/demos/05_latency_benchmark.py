"""Response time and real-time factor: batch versus streaming decoding.

Batch decoding cannot start until the utterance ends, so its response time
is the full encode-plus-search cost.  Streaming decoding works while audio
arrives and only the final ordinary-decoding phase lands after the last
frame, which is what the response-time column measures.
"""

import numpy as np

from blockbeam import (BlockLayout, ContextualBlockEncoder, DecodeConfig, measure_run,
                       synthetic_features, theoretical_delay, toy)
from blockbeam.harness import format_summary_table

rng = np.random.default_rng(42)
vocab = toy.toy_vocabulary(4)
layout = BlockLayout(4, 8, 4, downsample=4, frame_shift_ms=10.0)
encoder = ContextualBlockEncoder(
    toy.random_encoder_weights(rng, feat_dim=6, d_model=8, n_layers=1, n_heads=2), layout)
scorers = toy.toy_scorers(rng, vocab, d_model=8)
config = DecodeConfig(beam_width=2, i_max=24, ctc_weight=0.3)

print(f"theoretical delay of this layout: {theoretical_delay(layout):.2f} s")

results = []
for seed, seconds in ((1, 4.0), (2, 7.0), (3, 10.0)):
    seq = synthetic_features(seed=seed, seconds=seconds, feat_dim=6)
    for mode in ("batch", "streaming"):
        utt, res = measure_run(seq, encoder, scorers, config, vocab, mode=mode,
                               utt_id=f"synth{seed}")
        results.append(utt)
        boundaries = utt.boundary_summary["boundaries"]
        print(f"{utt.utt_id} {mode:9s}: audio {utt.audio_seconds:5.1f}s  "
              f"cpu {utt.cpu_seconds:6.3f}s  rtf {utt.rtf:5.3f}  "
              f"response {utt.response_seconds:6.3f}s  boundaries {boundaries}")

print()
print(format_summary_table(results))
print()
print("one emitted result record:")
print(results[-1].to_line())
