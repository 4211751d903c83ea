"""Attention primitives, block segmentation, and the theoretical delay.

Walks through the numeric building blocks: scaled dot-product attention,
multi-head attention, how an utterance is tiled into overlapping blocks,
and how much audio the encoder must buffer before it can emit a block.
"""

import numpy as np

from blockbeam import BlockLayout, FeatureSequence, attention, multi_head_attention, \
    segment_blocks, theoretical_delay
from blockbeam.encoder import AttentionWeights

rng = np.random.default_rng(0)

# Scaled dot-product attention: each output row is a convex mix of value rows.
q = rng.normal(size=(2, 4))
k = rng.normal(size=(3, 4))
v = rng.normal(size=(3, 4))
out = attention(q, k, v)
print("attention output:")
print(np.round(out, 4))

# With a single key, the query does not matter: the output is the value row.
print("\nsingle-key attention equals the value row:",
      np.allclose(attention(q, k[:1], v[:1]), np.tile(v[:1], (2, 1))))

# Multi-head attention projects into per-head subspaces and re-mixes.
w = AttentionWeights(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)),
                     rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), n_heads=2)
print("\ntwo-head attention output:")
print(np.round(multi_head_attention(q, k, v, w), 4))

# Block segmentation: centers tile the downsampled utterance, with left
# context and lookahead truncated at the edges.
layout = BlockLayout(n_left=4, n_center=8, n_right=4, downsample=4, frame_shift_ms=10.0)
seq = FeatureSequence(rng.normal(size=(130, 8)))  # 1.3 s of audio
print(f"\n{seq.frames.shape[0]} raw frames -> "
      f"{-(-seq.frames.shape[0] // layout.downsample)} downsampled frames")
for block in segment_blocks(seq, layout):
    lo = block.ctx_start
    hi = lo + block.frames.shape[0]
    print(f"  block {block.index}: input rows [{lo:3d}, {hi:3d})  "
          f"center {block.center_range}")

# The theoretical delay is the audio span of one block hop.
for center in (8, 16):
    d = theoretical_delay(BlockLayout(16, center, 8, downsample=4, frame_shift_ms=10.0))
    print(f"\ncenter={center} downsample=4 shift=10ms -> theoretical delay {d:.2f} s")
