import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blockbeam import BlockLayout, ContextualBlockEncoder, EncodedBlock, FeatureSequence, toy


def build_toy_run(seed, n_real=3, d_model=8, t_raw=96, layout=None, with_ctc=True,
                  enc_layers=1, dec_layers=1):
    """Encoder blocks plus scorers for one random toy utterance."""
    rng = np.random.default_rng(seed)
    vocab = toy.toy_vocabulary(n_real)
    layout = layout or BlockLayout(4, 8, 4, downsample=4)
    enc_w = toy.random_encoder_weights(rng, feat_dim=4, d_model=d_model,
                                       n_layers=enc_layers, n_heads=2)
    encoder = ContextualBlockEncoder(enc_w, layout)
    seq = FeatureSequence(rng.normal(size=(t_raw, 4)))
    blocks = encoder.encode_utterance(seq)
    scorers = toy.toy_scorers(rng, vocab, d_model=d_model, with_ctc=with_ctc,
                              dec_layers=dec_layers)
    return vocab, blocks, scorers, encoder, seq


def scripted_blocks(n_blocks):
    """Placeholder blocks for table-scorer scenarios (vectors unused)."""
    return [EncodedBlock(index=b, vectors=np.zeros((1, 1)), frame_start=b - 1,
                         frame_end=b, is_last=(b == n_blocks))
            for b in range(1, n_blocks + 1)]
