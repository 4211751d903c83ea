"""Small random models for demos, tests, and latency experiments."""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from .core import Vocabulary
from .encoder import AttentionWeights, Conv1d, EncoderLayer, EncoderWeights, FeedForward, LayerNorm
from .scorers.attention_decoder import AttentionDecoderScorer, DecoderLayer, DecoderWeights
from .scorers.ctc_prefix import CtcPrefixScorer
from .scorers.base import Scorer


def toy_vocabulary(n_real: int) -> Vocabulary:
    """``<s>`` plus ``n_real`` content tokens plus a trailing blank."""
    tokens = ("<s>",) + tuple(f"t{i}" for i in range(1, n_real + 1)) + ("<b>",)
    return Vocabulary(tokens, blank_id=len(tokens) - 1, sos_eos_id=0)


def _mat(rng: np.random.Generator, rows: int, cols: int, scale: float = 0.6) -> np.ndarray:
    return rng.normal(0.0, scale / np.sqrt(rows), size=(rows, cols))


def _attn(rng: np.random.Generator, d_model: int, n_heads: int) -> AttentionWeights:
    return AttentionWeights(_mat(rng, d_model, d_model), _mat(rng, d_model, d_model),
                            _mat(rng, d_model, d_model), _mat(rng, d_model, d_model), n_heads)


def _ffn(rng: np.random.Generator, d_model: int, d_ff: int) -> FeedForward:
    return FeedForward(_mat(rng, d_model, d_ff), rng.normal(0.0, 0.05, d_ff),
                       _mat(rng, d_ff, d_model), rng.normal(0.0, 0.05, d_model))


def random_encoder_weights(rng: np.random.Generator, feat_dim: int, d_model: int = 8,
                           n_layers: int = 2, n_heads: int = 2, d_ff: int = 16,
                           with_conv: bool = False, conv_kernel: int = 3) -> EncoderWeights:
    conv1 = conv2 = None
    in_dim = feat_dim
    if with_conv:
        c1 = max(4, feat_dim)
        conv1 = Conv1d(rng.normal(0.0, 0.4 / np.sqrt(conv_kernel * feat_dim),
                                  size=(conv_kernel, feat_dim, c1)),
                       rng.normal(0.0, 0.05, c1))
        conv2 = Conv1d(rng.normal(0.0, 0.4 / np.sqrt(conv_kernel * c1),
                                  size=(conv_kernel, c1, c1)),
                       rng.normal(0.0, 0.05, c1))
        in_dim = c1
    layers = tuple(EncoderLayer(_attn(rng, d_model, n_heads), _ffn(rng, d_model, d_ff))
                   for _ in range(n_layers))
    return EncoderWeights(
        input_proj_weight=_mat(rng, in_dim, d_model, scale=1.0),
        input_proj_bias=rng.normal(0.0, 0.05, d_model),
        layers=layers,
        final_ln=LayerNorm(np.ones(d_model), np.zeros(d_model)),
        conv1=conv1, conv2=conv2)


def random_decoder_weights(rng: np.random.Generator, vocab_size: int, d_model: int = 8,
                           n_layers: int = 1, n_heads: int = 2, d_ff: int = 16) -> DecoderWeights:
    layers = tuple(DecoderLayer(_attn(rng, d_model, n_heads), _attn(rng, d_model, n_heads),
                                _ffn(rng, d_model, d_ff))
                   for _ in range(n_layers))
    return DecoderWeights(
        embedding=rng.normal(0.0, 0.7, size=(vocab_size, d_model)),
        layers=layers,
        output_proj_weight=_mat(rng, d_model, vocab_size, scale=1.5),
        output_proj_bias=rng.normal(0.0, 0.1, vocab_size))


def random_ctc_projection(rng: np.random.Generator, d_model: int,
                          vocab_size: int) -> Tuple[np.ndarray, np.ndarray]:
    return _mat(rng, d_model, vocab_size, scale=1.5), rng.normal(0.0, 0.1, vocab_size)


def toy_scorers(rng: np.random.Generator, vocab: Vocabulary, d_model: int = 8,
                with_ctc: bool = True, dec_layers: int = 1,
                n_heads: int = 2) -> Dict[str, Scorer]:
    """An attention decoder scorer, optionally joined by a CTC prefix scorer."""
    scorers: Dict[str, Scorer] = {
        "attention": AttentionDecoderScorer(
            random_decoder_weights(rng, len(vocab), d_model=d_model,
                                   n_layers=dec_layers, n_heads=n_heads), vocab)}
    if with_ctc:
        scorers["ctc"] = CtcPrefixScorer(vocab, projection=random_ctc_projection(
            rng, d_model, len(vocab)))
    return scorers
