"""Attention decoder scorer: causal self-attention plus source attention.

Each decoder layer applies masked self-attention over the token prefix,
attends to the encoder output available so far, and runs a position-wise
feed-forward, all with residual connections.  The final position is
projected to vocabulary logits and log-softmax normalized.

States cache per-layer activations of the prefix under the block count they
were computed with.  Scoring with the same block count only computes the
newest position; a grown block count rebuilds the cache, since earlier
source-attention outputs change when more encoder frames become visible.
Either way the produced distribution equals a from-scratch recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import EncodedBlock, Vocabulary
from ..encoder import AttentionWeights, FeedForward, multi_head_attention
from .base import NonMonotoneBlockStream, Scorer, block_vectors, check_prefix


@dataclass(frozen=True)
class DecoderLayer:
    self_attn: AttentionWeights
    src_attn: AttentionWeights
    ffn: FeedForward


@dataclass(frozen=True)
class DecoderWeights:
    embedding: np.ndarray  # [V, d_model]
    layers: Tuple[DecoderLayer, ...]
    output_proj_weight: np.ndarray  # [d_model, V]
    output_proj_bias: np.ndarray

    def __post_init__(self):
        d = self.d_model
        if self.output_proj_weight.shape != (d, self.embedding.shape[0]):
            raise ValueError("output projection must map d_model to the vocabulary size")
        if self.output_proj_bias.shape != (self.embedding.shape[0],):
            raise ValueError("output projection bias width inconsistent")
        for i, layer in enumerate(self.layers):
            if layer.self_attn.d_model != d or layer.src_attn.d_model != d:
                raise ValueError(f"decoder layer {i} width inconsistent")

    @property
    def d_model(self) -> int:
        return self.embedding.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @classmethod
    def from_tensors(cls, t: Dict[str, np.ndarray]) -> "DecoderWeights":
        n_heads = int(t["dec.heads"].reshape(-1)[0])
        layers = []
        i = 0
        while f"dec.layer{i}.self_attn.w_q" in t:
            p = f"dec.layer{i}"
            layers.append(DecoderLayer(
                self_attn=AttentionWeights(
                    t[f"{p}.self_attn.w_q"], t[f"{p}.self_attn.w_k"],
                    t[f"{p}.self_attn.w_v"], t[f"{p}.self_attn.w_o"], n_heads),
                src_attn=AttentionWeights(
                    t[f"{p}.src_attn.w_q"], t[f"{p}.src_attn.w_k"],
                    t[f"{p}.src_attn.w_v"], t[f"{p}.src_attn.w_o"], n_heads),
                ffn=FeedForward(t[f"{p}.ffn.w1"], t[f"{p}.ffn.b1"],
                                t[f"{p}.ffn.w2"], t[f"{p}.ffn.b2"])))
            i += 1
        if not layers:
            raise ValueError("no dec.layer* tensors found")
        return cls(embedding=t["dec.embedding"], layers=tuple(layers),
                   output_proj_weight=t["dec.output_proj.weight"],
                   output_proj_bias=t["dec.output_proj.bias"])

    def to_tensors(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {
            "dec.heads": np.array([float(self.layers[0].self_attn.n_heads)]),
            "dec.embedding": self.embedding,
        }
        for i, layer in enumerate(self.layers):
            p = f"dec.layer{i}"
            for tag, att in (("self_attn", layer.self_attn), ("src_attn", layer.src_attn)):
                out[f"{p}.{tag}.w_q"] = att.w_q
                out[f"{p}.{tag}.w_k"] = att.w_k
                out[f"{p}.{tag}.w_v"] = att.w_v
                out[f"{p}.{tag}.w_o"] = att.w_o
            out[f"{p}.ffn.w1"] = layer.ffn.w1
            out[f"{p}.ffn.b1"] = layer.ffn.b1
            out[f"{p}.ffn.w2"] = layer.ffn.w2
            out[f"{p}.ffn.b2"] = layer.ffn.b2
        out["dec.output_proj.weight"] = self.output_proj_weight
        out["dec.output_proj.bias"] = self.output_proj_bias
        return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


class DecoderState:
    """Prefix tokens plus cached per-layer input activations.

    The cache (``n_blocks``, per-layer ``[i, d_model]`` inputs, final rows)
    is a memo of a pure function of (tokens, blocks); it is swapped
    atomically and never mutated in place, so snapshots shared across
    retained beams stay valid.
    """

    __slots__ = ("tokens", "_cache")

    def __init__(self, tokens: Tuple[int, ...]):
        self.tokens = tuple(tokens)
        self._cache: Optional[Tuple[int, List[np.ndarray], np.ndarray]] = None


class AttentionDecoderScorer(Scorer):
    """Scores ``log p(y_i | y_{0:i-1}, h_{1:b})`` with the decoder stack."""

    def __init__(self, weights: DecoderWeights, vocab: Vocabulary):
        if weights.vocab_size != len(vocab):
            raise ValueError("decoder vocabulary size does not match the vocabulary")
        self.weights = weights
        self.vocab = vocab

    def initial_state(self, vocab: Vocabulary) -> DecoderState:
        return DecoderState((vocab.sos_eos_id,))

    def score_step(self, state: DecoderState, tokens: Tuple[int, ...],
                   blocks: Sequence[EncodedBlock]) -> Tuple[np.ndarray, DecoderState]:
        check_prefix(state.tokens, tokens)
        n_blocks = len(blocks)
        cache = state._cache
        if cache is not None and n_blocks < cache[0]:
            raise NonMonotoneBlockStream("non-monotone block stream")
        h = block_vectors(blocks)
        if cache is not None and cache[0] == n_blocks and len(cache[2]) == len(tokens) - 1:
            layer_inputs, final = self._extend(cache[1], cache[2], tokens[-1], h)
        else:
            layer_inputs, final = self._full_forward(tokens, h)
        state._cache = (n_blocks, layer_inputs, final)
        logits = final[-1] @ self.weights.output_proj_weight + self.weights.output_proj_bias
        return log_softmax(logits), state

    def select_state(self, handle: DecoderState, token: int) -> DecoderState:
        child = DecoderState(handle.tokens + (token,))
        child._cache = handle._cache  # positions of the prefix are shared
        return child

    # -- forward passes -------------------------------------------------------

    def _full_forward(self, tokens: Tuple[int, ...], h: np.ndarray):
        w = self.weights
        z = w.embedding[list(tokens)]
        n = z.shape[0]
        mask = np.triu(np.ones((n, n), dtype=bool), k=1)
        layer_inputs = []
        for layer in w.layers:
            layer_inputs.append(z)
            san = multi_head_attention(z, z, z, layer.self_attn, mask=mask) + z
            sta = multi_head_attention(san, h, h, layer.src_attn) + san
            z = layer.ffn(sta) + sta
        return layer_inputs, z

    def _extend(self, cached_inputs: List[np.ndarray], cached_final: np.ndarray,
                new_token: int, h: np.ndarray):
        """Compute only the newest position using cached earlier rows."""
        w = self.weights
        row = w.embedding[new_token][None, :]
        layer_inputs = []
        for layer, prev in zip(w.layers, cached_inputs):
            z = np.vstack([prev, row])
            layer_inputs.append(z)
            san = multi_head_attention(row, z, z, layer.self_attn) + row
            sta = multi_head_attention(san, h, h, layer.src_attn) + san
            row = layer.ffn(sta) + sta
        return layer_inputs, np.vstack([cached_final, row])
