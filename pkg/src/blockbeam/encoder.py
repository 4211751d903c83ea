"""Contextual block encoder: segmentation, attention primitives, block encoding.

The encoder pipeline is: downsample the feature sequence (strided averaging,
or two stride-2 convolutions when kernels are provided), project to the model
width, add absolute sinusoidal positions, then run the self-attention layer
stack per block.  A context embedding vector per layer is handed from each
block to the next block's corresponding layer, so every block sees a summary
of everything encoded before it; only the center frames of each block are
emitted.

Blocks are laid out in downsampled frames: centers tile ``[0, L)`` with hop
``n_center`` and each block's input additionally covers up to ``n_left``
frames of past context and ``n_right`` frames of lookahead, truncated at the
utterance edges (never zero-padded, which keeps latency accounting exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import BlockLayout, EncodedBlock, FileFormatError


class EncoderOverflowError(ArithmeticError):
    """Non-finite activations encountered while encoding."""


# ---------------------------------------------------------------------------
# attention primitives
# ---------------------------------------------------------------------------

def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
              mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d)) V``.

    ``q`` is ``[t_q, d]``, ``k`` and ``v`` are ``[t_k, d]`` and ``[t_k, d_v]``.
    ``mask`` (optional, ``[t_q, t_k]`` boolean) marks disallowed key positions.
    Each output row is a convex combination of rows of ``v``.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("attention expects 2-D matrices")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query width {q.shape[1]} != key width {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key rows {k.shape[0]} != value rows {v.shape[0]}")
    scores = q @ k.T / math.sqrt(q.shape[1])
    if mask is not None:
        scores = np.where(mask, -np.inf, scores)
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    return w @ v


@dataclass(frozen=True)
class AttentionWeights:
    """Packed projections for one multi-head attention: all heads side by side."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    n_heads: int

    def __post_init__(self):
        d_model = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = getattr(self, name)
            if m.shape != (d_model, d_model):
                raise ValueError(f"{name} must be [{d_model}, {d_model}], got {m.shape}")
        if self.n_heads < 1 or d_model % self.n_heads != 0:
            raise ValueError(f"head count {self.n_heads} must divide d_model {d_model}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]


def multi_head_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                         layer_weights: AttentionWeights,
                         mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Multi-head attention: per-head projections, concat, output projection."""
    w = layer_weights
    d = w.d_model // w.n_heads
    heads = []
    for m in range(w.n_heads):
        sl = slice(m * d, (m + 1) * d)
        heads.append(attention(q @ w.w_q[:, sl], k @ w.w_k[:, sl], v @ w.w_v[:, sl], mask=mask))
    return np.concatenate(heads, axis=1) @ w.w_o


@dataclass(frozen=True)
class FeedForward:
    """Position-wise feed-forward: ``relu(x W1 + b1) W2 + b2``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.w1 + self.b1, 0.0) @ self.w2 + self.b2


@dataclass(frozen=True)
class LayerNorm:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-12

    def __call__(self, x: np.ndarray) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return self.gamma * (x - mean) / np.sqrt(var + self.eps) + self.beta


@dataclass(frozen=True)
class Conv1d:
    """Stride-2 time convolution with centered zero padding and ReLU."""

    kernel: np.ndarray  # [K, C_in, C_out]
    bias: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        ksz = self.kernel.shape[0]
        pad_left = (ksz - 1) // 2
        t_out = -(-x.shape[0] // 2)
        out = np.tile(self.bias, (t_out, 1)).astype(np.float64)
        for kk in range(ksz):
            # output t reads input 2t + kk - pad_left
            src = np.arange(t_out) * 2 + kk - pad_left
            ok = (src >= 0) & (src < x.shape[0])
            out[ok] += x[src[ok]] @ self.kernel[kk]
        return np.maximum(out, 0.0)


@dataclass(frozen=True)
class EncoderLayer:
    self_attn: AttentionWeights
    ffn: FeedForward


@dataclass(frozen=True)
class EncoderWeights:
    """All encoder parameters; shapes are validated against each other."""

    input_proj_weight: np.ndarray
    input_proj_bias: np.ndarray
    layers: Tuple[EncoderLayer, ...]
    final_ln: LayerNorm
    conv1: Optional[Conv1d] = None
    conv2: Optional[Conv1d] = None
    pos_table: Optional[np.ndarray] = None

    def __post_init__(self):
        d = self.d_model
        if self.input_proj_weight.shape[1] != d and self.layers:
            raise ValueError("input projection width inconsistent with layers")
        for i, layer in enumerate(self.layers):
            if layer.self_attn.d_model != d:
                raise ValueError(f"layer {i} attention width {layer.self_attn.d_model} != {d}")
            if layer.ffn.w1.shape[0] != d or layer.ffn.w2.shape[1] != d:
                raise ValueError(f"layer {i} feed-forward width inconsistent")
        if self.final_ln.gamma.shape != (d,) or self.final_ln.beta.shape != (d,):
            raise ValueError("final layer-norm width inconsistent")
        if (self.conv1 is None) != (self.conv2 is None):
            raise ValueError("conv front end needs both stages")

    @property
    def d_model(self) -> int:
        return self.input_proj_weight.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def from_tensors(cls, t: Dict[str, np.ndarray]) -> "EncoderWeights":
        n_heads = int(t["enc.heads"].reshape(-1)[0])
        layers = []
        for i in range(_count_layers(t, "enc.layer")):
            p = f"enc.layer{i}"
            layers.append(EncoderLayer(
                self_attn=AttentionWeights(
                    t[f"{p}.self_attn.w_q"], t[f"{p}.self_attn.w_k"],
                    t[f"{p}.self_attn.w_v"], t[f"{p}.self_attn.w_o"], n_heads),
                ffn=FeedForward(t[f"{p}.ffn.w1"], t[f"{p}.ffn.b1"],
                                t[f"{p}.ffn.w2"], t[f"{p}.ffn.b2"])))
        conv1 = conv2 = None
        if "enc.conv1.kernel" in t:
            conv1 = Conv1d(t["enc.conv1.kernel"], t["enc.conv1.bias"])
            conv2 = Conv1d(t["enc.conv2.kernel"], t["enc.conv2.bias"])
        return cls(
            input_proj_weight=t["enc.input_proj.weight"],
            input_proj_bias=t["enc.input_proj.bias"],
            layers=tuple(layers),
            final_ln=LayerNorm(t["enc.final_ln.gamma"], t["enc.final_ln.beta"]),
            conv1=conv1, conv2=conv2,
            pos_table=t.get("enc.pos_encoding"))

    def to_tensors(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {"enc.heads": np.array([float(self.layers[0].self_attn.n_heads)])}
        if self.conv1 is not None:
            out["enc.conv1.kernel"] = self.conv1.kernel
            out["enc.conv1.bias"] = self.conv1.bias
            out["enc.conv2.kernel"] = self.conv2.kernel
            out["enc.conv2.bias"] = self.conv2.bias
        out["enc.input_proj.weight"] = self.input_proj_weight
        out["enc.input_proj.bias"] = self.input_proj_bias
        for i, layer in enumerate(self.layers):
            p = f"enc.layer{i}"
            out[f"{p}.self_attn.w_q"] = layer.self_attn.w_q
            out[f"{p}.self_attn.w_k"] = layer.self_attn.w_k
            out[f"{p}.self_attn.w_v"] = layer.self_attn.w_v
            out[f"{p}.self_attn.w_o"] = layer.self_attn.w_o
            out[f"{p}.ffn.w1"] = layer.ffn.w1
            out[f"{p}.ffn.b1"] = layer.ffn.b1
            out[f"{p}.ffn.w2"] = layer.ffn.w2
            out[f"{p}.ffn.b2"] = layer.ffn.b2
        out["enc.final_ln.gamma"] = self.final_ln.gamma
        out["enc.final_ln.beta"] = self.final_ln.beta
        if self.pos_table is not None:
            out["enc.pos_encoding"] = self.pos_table
        return out


def _count_layers(t: Dict[str, np.ndarray], prefix: str) -> int:
    n = 0
    while f"{prefix}{n}.self_attn.w_q" in t:
        n += 1
    if n == 0:
        raise ValueError(f"no {prefix}* tensors found")
    return n


def sinusoidal_positions(positions: np.ndarray, d_model: int) -> np.ndarray:
    """Absolute sinusoidal position encodings for the given frame indices."""
    pe = np.zeros((len(positions), d_model))
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    ang = positions[:, None] * div[None, :]
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : d_model // 2])
    return pe


# ---------------------------------------------------------------------------
# feature sequences and block segmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSequence:
    """Acoustic feature matrix ``[T, F]`` with its frame shift."""

    frames: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("features must be a non-empty [T, F] matrix")

    @property
    def duration_seconds(self) -> float:
        return self.frames.shape[0] * self.frame_shift_ms / 1000.0

    @classmethod
    def load(cls, path: str) -> "FeatureSequence":
        """Read a feature file: header ``T F frame_shift_ms`` then T rows of F floats."""
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise FileFormatError(path, 1, "header must be 'T F frame_shift_ms'")
            try:
                t, f = int(header[0]), int(header[1])
                shift = float(header[2])
            except ValueError:
                raise FileFormatError(path, 1, "malformed header numbers") from None
            rows = []
            for line_no, raw in enumerate(fh, start=2):
                if not raw.strip():
                    continue
                vals = raw.split()
                if len(vals) != f:
                    raise FileFormatError(path, line_no, f"expected {f} values, got {len(vals)}")
                try:
                    rows.append([float(v) for v in vals])
                except ValueError:
                    raise FileFormatError(path, line_no, "bad float value") from None
            if len(rows) != t:
                raise FileFormatError(path, line_no if rows else 1,
                                      f"expected {t} feature rows, got {len(rows)}")
        return cls(np.array(rows, dtype=np.float64), shift)

    def save(self, path: str) -> None:
        t, f = self.frames.shape
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{t} {f} {self.frame_shift_ms:g}\n")
            for row in self.frames:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class BlockInput:
    """Downsampled rows feeding one block: [left context | center | right context]."""

    index: int
    frames: np.ndarray
    ctx_start: int                 # absolute downsampled index of frames[0]
    center_range: Tuple[int, int]  # absolute half-open downsampled range of the center

    @property
    def center_slice(self) -> slice:
        cs, ce = self.center_range
        return slice(cs - self.ctx_start, ce - self.ctx_start)


@dataclass(frozen=True)
class ContextState:
    """Per-layer context embedding vectors handed from one block to the next."""

    vectors: np.ndarray  # [n_layers, d_model]

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("context state must be [n_layers, d_model]")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("context state must be finite")

    @classmethod
    def initial(cls, n_layers: int, d_model: int) -> "ContextState":
        return cls(np.zeros((n_layers, d_model)))


def downsampled_length(t: int, factor: int) -> int:
    return -(-t // factor)


def average_downsample(frames: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping windows of ``factor`` frames; the tail may be short."""
    if factor == 1:
        return frames
    t = frames.shape[0]
    out = np.empty((downsampled_length(t, factor), frames.shape[1]))
    for i in range(out.shape[0]):
        out[i] = frames[i * factor: min((i + 1) * factor, t)].mean(axis=0)
    return out


def tile_centers(n_frames: int, layout: BlockLayout) -> List[Tuple[int, int]]:
    """Half-open center ranges tiling ``[0, n_frames)`` with hop ``n_center``."""
    return [(s, min(s + layout.n_center, n_frames))
            for s in range(0, n_frames, layout.n_center)]


def segment_rows(rows: np.ndarray, layout: BlockLayout) -> List[BlockInput]:
    """Cut already-downsampled rows into block inputs with truncated context."""
    n = rows.shape[0]
    blocks = []
    for b, (cs, ce) in enumerate(tile_centers(n, layout), start=1):
        lo = max(0, cs - layout.n_left)
        hi = min(n, ce + layout.n_right)
        blocks.append(BlockInput(index=b, frames=rows[lo:hi], ctx_start=lo,
                                 center_range=(cs, ce)))
    return blocks


def segment_blocks(seq: FeatureSequence, layout: BlockLayout) -> List[BlockInput]:
    """Downsample a feature sequence by averaging and cut it into block inputs."""
    n = downsampled_length(seq.frames.shape[0], layout.downsample)
    if n < 1:
        raise ValueError("input shorter than one downsampled frame")
    return segment_rows(average_downsample(seq.frames, layout.downsample), layout)


def theoretical_delay(layout: BlockLayout) -> float:
    """Seconds of audio that must arrive before the next block can be encoded."""
    return layout.n_center * layout.downsample * layout.frame_shift_ms / 1000.0


# ---------------------------------------------------------------------------
# the block encoder
# ---------------------------------------------------------------------------

class ContextualBlockEncoder:
    """Streaming encoder over block inputs with context-embedding hand-over.

    Each layer's self-attention input is the block row sequence augmented
    with a context row: the query side carries this block's context from the
    previous layer level and the key/value side carries the previous block's
    context at the same level, which is how information flows diagonally
    across blocks and layers.  The level-0 context of a block is the mean of
    its embedded input rows; the initial cross-block state is all zeros.

    With ``use_context=False`` the layers run plainly on the block rows, and
    encoding a single block that covers the whole utterance is identical to
    an unblocked full-sequence forward pass.

    Arguments
    ---------
    weights : EncoderWeights
    layout : BlockLayout
    use_context : bool
        Enable the context hand-over path (default True).
    """

    def __init__(self, weights: EncoderWeights, layout: BlockLayout, use_context: bool = True):
        self.weights = weights
        self.layout = layout
        self.use_context = use_context
        if weights.conv1 is not None and layout.downsample != 4:
            raise ValueError("convolutional front end implements a fixed 4x downsampling")

    # -- front end ----------------------------------------------------------

    def downsample(self, seq: FeatureSequence) -> np.ndarray:
        w = self.weights
        if w.conv1 is not None:
            return w.conv2(w.conv1(seq.frames))
        return average_downsample(seq.frames, self.layout.downsample)

    def embed(self, rows: np.ndarray, offset: int) -> np.ndarray:
        """Project downsampled rows and add absolute positional encodings."""
        w = self.weights
        x = rows @ w.input_proj_weight + w.input_proj_bias
        positions = np.arange(offset, offset + rows.shape[0], dtype=np.float64)
        if w.pos_table is not None:
            if offset + rows.shape[0] > w.pos_table.shape[0]:
                raise ValueError("input longer than the positional encoding table")
            x = x + w.pos_table[offset:offset + rows.shape[0]]
        else:
            x = x + sinusoidal_positions(positions, w.d_model)
        return x

    def initial_context(self) -> ContextState:
        return ContextState.initial(self.weights.n_layers, self.weights.d_model)

    # -- per-block encoding --------------------------------------------------

    def encode_block(self, block: BlockInput, ctx: ContextState) -> Tuple[EncodedBlock, ContextState]:
        """Run the layer stack on one block; emit its center frames.

        Returns the encoded center frames and the context state for the
        following block.
        """
        w = self.weights
        if ctx.vectors.shape != (w.n_layers, w.d_model):
            raise ValueError("context state does not match encoder geometry")
        with np.errstate(over="ignore", invalid="ignore"):
            z = self.embed(block.frames, block.ctx_start)
            if self.use_context:
                level_ctx = z.mean(axis=0)
                new_levels = []
                for n, layer in enumerate(w.layers):
                    new_levels.append(level_ctx)
                    qin = np.vstack([z, level_ctx])
                    kvin = np.vstack([z, ctx.vectors[n]])
                    att = multi_head_attention(qin, kvin, kvin, layer.self_attn) + kvin
                    out = layer.ffn(att) + att
                    z = out[:-1]
                    level_ctx = out[-1]
                new_ctx_vectors = np.array(new_levels)
            else:
                for layer in w.layers:
                    att = multi_head_attention(z, z, z, layer.self_attn) + z
                    z = layer.ffn(att) + att
                new_ctx_vectors = None
            z = w.final_ln(z)
        if not np.all(np.isfinite(z)) or (
                new_ctx_vectors is not None and not np.all(np.isfinite(new_ctx_vectors))):
            raise EncoderOverflowError("numerical overflow in encoder")
        new_state = (ContextState(new_ctx_vectors) if new_ctx_vectors is not None
                     else self.initial_context())
        center = z[block.center_slice]
        cs, ce = block.center_range
        return EncodedBlock(index=block.index, vectors=center,
                            frame_start=cs, frame_end=ce, is_last=False), new_state

    # -- utterance driving ----------------------------------------------------

    def encode_stream(self, seq: FeatureSequence) -> Iterator[EncodedBlock]:
        """Encode blocks one by one, marking the final block."""
        rows = self.downsample(seq)
        if rows.shape[0] < 1:
            raise ValueError("input shorter than one downsampled frame")
        inputs = segment_rows(rows, self.layout)
        ctx = self.initial_context()
        for bi in inputs:
            enc, ctx = self.encode_block(bi, ctx)
            if bi.index == len(inputs):
                enc = EncodedBlock(enc.index, enc.vectors, enc.frame_start,
                                   enc.frame_end, is_last=True)
            yield enc

    def encode_utterance(self, seq: FeatureSequence) -> List[EncodedBlock]:
        return list(self.encode_stream(seq))

    def encode_unblocked(self, seq: FeatureSequence) -> np.ndarray:
        """Full-sequence forward pass without blocking or context rows."""
        rows = self.downsample(seq)
        w = self.weights
        z = self.embed(rows, 0)
        for layer in w.layers:
            att = multi_head_attention(z, z, z, layer.self_attn) + z
            z = layer.ffn(att) + att
        z = w.final_ln(z)
        if not np.all(np.isfinite(z)):
            raise EncoderOverflowError("numerical overflow in encoder")
        return z
