"""Sectioned text format for named tensors.

A file is a sequence of sections::

    [tensor <name> <dim0> <dim1> ...]
    <row-major decimal floats, any whitespace layout>

Tensor names used by the encoder and decoder weight loaders:

========================  =============================  ========
name                      shape                          required
========================  =============================  ========
enc.heads                 [1]                            yes
enc.conv1.kernel          [K, F, C1]                     no
enc.conv1.bias            [C1]                           with kernel
enc.conv2.kernel          [K, C1, C2]                    no
enc.conv2.bias            [C2]                           with kernel
enc.input_proj.weight     [Fin, d_model]                 yes
enc.input_proj.bias       [d_model]                      yes
enc.pos_encoding          [max_len, d_model]             no (sinusoidal default)
enc.layer<i>.self_attn.w_q/w_k/w_v/w_o   [d_model, d_model]   yes
enc.layer<i>.ffn.w1/b1/w2/b2             see FeedForward      yes
enc.final_ln.gamma        [d_model]                      yes
enc.final_ln.beta         [d_model]                      yes
dec.heads                 [1]                            yes
dec.embedding             [V, d_model]                   yes
dec.layer<i>.self_attn.*  as encoder                     yes
dec.layer<i>.src_attn.*   as encoder                     yes
dec.layer<i>.ffn.*        as encoder                     yes
dec.output_proj.weight    [d_model, V]                   yes
dec.output_proj.bias      [V]                            yes
ctc.proj.weight           [d_model, V]                   no
ctc.proj.bias             [V]                            with weight
========================  =============================  ========
"""

from __future__ import annotations

from typing import Dict, List

import numpy as np

from .core import FileFormatError


def read_tensors(path: str) -> Dict[str, np.ndarray]:
    """Parse a sectioned tensor file into a name -> float64 array mapping."""
    tensors: Dict[str, np.ndarray] = {}
    name = None
    shape: List[int] = []
    values: List[float] = []
    header_line = 0

    def flush(line_no: int):
        if name is None:
            return
        want = int(np.prod(shape)) if shape else 0
        if len(values) != want:
            raise FileFormatError(
                path, header_line,
                f"tensor {name} expects {want} values, got {len(values)} by line {line_no}")
        tensors[name] = np.array(values, dtype=np.float64).reshape(shape)

    with open(path, "r", encoding="utf-8") as fh:
        line_no = 0
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    raise FileFormatError(path, line_no, "unterminated section header")
                parts = line[1:-1].split()
                if len(parts) < 3 or parts[0] != "tensor":
                    raise FileFormatError(path, line_no, "section header must be [tensor <name> <dims...>]")
                flush(line_no)
                name = parts[1]
                if name in tensors:
                    raise FileFormatError(path, line_no, f"duplicate tensor {name}")
                try:
                    shape = [int(d) for d in parts[2:]]
                except ValueError:
                    raise FileFormatError(path, line_no, "non-integer dimension in section header") from None
                if any(d < 1 for d in shape):
                    raise FileFormatError(path, line_no, "dimensions must be >= 1")
                values = []
                header_line = line_no
                continue
            if name is None:
                raise FileFormatError(path, line_no, "values before any [tensor ...] header")
            for tok in line.split():
                try:
                    values.append(float(tok))
                except ValueError:
                    raise FileFormatError(path, line_no, f"bad float {tok!r}") from None
        flush(line_no)
    return tensors


def write_tensors(path: str, tensors: Dict[str, np.ndarray]) -> None:
    """Write tensors in the sectioned format, one matrix row per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"[tensor {name} {dims}]\n")
            rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
            for row in rows:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
