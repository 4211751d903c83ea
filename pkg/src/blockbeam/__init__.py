"""Blockwise synchronous beam search decoding with block boundary detection."""

from .core import (LOG_ZERO, Beam, BlockLayout, DecodeConfig, EncodedBlock, FileFormatError,
                   Hypothesis, Vocabulary, combined_score, log_add, sort_hypotheses)
from .encoder import (AttentionWeights, BlockInput, ContextState, ContextualBlockEncoder,
                      EncoderOverflowError, EncoderWeights, FeatureSequence, attention,
                      multi_head_attention, segment_blocks, theoretical_delay)
from .bbd import (BoundaryDecision, EvaluatedSet, ReliabilityReport, detect_boundary,
                  reliability, repetition_score)
from .search import (BeamCollapseError, DecodeResult, DecodingSession, SearchTrace,
                     batch_beam_search, blockwise_synchronous_beam_search, score_sequence,
                     search_step)
from .harness import (EditStats, UtteranceResult, block_arrival_seconds, edit_distance,
                      measure_run, read_manifest, summarize, synthetic_features)
from . import scorers, tensorio, toy

__version__ = "0.1.0"

__all__ = [
    "LOG_ZERO", "Beam", "BeamCollapseError", "BlockInput", "BlockLayout",
    "BoundaryDecision", "ContextState", "ContextualBlockEncoder", "DecodeConfig",
    "DecodeResult", "DecodingSession", "EditStats", "EncodedBlock", "EncoderOverflowError",
    "EncoderWeights", "EvaluatedSet", "FeatureSequence", "FileFormatError", "Hypothesis",
    "ReliabilityReport", "SearchTrace", "UtteranceResult", "Vocabulary",
    "attention", "batch_beam_search", "block_arrival_seconds",
    "blockwise_synchronous_beam_search", "combined_score", "detect_boundary",
    "edit_distance", "log_add", "measure_run", "multi_head_attention", "read_manifest",
    "reliability", "repetition_score", "scorers", "score_sequence", "search_step",
    "segment_blocks", "sort_hypotheses", "summarize", "synthetic_features", "tensorio",
    "theoretical_delay", "toy",
]
