from .base import NonMonotoneBlockStream, Scorer, ScorerError, block_vectors, frame_count
from .attention_decoder import AttentionDecoderScorer, DecoderLayer, DecoderState, DecoderWeights, log_softmax
from .ctc_prefix import (CtcPrefixScorer, CtcState, complete_score, ctc_prefix_score,
                         load_posteriors, prefix_score)
from .lm import BigramTableLM, UniformLM
from .table import ScenarioScript, TableScorer, parse_table_file
from .kd import kd_combined_loss, kd_loss

__all__ = [
    "AttentionDecoderScorer", "BigramTableLM", "CtcPrefixScorer", "CtcState",
    "DecoderLayer", "DecoderState", "DecoderWeights", "NonMonotoneBlockStream",
    "ScenarioScript", "Scorer", "ScorerError", "TableScorer", "UniformLM",
    "block_vectors", "complete_score", "ctc_prefix_score", "frame_count",
    "kd_combined_loss", "kd_loss", "load_posteriors", "log_softmax",
    "parse_table_file", "prefix_score",
]
