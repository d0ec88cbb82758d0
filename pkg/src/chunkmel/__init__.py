"""Chunk-streaming transformer Mel decoder with fixed-size state caches.

Decode a feature sequence chunk by chunk with constant per-chunk cost,
bit-matching the whole-sequence masked forward used at training time.
"""

from .decoder import (
    DecoderConfig,
    DecoderState,
    ModelWeights,
    ReceptiveFieldReport,
    decode_chunk,
    decode_incremental,
    decode_parallel_masked,
    init_state,
    init_weights,
    load_decoder_state,
    load_model,
    positional_encoding,
    receptive_field_formula,
    receptive_field_oracle,
    save_decoder_state,
    save_model,
)
from .evaluation import BenchResult, ablation_check, bench, equivalence_sweep, msd
from .masks import ALL, ChunkMask, DynamicMaskPolicy, build_static_mask, sample_dynamic_mask
from .training import SyntheticTask, TrainConfig, generate_batch, make_task, run_mask_study, train

__all__ = [
    "ALL",
    "BenchResult",
    "ChunkMask",
    "DecoderConfig",
    "DecoderState",
    "DynamicMaskPolicy",
    "ModelWeights",
    "ReceptiveFieldReport",
    "SyntheticTask",
    "TrainConfig",
    "ablation_check",
    "bench",
    "build_static_mask",
    "decode_chunk",
    "decode_incremental",
    "decode_parallel_masked",
    "equivalence_sweep",
    "generate_batch",
    "init_state",
    "init_weights",
    "load_decoder_state",
    "load_model",
    "make_task",
    "msd",
    "positional_encoding",
    "receptive_field_formula",
    "receptive_field_oracle",
    "run_mask_study",
    "sample_dynamic_mask",
    "save_decoder_state",
    "save_model",
    "train",
]

__version__ = "0.1.0"
