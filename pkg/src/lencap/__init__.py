"""Length- and duration-controllable caption generation lab."""

from .autodiff import OptimizerState, Tape, Tensor, adamw_step
from .corpus import (CorpusSpec, GrammarConfig, Sample, Vocabulary,
                     build_vocabulary, count_tokens, duration_oracle,
                     generate_corpus)
from .decoder import CaptionModel, ConditionVector, DecoderState, ModelConfig
from .embedding import ComposedEmbedding, LengthEmbedder
from .evaluation import EvalReport, arbitrary_length_sweep, gold_length_test
from .generation import GenerationConfig, GenerationResult, generate
from .lengthcodes import LengthCode, discretize_duration, encode_length
from .metrics import bleu4, build_cider_stats, cider, rouge_l
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "OptimizerState", "Tape", "Tensor", "adamw_step",
    "CorpusSpec", "GrammarConfig", "Sample", "Vocabulary",
    "build_vocabulary", "count_tokens", "duration_oracle", "generate_corpus",
    "CaptionModel", "ConditionVector", "DecoderState", "ModelConfig",
    "ComposedEmbedding", "LengthEmbedder",
    "EvalReport", "arbitrary_length_sweep", "gold_length_test",
    "GenerationConfig", "GenerationResult", "generate",
    "LengthCode", "discretize_duration", "encode_length",
    "bleu4", "build_cider_stats", "cider", "rouge_l",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
]
