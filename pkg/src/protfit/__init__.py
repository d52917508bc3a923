"""Protein fitness prediction with an autoregressive language model and
inference-time alignment retrieval."""

__version__ = "0.1.0"

from .errors import InputError, ProtfitError  # noqa: F401
from .model import ModelConfig, ProteinLM, load_checkpoint, save_checkpoint  # noqa: F401
from .retrieval import build_profile, parse_a2m, sequence_weights  # noqa: F401
from .score import ScoreRequest, fitness_ratio, score_bidirectional  # noqa: F401
from .seq import ProteinSequence, parse_fasta, parse_mutation  # noqa: F401
from .train import TrainConfig  # noqa: F401
