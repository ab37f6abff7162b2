"""Stacked attention over visual regions, driven by a short verbal reminder.

A reminder is encoded by an LSTM, two attention layers localise the
abnormality on a region grid, a softmax head classifies it, and a lookup
table recommends a correction.
"""

from h2rat.attention import ABNORMALITIES, CorrectionTable, forward, recommend_correction
from h2rat.model import Model, ModelDims
from h2rat.scenarios import CorpusDefinition, generate_corpus, load_corpus, save_corpus
from h2rat.training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ABNORMALITIES",
    "CorpusDefinition",
    "CorrectionTable",
    "Model",
    "ModelDims",
    "TrainConfig",
    "forward",
    "generate_corpus",
    "load_checkpoint",
    "load_corpus",
    "recommend_correction",
    "save_checkpoint",
    "save_corpus",
    "train",
]
