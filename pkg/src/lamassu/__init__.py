"""Streaming multilingual transducer with a clustered encoder, at toy scale.

A small numpy autodiff core, Transformer/LSTM blocks, the clustered
multilingual encoder, SPE/UNI transducer heads, transducer/CTC/LID losses, a
synthetic many-to-many speech translation corpus, training, streaming greedy
decoding and evaluation.
"""

from .config import RunConfig, load_config
from .data import ToyLanguageSpec, generate_corpus
from .model import LamassuModel
from .train import Trainer, load_model

__all__ = ["LamassuModel", "RunConfig", "ToyLanguageSpec", "Trainer", "generate_corpus", "load_config",
           "load_model"]
__version__ = "0.1.0"
