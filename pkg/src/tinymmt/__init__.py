"""tinymmt: a desk-scale multimodal neural machine translation laboratory.

Library layout:

* ``autodiff``   -- reverse-mode tensor library and the Adam optimizer
* ``model``      -- Transformer encoder-decoder (batched training path and
                    incremental decoding path)
* ``fusion``     -- visual-feature injection (pseudo-word, gates, trg-mul),
                    mean/dummy features, feature file format
* ``corpus``     -- preprocessing, tagging, punctuation and char-LM filters
* ``bpe``        -- balanced multilingual byte-pair encoding
* ``decoding``   -- beam search, ensemble averaging, blinding
* ``metrics``    -- corpus BLEU and chrF
* ``training``   -- token-batched training loop
* ``checkpoint`` -- named-tensor checkpoint files
* ``cli``        -- the ``tinymmt`` command-line tool
"""

from .autodiff import Adam, GradCheckReport, Tensor, grad_check
from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .config import ModelConfig
from .decoding import beam_search, ensemble_step, translate_corpus
from .metrics import corpus_bleu, corpus_chrf
from .model import Transformer, label_smoothed_loss, positional_encoding
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = [
    "Adam", "GradCheckReport", "Tensor", "grad_check",
    "load_checkpoint", "load_model", "save_checkpoint", "save_model",
    "ModelConfig", "beam_search", "ensemble_step", "translate_corpus",
    "corpus_bleu", "corpus_chrf", "Transformer", "label_smoothed_loss",
    "positional_encoding", "Vocabulary", "__version__",
]
