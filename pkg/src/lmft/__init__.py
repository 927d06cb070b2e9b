"""Transfer learning for text classification with LSTM language models.

The pipeline: train a subword vocabulary, pretrain a regularized LSTM
language model on a large corpus, fine-tune it on target-domain text,
then train a pooled classifier on top with gradual unfreezing. All
numerics run on a small hand-rolled reverse-mode autodiff core.
"""

from .awd_lstm import LMConfig, LMParams, init_lm_params, lm_forward, perplexity
from .classifier import (ClfHeadParams, encode_dataset, init_clf_head,
                         predict)
from .corpus import (BINARY, MULTILABEL, LabeledDataset, RawCorpus,
                     load_classification_dataset, load_lm_corpus,
                     normalize_text, split_dataset)
from .errors import (CompatibilityError, CorruptionError, CoverageError,
                     DataError, IngestionError, NumericalFault, SchemaError,
                     ShapeError, ToolkitError, UsageError)
from .metrics import binary_f1, mean_f1, ndcg_at_k
from .persistence import (Checkpoint, file_digest, load_checkpoint,
                          load_vocab, save_checkpoint, save_vocab)
from .tokenizer import UnigramVocab, decode, encode, train_unigram
from .training import (TrainRunConfig, clf_train, default_run_config,
                       lm_finetune, lm_pretrain)

__version__ = "0.1.0"

__all__ = [
    "BINARY", "MULTILABEL", "Checkpoint", "ClfHeadParams",
    "CompatibilityError", "CorruptionError", "CoverageError", "DataError",
    "IngestionError", "LMConfig", "LMParams", "LabeledDataset",
    "NumericalFault", "RawCorpus", "SchemaError", "ShapeError",
    "ToolkitError", "TrainRunConfig", "UnigramVocab", "UsageError",
    "binary_f1", "clf_train", "decode", "default_run_config", "encode",
    "encode_dataset", "file_digest", "init_clf_head", "init_lm_params",
    "lm_finetune", "lm_forward", "lm_pretrain", "load_checkpoint",
    "load_classification_dataset", "load_lm_corpus", "load_vocab", "mean_f1",
    "ndcg_at_k", "normalize_text", "perplexity", "predict",
    "save_checkpoint", "save_vocab", "split_dataset", "train_unigram",
    "__version__",
]
