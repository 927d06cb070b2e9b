"""Classification head over the language model.

The head consumes the top LSTM layer's hidden sequence, pools it into
[last state; max over time; mean over time], and applies two linear
layers with a rectifier in between. PAD positions are excluded from all
three pooling components, which is what makes logits independent of
padding and batch composition.

Binary tasks emit two softmax logits; multilabel tasks emit one
independent logit per label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .awd_lstm import LMConfig, LMParams, lm_hidden_sequence
from .corpus import BINARY, MULTILABEL, LabeledDataset, normalize_text
from .errors import CompatibilityError, ShapeError, UsageError
from .tokenizer import PAD_ID, UnigramVocab, encode

HEAD_WIDTH = 50
HEAD_DROPOUT = 0.1
MAX_DOC_TOKENS = 400


@dataclass(frozen=True)
class ClfHeadParams:
    """Two linear layers over pooled features, 3*emb -> width -> n_out."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    task_kind: str
    p_drop: float = HEAD_DROPOUT

    @property
    def n_out(self) -> int:
        return self.W2.shape[1]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [("head.W1", self.W1), ("head.b1", self.b1),
                ("head.W2", self.W2), ("head.b2", self.b2)]


def init_clf_head(lm_config: LMConfig, n_out: int, task_kind: str,
                  rng: np.random.Generator, *, width: int = HEAD_WIDTH,
                  p_drop: float = HEAD_DROPOUT, dtype=np.float32) -> ClfHeadParams:
    if task_kind not in (BINARY, MULTILABEL):
        raise UsageError(f"unknown task kind {task_kind!r}")
    if task_kind == BINARY and n_out != 2:
        raise UsageError(f"binary head needs 2 outputs, got {n_out}")
    if n_out < 1 or width < 1:
        raise UsageError("head widths must be >= 1")
    if not 0.0 <= p_drop < 1.0:
        raise UsageError(f"p_drop must lie in [0, 1), got {p_drop}")
    d_in = 3 * lm_config.embedding_dim

    def uniform(fan_in, shape):
        s = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-s, s, size=shape).astype(dtype),
                      requires_grad=True)

    return ClfHeadParams(
        W1=uniform(d_in, (d_in, width)),
        b1=Tensor(np.zeros(width, dtype=dtype), requires_grad=True),
        W2=uniform(width, (width, n_out)),
        b2=Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True),
        task_kind=task_kind, p_drop=p_drop)


def head_to_tensors(head: ClfHeadParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in head.named_tensors()}


def head_from_tensors(tensors: dict[str, np.ndarray], task_kind: str,
                      p_drop: float = HEAD_DROPOUT) -> ClfHeadParams:
    """Rebuild a head from checkpoint arrays; missing or malformed
    entries raise CorruptionError."""
    from .errors import CorruptionError

    needed = ("head.W1", "head.b1", "head.W2", "head.b2")
    for name in needed:
        if name not in tensors:
            raise CorruptionError(f"checkpoint is missing tensor {name!r}")
    w1, b1, w2, b2 = (np.asarray(tensors[n]) for n in needed)
    if w1.ndim != 2 or w2.ndim != 2 or b1.shape != (w1.shape[1],) \
            or b2.shape != (w2.shape[1],) or w1.shape[1] != w2.shape[0]:
        raise CorruptionError("classifier head tensors have mismatched shapes")
    return ClfHeadParams(
        W1=Tensor(w1.copy(), requires_grad=True),
        b1=Tensor(b1.copy(), requires_grad=True),
        W2=Tensor(w2.copy(), requires_grad=True),
        b2=Tensor(b2.copy(), requires_grad=True),
        task_kind=task_kind, p_drop=p_drop)


def concat_pool(hidden_seq: Tensor, lengths) -> Tensor:
    """[last valid state; max over valid steps; mean over valid steps].

    ``hidden_seq`` is (time, batch, d); the result is (batch, 3d). PAD
    positions (at or beyond each example's length) contribute nothing.
    """
    if hidden_seq.data.ndim != 3:
        raise ShapeError(f"concat_pool expects (time, batch, d), "
                         f"got {hidden_seq.shape}")
    t, b, _ = hidden_seq.shape
    lengths = np.asarray(lengths)
    if lengths.shape != (b,):
        raise ShapeError(f"lengths {lengths.shape} do not match batch {b}")
    if lengths.size and lengths.min() < 1:
        raise UsageError("every example must have at least one valid token")
    mask = np.arange(t)[:, None] < lengths[None, :]
    last = ad.last_over_time(hidden_seq, lengths)
    mx = ad.max_over_time(hidden_seq, mask)
    mean = ad.mean_over_time(hidden_seq, mask)
    return ad.concat([last, mx, mean], axis=1)


def _head_dropout(x: Tensor, p: float, rng, training: bool) -> Tensor:
    if not training or p == 0.0:
        return x
    mask = rng.random(x.shape) >= p
    return ad.dropout_apply(x, mask, 1.0 - p)


def clf_forward(lm_params: LMParams, lm_config: LMConfig, head: ClfHeadParams,
                token_ids, lengths, mode: str = "eval",
                rng: np.random.Generator | None = None) -> Tensor:
    """Logits (batch, n_out) for a padded (time, batch) token array."""
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be (time, batch), got {ids.shape}")
    if ids.size and int(ids.max()) >= lm_config.vocab_size:
        raise CompatibilityError(
            f"token id {int(ids.max())} exceeds the model vocabulary "
            f"{lm_config.vocab_size}; vocabulary and checkpoint disagree")
    training = mode == "train"
    if training and rng is None:
        raise UsageError("train mode needs an rng for dropout")
    hidden, _ = lm_hidden_sequence(lm_params, lm_config, ids, state=None,
                                   mode=mode, rng=rng)
    pooled = concat_pool(hidden, lengths)
    pooled = _head_dropout(pooled, head.p_drop, rng, training)
    h = ad.relu(pooled @ head.W1 + head.b1)
    h = _head_dropout(h, head.p_drop, rng, training)
    return h @ head.W2 + head.b2


# ---------------------------------------------------------------------------
# encoded datasets and batching


@dataclass(frozen=True)
class EncodedExample:
    ids: np.ndarray
    target: object  # class id (binary) or multi-hot vector (multilabel)


@dataclass(frozen=True)
class EncodedClassificationSet:
    examples: tuple[EncodedExample, ...]
    task_kind: str
    n_out: int
    label_vocabulary: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.examples)


def encode_dataset(ds: LabeledDataset, vocab: UnigramVocab, *,
                   max_len: int = MAX_DOC_TOKENS) -> EncodedClassificationSet:
    """Tokenize with sentence markers and truncate from the document start."""
    if max_len < 2:
        raise UsageError(f"max_len must be >= 2, got {max_len}")
    n_labels = len(ds.label_vocabulary)
    if ds.task_kind == BINARY:
        if n_labels != 2:
            raise UsageError(f"binary dataset needs 2 labels, found {n_labels}")
        n_out = 2
    else:
        n_out = n_labels
    encoded = []
    for ex in ds.examples:
        ids = np.asarray(encode(vocab, ex.text, add_markers=True)[:max_len],
                         dtype=np.int64)
        if ds.task_kind == BINARY:
            target = next(iter(ex.labels))
        else:
            target = np.zeros(n_labels, dtype=np.float32)
            for lid in ex.labels:
                target[lid] = 1.0
        encoded.append(EncodedExample(ids=ids, target=target))
    return EncodedClassificationSet(examples=tuple(encoded),
                                    task_kind=ds.task_kind, n_out=n_out,
                                    label_vocabulary=ds.label_vocabulary)


@dataclass(frozen=True)
class ClfBatch:
    token_ids: np.ndarray  # (time, batch), PAD beyond each length
    lengths: np.ndarray
    targets: np.ndarray
    indices: tuple[int, ...]  # positions in the source dataset

    def __len__(self) -> int:
        return len(self.indices)


def make_clf_batches(dataset: EncodedClassificationSet, batch_size: int,
                     shuffle_rng: np.random.Generator | None = None,
                     ) -> list[ClfBatch]:
    """Length-bucketed, PAD-padded batches.

    Examples are stably sorted by length so each batch pads little;
    ``shuffle_rng`` permutes the batch order only, keeping membership
    deterministic.
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    if not dataset.examples:
        return []
    order = sorted(range(len(dataset)),
                   key=lambda i: (len(dataset.examples[i].ids), i))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        exs = [dataset.examples[i] for i in chunk]
        lengths = np.asarray([len(e.ids) for e in exs], dtype=np.int64)
        t = int(lengths.max())
        ids = np.full((t, len(exs)), PAD_ID, dtype=np.int64)
        for col, e in enumerate(exs):
            ids[:len(e.ids), col] = e.ids
        if dataset.task_kind == BINARY:
            targets = np.asarray([e.target for e in exs], dtype=np.int64)
        else:
            targets = np.stack([e.target for e in exs]).astype(np.float32)
        batches.append(ClfBatch(token_ids=ids, lengths=lengths,
                                targets=targets, indices=tuple(chunk)))
    if shuffle_rng is not None:
        batches = [batches[i] for i in shuffle_rng.permutation(len(batches))]
    return batches


def clf_batch_logits(lm_params: LMParams, lm_config: LMConfig,
                     head: ClfHeadParams, batch: ClfBatch, mode: str = "eval",
                     rng: np.random.Generator | None = None) -> Tensor:
    return clf_forward(lm_params, lm_config, head, batch.token_ids,
                       batch.lengths, mode=mode, rng=rng)


# ---------------------------------------------------------------------------
# prediction


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()

def predict(lm_params: LMParams, lm_config: LMConfig, head: ClfHeadParams,
            vocab: UnigramVocab, texts, *, batch_size: int = 32,
            max_len: int = MAX_DOC_TOKENS) -> list[dict]:
    """Eval-mode predictions in input order.

    Binary: ``class_id`` (argmax, lowest id on ties) and softmax scores.
    Multilabel: label ids ranked by descending score with ascending-id
    tie-break, sigmoid scores, and the 0.5-thresholded ``selected`` set.
    Empty text still predicts, from the bare sentence markers.
    """
    examples = []
    for text in texts:
        ids = np.asarray(encode(vocab, normalize_text(text),
                                add_markers=True)[:max_len], dtype=np.int64)
        examples.append(EncodedExample(ids=ids, target=0))
    dataset = EncodedClassificationSet(
        examples=tuple(examples), task_kind=head.task_kind, n_out=head.n_out,
        label_vocabulary=())
    results: list[dict | None] = [None] * len(examples)
    with ad.no_grad():
        for batch in make_clf_batches(dataset, batch_size):
            logits = clf_batch_logits(lm_params, lm_config, head, batch,
                                      mode="eval")
            for row, idx in enumerate(batch.indices):
                z = logits.data[row]
                if head.task_kind == BINARY:
                    results[idx] = {"class_id": int(z.argmax()),
                                    "scores": _softmax(z).tolist()}
                else:
                    s = _sigmoid(z)
                    ranking = sorted(range(len(s)), key=lambda i: (-s[i], i))
                    results[idx] = {"ranking": ranking,
                                    "scores": s.tolist(),
                                    "selected": sorted(
                                        int(i) for i in np.nonzero(s >= 0.5)[0])}
    return results
