"""Three-layer weight-dropped LSTM language model with a tied decoder.

The model is embeddings with row dropout, three LSTM layers whose
recurrent matrices get DropConnect masks held fixed for a whole
segment, locked dropout between and after layers, and a decoder that
reuses the embedding matrix transposed. The third layer projects back
to the embedding width so tying is possible.

Every dropout site takes its probability from the config; a probability
of zero skips the site entirely, which makes train mode with all-zero
rates bitwise equal to eval mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, UsageError

# Per-site rates at the reference master rate 0.3. A different master
# rate scales all five proportionally.
_REFERENCE_MASTER = 0.3
_SITE_RATES = {"p_out": 0.4, "p_hid": 0.3, "p_emb": 0.1, "p_inp": 0.6,
               "p_wdrop": 0.5}


@dataclass(frozen=True)
class LMConfig:
    """Shapes, dropout rates, and batching geometry of the language model."""

    vocab_size: int = 32000
    embedding_dim: int = 400
    hidden_dim: int = 1152
    n_layers: int = 3
    p_out: float = 0.4
    p_hid: float = 0.3
    p_emb: float = 0.1
    p_inp: float = 0.6
    p_wdrop: float = 0.5
    bptt_len: int = 70
    batch_size: int = 128

    def __post_init__(self):
        if self.n_layers != 3:
            raise UsageError(f"the model is fixed at 3 layers, got {self.n_layers}")
        for name in ("vocab_size", "embedding_dim", "hidden_dim", "bptt_len",
                     "batch_size"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in _SITE_RATES:
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise UsageError(f"{name} must lie in [0, 1), got {p}")

    @classmethod
    def with_master_dropout(cls, master: float, **overrides) -> "LMConfig":
        """Scale the five per-site rates so the inter-layer rate equals ``master``."""
        if not 0.0 <= master < _REFERENCE_MASTER / max(_SITE_RATES.values()):
            limit = _REFERENCE_MASTER / max(_SITE_RATES.values())
            raise UsageError(f"master dropout must lie in [0, {limit}), got {master}")
        rates = {name: rate * master / _REFERENCE_MASTER
                 for name, rate in _SITE_RATES.items()}
        return cls(**rates, **overrides)

    @property
    def layer_input_dims(self) -> tuple[int, int, int]:
        return (self.embedding_dim, self.hidden_dim, self.hidden_dim)

    @property
    def layer_hidden_dims(self) -> tuple[int, int, int]:
        # the last layer emits embedding_dim so the decoder can tie to E
        return (self.hidden_dim, self.hidden_dim, self.embedding_dim)

    def dropout_rates(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in sorted(_SITE_RATES)}


@dataclass(frozen=True)
class LSTMLayerParams:
    W: Tensor
    U: Tensor
    b: Tensor


@dataclass(frozen=True)
class LMParams:
    """All trainable tensors. The decoder weight IS ``embedding`` (tied)."""

    embedding: Tensor
    layers: tuple[LSTMLayerParams, ...]
    decoder_bias: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("embedding", self.embedding)]
        for i, layer in enumerate(self.layers, start=1):
            out += [(f"lstm{i}.W", layer.W), (f"lstm{i}.U", layer.U),
                    (f"lstm{i}.b", layer.b)]
        out.append(("decoder.bias", self.decoder_bias))
        return out


def init_lm_params(config: LMConfig, rng: np.random.Generator,
                   dtype=np.float32) -> LMParams:
    """Fresh parameters: uniform embeddings and LSTM weights, forget bias 1."""

    def uniform(lo, hi, shape):
        return Tensor(rng.uniform(lo, hi, size=shape).astype(dtype),
                      requires_grad=True)

    emb = uniform(-0.1, 0.1, (config.vocab_size, config.embedding_dim))
    layers = []
    for d_in, d_hid in zip(config.layer_input_dims, config.layer_hidden_dims):
        s = 1.0 / math.sqrt(d_hid)
        w = uniform(-s, s, (d_in, 4 * d_hid))
        u = uniform(-s, s, (d_hid, 4 * d_hid))
        b = np.zeros(4 * d_hid, dtype=dtype)
        b[d_hid:2 * d_hid] = 1.0
        layers.append(LSTMLayerParams(W=w, U=u, b=Tensor(b, requires_grad=True)))
    dec_b = Tensor(np.zeros(config.vocab_size, dtype=dtype), requires_grad=True)
    return LMParams(embedding=emb, layers=tuple(layers), decoder_bias=dec_b)


@dataclass(frozen=True)
class HiddenState:
    """Per-layer (h, c) carried between segments as plain arrays.

    Holding raw arrays rather than graph nodes is what detaches one
    segment from the next.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    @classmethod
    def zeros(cls, config: LMConfig, batch: int, dtype=np.float32) -> "HiddenState":
        return cls(layers=tuple(
            (np.zeros((batch, d), dtype=dtype), np.zeros((batch, d), dtype=dtype))
            for d in config.layer_hidden_dims))


def weight_drop(U: Tensor, p_wdrop: float, rng: np.random.Generator | None, *,
                training: bool = True) -> Tensor:
    """DropConnect on the recurrent matrix: one element mask per segment."""
    if not training or p_wdrop == 0.0:
        return U
    if not 0.0 <= p_wdrop < 1.0:
        raise UsageError(f"p_wdrop must lie in [0, 1), got {p_wdrop}")
    mask = rng.random(U.shape) >= p_wdrop
    return ad.dropout_apply(U, mask, 1.0 - p_wdrop)


def locked_dropout(x_seq: Tensor, p: float, rng: np.random.Generator | None, *,
                   training: bool = True) -> Tensor:
    """One (batch, features) mask applied at every time step."""
    if x_seq.data.ndim != 3:
        raise ShapeError(
            f"locked_dropout expects (time, batch, features), got {x_seq.shape}")
    if not training or p == 0.0:
        return x_seq
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout probability must lie in [0, 1), got {p}")
    mask = rng.random(x_seq.shape[1:]) >= p
    return ad.dropout_apply(x_seq, mask, 1.0 - p)


def embedding_dropout(E: Tensor, p_emb: float, rng: np.random.Generator | None, *,
                      training: bool = True) -> Tensor:
    """Zero whole embedding rows, once per batch, scaling survivors."""
    if not training or p_emb == 0.0:
        return E
    if not 0.0 <= p_emb < 1.0:
        raise UsageError(f"p_emb must lie in [0, 1), got {p_emb}")
    mask = rng.random((E.shape[0], 1)) >= p_emb
    return ad.dropout_apply(E, mask, 1.0 - p_emb)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, U_dropped: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """One step of the gate equations; gates stacked [i, f, g, o]."""
    pre = x @ W + h @ U_dropped + b
    n_hidden = h.shape[1]
    if pre.shape[1] != 4 * n_hidden:
        raise ShapeError(
            f"lstm_cell: pre-activation width {pre.shape[1]} "
            f"does not match 4 x hidden {n_hidden}")
    i = ad.sigmoid(ad.slice_axis(pre, 1, 0, n_hidden))
    f = ad.sigmoid(ad.slice_axis(pre, 1, n_hidden, 2 * n_hidden))
    g = ad.tanh(ad.slice_axis(pre, 1, 2 * n_hidden, 3 * n_hidden))
    o = ad.sigmoid(ad.slice_axis(pre, 1, 3 * n_hidden, 4 * n_hidden))
    c2 = f * c + i * g
    h2 = o * ad.tanh(c2)
    return h2, c2


def _needs_rng(config: LMConfig) -> bool:
    return any(getattr(config, name) > 0.0 for name in _SITE_RATES)


def lm_hidden_sequence(params: LMParams, config: LMConfig, token_ids,
                       state: HiddenState | None = None, mode: str = "train",
                       rng: np.random.Generator | None = None,
                       ) -> tuple[Tensor, HiddenState]:
    """Pipeline up to the dropped top-layer output, (time, batch, emb).

    Also returns the final hidden state, already detached for the next
    segment. The classifier consumes this directly; the decoder sits on
    top of it in :func:`lm_forward`.
    """
    if mode not in ("train", "eval"):
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if training and rng is None and _needs_rng(config):
        raise UsageError("train mode with nonzero dropout needs an rng")
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be (time, batch), got {ids.shape}")
    n_time, n_batch = ids.shape
    dtype = params.embedding.data.dtype
    if state is None:
        state = HiddenState.zeros(config, n_batch, dtype=dtype)
    for d, (h0, c0) in zip(config.layer_hidden_dims, state.layers):
        if h0.shape != (n_batch, d) or c0.shape != (n_batch, d):
            raise ShapeError(
                f"hidden state {h0.shape} does not match batch {n_batch}, width {d}")

    E = params.embedding
    x = ad.embedding_lookup(embedding_dropout(E, config.p_emb, rng,
                                              training=training), ids)
    x = locked_dropout(x, config.p_inp, rng, training=training)
    final: list[tuple[np.ndarray, np.ndarray]] = []
    for idx, layer in enumerate(params.layers):
        u_dropped = weight_drop(layer.U, config.p_wdrop, rng, training=training)
        h = Tensor(state.layers[idx][0])
        c = Tensor(state.layers[idx][1])
        steps = []
        for t in range(n_time):
            h, c = lstm_cell(ad.index_axis(x, 0, t), h, c, layer.W, u_dropped,
                             layer.b)
            steps.append(h)
        x = ad.stack(steps, axis=0)
        final.append((h.data.copy(), c.data.copy()))
        if idx < len(params.layers) - 1:
            x = locked_dropout(x, config.p_hid, rng, training=training)
    out = locked_dropout(x, config.p_out, rng, training=training)
    return out, HiddenState(layers=tuple(final))


def lm_forward(params: LMParams, config: LMConfig, token_ids,
               state: HiddenState | None = None, mode: str = "train",
               rng: np.random.Generator | None = None,
               ) -> tuple[Tensor, HiddenState]:
    """Run the full pipeline over a (time, batch) id array.

    Returns logits of shape (time, batch, vocab) and the final hidden
    state, already detached for the next segment.
    """
    out, new_state = lm_hidden_sequence(params, config, token_ids, state,
                                        mode, rng)
    # decoder reuses the raw embedding storage; no copy is made
    logits = ad.matmul(out, ad.transpose(params.embedding)) + params.decoder_bias
    return logits, new_state


def perplexity(params: LMParams, config: LMConfig, stream) -> float:
    """exp(mean next-token cross-entropy) over a token stream, eval mode.

    The stream is reshaped into at most ``config.batch_size`` parallel
    streams, fewer when it is short.
    """
    from .training import bptt_batches

    stream = np.asarray(stream, dtype=np.int64)
    if stream.ndim != 1 or stream.size < 2:
        raise UsageError("perplexity needs a 1-D stream of at least 2 tokens")
    n_batch = max(1, min(config.batch_size, stream.size // 2))
    dtype = params.embedding.data.dtype
    state = HiddenState.zeros(config, n_batch, dtype=dtype)
    total_nll = 0.0
    total_targets = 0
    with ad.no_grad():
        for inputs, targets in bptt_batches(stream, n_batch, config.bptt_len):
            logits, state = lm_forward(params, config, inputs, state, mode="eval")
            loss = ad.cross_entropy(logits, targets)
            total_nll += float(loss.data) * targets.size
            total_targets += targets.size
    return math.exp(total_nll / total_targets)


def lm_config_with_dims(config: LMConfig, vocab_size: int) -> LMConfig:
    """Copy of ``config`` bound to a tokenizer's vocabulary size."""
    return replace(config, vocab_size=vocab_size)
