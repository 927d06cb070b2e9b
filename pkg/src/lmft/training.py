"""Optimizer and training loops.

The optimizer is rectified Adam combined with Lookahead slow weights.
One call to :func:`radam_step` advances the shared step counter once and
updates every parameter it is given; :func:`lookahead_sync` then
interpolates toward the slow weights on every k-th step. Parameters a
caller leaves out of a step (frozen groups) keep their moments, slow
weights, and values bitwise unchanged.

The three loops share one epoch skeleton: forward, loss, backward, clip
to a global norm, step, sync. A non-finite loss or gradient aborts the
run after restoring the last epoch-end snapshot, so the caller is left
with the last good parameters.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .awd_lstm import HiddenState, LMConfig, LMParams, lm_forward, perplexity
from .errors import NumericalFault, ShapeError, UsageError

BETA1 = 0.95
BETA2 = 0.999
EPSILON = 1e-5
LOOKAHEAD_K = 6
LOOKAHEAD_ALPHA = 0.5
CLIP_NORM = 0.25
DISCRIMINATIVE_FACTOR = 2.6

PRETRAIN = "pretrain"
LM_FINETUNE = "lm_finetune"
CLF_FINETUNE = "clf_finetune"
_STAGES = (PRETRAIN, LM_FINETUNE, CLF_FINETUNE)


@dataclass(frozen=True)
class TrainRunConfig:
    stage: str
    epochs: int
    base_lr: float
    batch_size: int
    bptt_len: int
    seed: int
    discriminative_factor: float = DISCRIMINATIVE_FACTOR
    clip_norm: float = CLIP_NORM

    def __post_init__(self):
        if self.stage not in _STAGES:
            raise UsageError(f"stage must be one of {_STAGES}, got {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.bptt_len < 1:
            raise UsageError("epochs, batch_size, and bptt_len must be >= 1")
        if self.base_lr <= 0:
            raise UsageError(f"base_lr must be positive, got {self.base_lr}")
        if self.discriminative_factor < 1.0:
            raise UsageError("discriminative_factor must be >= 1")


def default_run_config(stage: str, seed: int = 0, **overrides) -> TrainRunConfig:
    """Stage defaults: LM stages 10 epochs at lr 0.001 with batch 128,
    the classifier stage 5 epochs at lr 0.05."""
    if stage in (PRETRAIN, LM_FINETUNE):
        base = dict(stage=stage, epochs=10, base_lr=0.001, batch_size=128,
                    bptt_len=70, seed=seed)
    elif stage == CLF_FINETUNE:
        base = dict(stage=stage, epochs=5, base_lr=0.05, batch_size=32,
                    bptt_len=70, seed=seed)
    else:
        raise UsageError(f"stage must be one of {_STAGES}, got {stage!r}")
    base.update(overrides)
    return TrainRunConfig(**base)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class ParamSlot:
    m: np.ndarray
    v: np.ndarray
    slow: np.ndarray


@dataclass
class OptimizerState:
    base_lr: float
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON
    lookahead_k: int = LOOKAHEAD_K
    lookahead_alpha: float = LOOKAHEAD_ALPHA
    t: int = 0
    slots: dict[str, ParamSlot] = field(default_factory=dict)


def init_optimizer(named_params, base_lr: float, *, beta1: float = BETA1,
                   beta2: float = BETA2, eps: float = EPSILON,
                   lookahead_k: int = LOOKAHEAD_K,
                   lookahead_alpha: float = LOOKAHEAD_ALPHA) -> OptimizerState:
    """Allocate moments and slow weights for every named parameter."""
    state = OptimizerState(base_lr=base_lr, beta1=beta1, beta2=beta2, eps=eps,
                           lookahead_k=lookahead_k, lookahead_alpha=lookahead_alpha)
    for name, tensor in named_params:
        if name in state.slots:
            raise UsageError(f"duplicate parameter name {name!r}")
        state.slots[name] = ParamSlot(m=np.zeros_like(tensor.data),
                                      v=np.zeros_like(tensor.data),
                                      slow=tensor.data.copy())
    return state


def radam_step(state: OptimizerState, params, grads=None, lrs=None) -> None:
    """One rectified-Adam update of the given parameters, in place.

    ``params`` is a list of (name, tensor) pairs; ``grads`` defaults to
    each tensor's accumulated gradient, ``lrs`` to the base rate. A
    non-finite gradient refuses the whole step before any state changes.
    """
    if grads is None:
        grads = []
        for name, tensor in params:
            if tensor.grad is None:
                raise UsageError(f"parameter {name!r} has no gradient")
            grads.append(tensor.grad)
    if lrs is None:
        lrs = [state.base_lr] * len(params)
    if not len(params) == len(grads) == len(lrs):
        raise UsageError("params, grads, and lrs must align")
    for (name, tensor), g in zip(params, grads):
        if np.asarray(g).shape != tensor.data.shape:
            raise ShapeError(f"gradient shape {np.asarray(g).shape} does not "
                             f"match parameter {name!r} {tensor.data.shape}")
        if not np.isfinite(g).all():
            raise NumericalFault(
                f"non-finite gradient in {name!r} at step {state.t + 1}")

    state.t += 1
    t = state.t
    beta1, beta2 = state.beta1, state.beta2
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho_t = rho_inf - 2.0 * t * (beta2 ** t) / bc2
    if rho_t > 4.0:
        rect = math.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                         / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
    else:
        rect = None
    for (name, tensor), g, lr in zip(params, grads, lrs):
        slot = state.slots[name]
        slot.m *= beta1
        slot.m += (1.0 - beta1) * g
        slot.v *= beta2
        slot.v += (1.0 - beta2) * (g * g)
        m_hat = slot.m / bc1
        if rect is None:
            # variance not yet tractable: plain bias-corrected momentum
            update = lr * m_hat
        else:
            v_hat = slot.v / bc2
            update = (lr * rect) * m_hat / (np.sqrt(v_hat) + state.eps)
        tensor.data -= update


def lookahead_sync(state: OptimizerState, params) -> None:
    """Every k-th step, pull slow weights toward fast and reset fast."""
    if state.t == 0 or state.t % state.lookahead_k != 0:
        return
    alpha = state.lookahead_alpha
    for name, tensor in params:
        slot = state.slots[name]
        slot.slow += alpha * (tensor.data - slot.slow)
        tensor.data[...] = slot.slow


def clip_global_norm(tensors, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise UsageError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad *= t.grad.dtype.type(scale)
    return norm


# ---------------------------------------------------------------------------
# layer groups, freezing, discriminative rates


@dataclass
class ParamGroup:
    name: str
    named: list[tuple[str, Tensor]]
    lr: float = 0.0
    frozen: bool = False


@dataclass
class LayerGroups:
    """Ordered bottom-up partition of all trainable parameters.

    The last group is the top; unfreezing and learning-rate decay both
    count from there.
    """

    groups: list[ParamGroup]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [pair for g in self.groups for pair in g.named]

    def trainable(self) -> list[tuple[str, Tensor, float]]:
        return [(name, tensor, g.lr) for g in self.groups if not g.frozen
                for name, tensor in g.named]

    def set_flat_lr(self, base_lr: float) -> None:
        for g in self.groups:
            g.lr = base_lr

    def set_discriminative(self, base_lr: float, factor: float) -> None:
        """Group at depth d below the top runs at base_lr / factor**d."""
        top = len(self.groups) - 1
        for i, g in enumerate(self.groups):
            g.lr = base_lr / factor ** (top - i)

    def unfreeze_top(self, n: int) -> None:
        """Exactly the top ``n`` groups train; the rest are frozen.

        Frozen tensors stop requiring gradients and keep a zero gradient
        buffer, so their gradient reads as identically zero.
        """
        top = len(self.groups) - 1
        for i, g in enumerate(self.groups):
            g.frozen = (top - i) >= n
            for _, tensor in g.named:
                tensor.requires_grad = not g.frozen
                tensor.grad = np.zeros_like(tensor.data)


def lm_layer_groups(params: LMParams) -> LayerGroups:
    """[embedding, lstm1, lstm2, lstm3]; the tied decoder bias travels
    with the embedding group."""
    emb = [("embedding", params.embedding), ("decoder.bias", params.decoder_bias)]
    groups = [ParamGroup(name="embedding", named=emb)]
    for i, layer in enumerate(params.layers, start=1):
        groups.append(ParamGroup(
            name=f"lstm{i}",
            named=[(f"lstm{i}.W", layer.W), (f"lstm{i}.U", layer.U),
                   (f"lstm{i}.b", layer.b)]))
    return LayerGroups(groups=groups)


def clf_layer_groups(params: LMParams, head) -> LayerGroups:
    """LM groups plus the classifier head on top."""
    groups = lm_layer_groups(params)
    groups.groups.append(ParamGroup(name="head", named=head.named_tensors()))
    return groups


# ---------------------------------------------------------------------------
# LM batching


def bptt_batches(stream, batch_size: int, bptt_len: int):
    """Cut a token stream into truncated-backprop segments.

    The stream becomes ``batch_size`` parallel columns (remainder tokens
    dropped); each segment pairs ``bptt_len`` input rows with the rows
    shifted by one, and a shorter final segment is kept. Total target
    count is batch_size * (rows - 1).
    """
    stream = np.asarray(stream)
    if stream.ndim != 1:
        raise ShapeError(f"token stream must be 1-D, got shape {stream.shape}")
    if batch_size < 1 or bptt_len < 1:
        raise UsageError("batch_size and bptt_len must be >= 1")
    if stream.size < batch_size * 2:
        raise UsageError(
            f"stream of {stream.size} tokens is too short for batch size "
            f"{batch_size}; need at least {batch_size * 2}")
    rows = stream.size // batch_size
    data = stream[:rows * batch_size].reshape(batch_size, rows).T
    segments = []
    for start in range(0, rows - 1, bptt_len):
        stop = min(start + bptt_len, rows - 1)
        segments.append((data[start:stop], data[start + 1:stop + 1]))
    return segments


# ---------------------------------------------------------------------------
# shared loop plumbing


def _snapshot(named) -> dict[str, np.ndarray]:
    return {name: tensor.data.copy() for name, tensor in named}


def _restore(named, snap: dict[str, np.ndarray]) -> None:
    for name, tensor in named:
        tensor.data[...] = snap[name]


def _zero_grads(trainable) -> None:
    for _, tensor, _ in trainable:
        tensor.zero_grad()


def _checked_loss(loss, named, snap, where: str) -> None:
    if ad.has_fault(loss):
        _restore(named, snap)
        raise NumericalFault(f"non-finite loss at {where}; "
                            f"parameters restored to the last epoch end")


def _step(opt, groups, clip_norm: float, named, snap, where: str) -> None:
    trainable = groups.trainable()
    clip_global_norm([t for _, t, _ in trainable], clip_norm)
    try:
        radam_step(opt, [(n, t) for n, t, _ in trainable],
                   lrs=[lr for _, _, lr in trainable])
    except NumericalFault as e:
        _restore(named, snap)
        raise NumericalFault(f"{e} at {where}; "
                            f"parameters restored to the last epoch end") from e
    lookahead_sync(opt, [(n, t) for n, t, _ in trainable])


def _split_validation(stream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Default LM validation split: the trailing 5% of the stream."""
    n_valid = max(stream.size // 20, 2)
    return stream[:-n_valid], stream[-n_valid:]


def _run_lm_stage(params: LMParams, lm_config: LMConfig, stream,
                  run_cfg: TrainRunConfig, groups: LayerGroups,
                  valid_stream=None, on_epoch_end=None):
    stream = np.asarray(stream, dtype=np.int64)
    if valid_stream is None:
        stream, valid_stream = _split_validation(stream)
    else:
        valid_stream = np.asarray(valid_stream, dtype=np.int64)
    lm_config = replace(lm_config, batch_size=run_cfg.batch_size,
                        bptt_len=run_cfg.bptt_len)
    named = params.named_tensors()
    opt = init_optimizer(named, run_cfg.base_lr)
    rng = np.random.default_rng(run_cfg.seed)
    dtype = params.embedding.data.dtype

    snap = _snapshot(named)
    baseline = perplexity(params, lm_config, valid_stream)
    log = {"stage": run_cfg.stage, "untrained_val_perplexity": baseline,
           "epochs": [], "best_epoch": 0, "best_val_perplexity": baseline}
    best_snap = snap

    for epoch in range(1, run_cfg.epochs + 1):
        t0 = time.perf_counter()
        state = HiddenState.zeros(lm_config, run_cfg.batch_size, dtype=dtype)
        total_nll = 0.0
        total_n = 0
        for i, (inputs, targets) in enumerate(
                bptt_batches(stream, run_cfg.batch_size, run_cfg.bptt_len)):
            _zero_grads(groups.trainable())
            logits, state = lm_forward(params, lm_config, inputs, state,
                                       mode="train", rng=rng)
            loss = ad.cross_entropy(logits, targets)
            where = f"epoch {epoch} segment {i}"
            _checked_loss(loss, named, snap, where)
            ad.backward(loss)
            _step(opt, groups, run_cfg.clip_norm, named, snap, where)
            total_nll += loss.item() * targets.size
            total_n += targets.size
        val_ppl = perplexity(params, lm_config, valid_stream)
        snap = _snapshot(named)
        entry = {"epoch": epoch, "train_loss": total_nll / total_n,
                 "train_perplexity": math.exp(total_nll / total_n),
                 "val_perplexity": val_ppl,
                 "seconds": time.perf_counter() - t0}
        log["epochs"].append(entry)
        if val_ppl < log["best_val_perplexity"]:
            log["best_epoch"] = epoch
            log["best_val_perplexity"] = val_ppl
            best_snap = snap
        if on_epoch_end is not None:
            on_epoch_end(epoch, params, entry)
    _restore(named, best_snap)
    return log


def lm_pretrain(params: LMParams, lm_config: LMConfig, stream,
                run_cfg: TrainRunConfig, valid_stream=None, on_epoch_end=None):
    """Language-model training on a token stream with a flat learning rate.

    Logs per-epoch validation perplexity and leaves ``params`` at the
    best-validation epoch. Without an explicit validation stream the
    trailing 5% of ``stream`` is held out.
    """
    groups = lm_layer_groups(params)
    groups.set_flat_lr(run_cfg.base_lr)
    groups.unfreeze_top(len(groups.groups))
    return _run_lm_stage(params, lm_config, stream, run_cfg, groups,
                         valid_stream, on_epoch_end)


def lm_finetune(params: LMParams, lm_config: LMConfig, stream,
                run_cfg: TrainRunConfig, valid_stream=None, on_epoch_end=None):
    """Same loop as pretraining, with geometrically decaying per-group rates.

    The group at depth d below the top LSTM layer runs at
    base_lr / factor**d.
    """
    groups = lm_layer_groups(params)
    groups.set_discriminative(run_cfg.base_lr, run_cfg.discriminative_factor)
    groups.unfreeze_top(len(groups.groups))
    return _run_lm_stage(params, lm_config, stream, run_cfg, groups,
                         valid_stream, on_epoch_end)


def clf_train(lm_params: LMParams, lm_config: LMConfig, head, train_set,
              run_cfg: TrainRunConfig, valid_set=None, on_epoch_end=None):
    """Gradual-unfreezing classifier training.

    Epoch e trains exactly the top min(e, 5) groups, head first, with
    discriminative rates over the unfrozen groups. Model selection uses
    the validation task metric (positive-class F1 for binary tasks,
    ranking gain for multilabel); without a validation set the final
    epoch wins.
    """
    from . import metrics as met
    from .classifier import clf_batch_logits, make_clf_batches

    if train_set.task_kind != head.task_kind:
        raise UsageError(
            f"dataset task {train_set.task_kind!r} does not match "
            f"head task {head.task_kind!r}")
    if head.n_out != train_set.n_out:
        raise UsageError(
            f"head emits {head.n_out} outputs but the dataset has "
            f"{train_set.n_out}")
    groups = clf_layer_groups(lm_params, head)
    named = groups.named_parameters()
    opt = init_optimizer(named, run_cfg.base_lr)
    rng = np.random.default_rng(run_cfg.seed)

    snap = _snapshot(named)
    best_snap = snap
    log = {"stage": run_cfg.stage, "epochs": [], "best_epoch": 0,
           "best_val_metric": -math.inf}

    for epoch in range(1, run_cfg.epochs + 1):
        t0 = time.perf_counter()
        n_unfrozen = min(epoch, len(groups.groups))
        groups.unfreeze_top(n_unfrozen)
        groups.set_discriminative(run_cfg.base_lr, run_cfg.discriminative_factor)
        order_rng = np.random.default_rng([run_cfg.seed, epoch])
        total_loss = 0.0
        n_examples = 0
        n_correct = 0
        for i, batch in enumerate(make_clf_batches(
                train_set, run_cfg.batch_size, shuffle_rng=order_rng)):
            _zero_grads(groups.trainable())
            logits = clf_batch_logits(lm_params, lm_config, head, batch,
                                      mode="train", rng=rng)
            if head.task_kind == "binary":
                loss = ad.cross_entropy(logits, batch.targets)
                n_correct += int((logits.data.argmax(axis=1) == batch.targets).sum())
            else:
                loss = ad.binary_cross_entropy_with_logits(logits, batch.targets)
            where = f"epoch {epoch} batch {i}"
            _checked_loss(loss, named, snap, where)
            ad.backward(loss)
            _step(opt, groups, run_cfg.clip_norm, named, snap, where)
            total_loss += loss.item() * len(batch)
            n_examples += len(batch)
        entry = {"epoch": epoch, "train_loss": total_loss / n_examples,
                 "n_unfrozen_groups": n_unfrozen,
                 "group_lrs": {g.name: (0.0 if g.frozen else g.lr)
                               for g in groups.groups},
                 "seconds": time.perf_counter() - t0}
        if head.task_kind == "binary":
            entry["train_accuracy"] = n_correct / n_examples
        if valid_set is not None:
            preds, scores, gold = _clf_validate(lm_params, lm_config, head,
                                                valid_set, run_cfg.batch_size)
            if head.task_kind == "binary":
                entry["val_pos_f1"] = met.binary_f1(preds, gold, positive_class=1)
                metric = entry["val_pos_f1"]
            else:
                entry["val_ndcg5"] = met.ndcg_at_k(scores, gold, k=5)
                metric = entry["val_ndcg5"]
        else:
            metric = float(epoch)  # no held-out data: keep the last epoch
        snap = _snapshot(named)
        log["epochs"].append(entry)
        if metric > log["best_val_metric"]:
            log["best_epoch"] = epoch
            log["best_val_metric"] = metric
            best_snap = snap
        if on_epoch_end is not None:
            on_epoch_end(epoch, lm_params, entry)
    _restore(named, best_snap)
    return log


def _clf_validate(lm_params, lm_config, head, dataset, batch_size):
    """Eval-mode pass: predictions, per-example scores, and gold targets."""
    from .classifier import clf_batch_logits, make_clf_batches

    preds = [None] * len(dataset)
    scores = [None] * len(dataset)
    gold = [None] * len(dataset)
    with ad.no_grad():
        for batch in make_clf_batches(dataset, batch_size, shuffle_rng=None):
            logits = clf_batch_logits(lm_params, lm_config, head, batch,
                                      mode="eval")
            for row, idx in enumerate(batch.indices):
                if head.task_kind == "binary":
                    preds[idx] = int(logits.data[row].argmax())
                    scores[idx] = logits.data[row].copy()
                    gold[idx] = int(batch.targets[row])
                else:
                    z = logits.data[row]
                    s = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
                    scores[idx] = s
                    preds[idx] = {int(i) for i in np.nonzero(s >= 0.5)[0]}
                    gold[idx] = {int(i) for i in np.nonzero(batch.targets[row])[0]}
    return preds, scores, gold
