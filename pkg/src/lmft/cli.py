"""Command-line pipeline driver.

Six subcommands cover the full workflow: ``tok-train``,
``lm-pretrain``, ``lm-finetune``, ``clf-train``, ``predict``, and
``evaluate``. Values resolve as flag > config file > documented
default, and every run writes a ``<out>.manifest.json`` recording the
resolved configuration, input digests, per-epoch metrics, and wall
clock timings; the manifest is rewritten atomically after each epoch.

Config files are INI-style with [tokenizer], [lm], [training], and
[classifier] sections.

Exit codes: 0 success, 2 usage, 3 data or compatibility, 4 numerical.
"""

from __future__ import annotations

import argparse
import configparser
import json
import re
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import figures
from .awd_lstm import LMConfig, init_lm_params
from .classifier import (HEAD_DROPOUT, MAX_DOC_TOKENS, encode_dataset,
                         head_from_tensors, head_to_tensors, init_clf_head,
                         predict as predict_texts)
from .corpus import (BINARY, MULTILABEL, filter_frequent_labels,
                     load_classification_dataset, load_lm_corpus,
                     normalize_text, split_dataset)
from .errors import (CompatibilityError, DataError, NumericalFault,
                     ToolkitError, UsageError)
from .metrics import ConfusionCounts, binary_f1, mean_f1, ndcg_at_k
from .persistence import (Checkpoint, _atomic_write, file_digest,
                          load_checkpoint, load_vocab, lm_params_from_tensors,
                          lm_params_to_tensors, save_checkpoint, save_vocab,
                          write_json_atomic)
from .tokenizer import (DEFAULT_CHARACTER_COVERAGE, DEFAULT_EM_ITERS_PER_ROUND,
                        DEFAULT_MAX_PIECE_LEN, DEFAULT_SEED_FACTOR,
                        DEFAULT_SHRINK_FACTOR, DEFAULT_TARGET_SIZE, encode,
                        train_unigram)
from .training import (BETA1, BETA2, CLF_FINETUNE, CLIP_NORM,
                       DISCRIMINATIVE_FACTOR, EPSILON, LM_FINETUNE,
                       LOOKAHEAD_ALPHA, LOOKAHEAD_K, PRETRAIN, clf_train,
                       default_run_config, lm_finetune, lm_pretrain)

_METRIC_RE = re.compile(r"^ndcg@(\d+)$")


# ---------------------------------------------------------------------------
# config resolution


def _read_config(path):
    if path is None:
        return None
    cp = configparser.ConfigParser()
    try:
        loaded = cp.read(path)
    except configparser.Error as e:
        raise UsageError(f"config file {path} is malformed: {e}") from e
    if not loaded:
        raise UsageError(f"config file {path} does not exist")
    return cp


def _resolve(flag, cfg, section: str, key: str, cast, default):
    """flag > config file > default; the winning value is returned."""
    if flag is not None:
        return flag
    if cfg is not None and cfg.has_option(section, key):
        raw = cfg.get(section, key)
        try:
            return cast(raw)
        except ValueError as e:
            raise UsageError(
                f"config value [{section}] {key} = {raw!r} is not "
                f"a valid {cast.__name__}") from e
    return default


def _ledger_constants() -> dict:
    """Fixed algorithm constants, recorded in every manifest."""
    return {
        "optimizer": {"beta1": BETA1, "beta2": BETA2, "epsilon": EPSILON,
                      "lookahead_k": LOOKAHEAD_K,
                      "lookahead_alpha": LOOKAHEAD_ALPHA,
                      "clip_norm": CLIP_NORM,
                      "discriminative_factor": DISCRIMINATIVE_FACTOR},
        "tokenizer": {"seed_factor": DEFAULT_SEED_FACTOR,
                      "shrink_factor": DEFAULT_SHRINK_FACTOR,
                      "em_iters_per_round": DEFAULT_EM_ITERS_PER_ROUND,
                      "max_piece_len": DEFAULT_MAX_PIECE_LEN,
                      "character_coverage": DEFAULT_CHARACTER_COVERAGE},
        "classifier": {"head_dropout": HEAD_DROPOUT,
                       "max_doc_tokens": MAX_DOC_TOKENS},
    }


# ---------------------------------------------------------------------------
# manifests


class _Manifest:
    """Accumulates run metadata; rewritten atomically at every update."""

    def __init__(self, command: str, out_path, config: dict, seed,
                 inputs: dict[str, str]):
        self.path = str(out_path) + ".manifest.json"
        self.data = {
            "command": command,
            "config": config,
            "constants": _ledger_constants(),
            "seed": seed,
            "inputs": inputs,
            "epochs": [],
            "timings": {},
            "outputs": {},
        }
        self._t0 = time.perf_counter()
        self.write()

    def write(self) -> None:
        write_json_atomic(self.path, self.data)

    def add_epoch(self, entry: dict) -> None:
        self.data["epochs"].append(entry)
        self.write()

    def finish(self, outputs: dict, summary: dict | None = None) -> None:
        self.data["outputs"] = outputs
        self.data["timings"]["total_seconds"] = time.perf_counter() - self._t0
        if summary:
            self.data["summary"] = summary
        self.write()


def _digests(paths) -> dict[str, str]:
    return {str(p): file_digest(p) for p in paths}


def _write_text_atomic(path, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# shared loading helpers


def _encode_stream(vocab, documents) -> np.ndarray:
    """Concatenate per-document encodings, each wrapped in markers."""
    ids: list[int] = []
    for doc in documents:
        ids.extend(encode(vocab, doc, add_markers=True))
    if not ids:
        raise DataError("the corpus encodes to an empty token stream")
    return np.asarray(ids, dtype=np.int64)


def _read_target_texts(path) -> list[str]:
    """Texts for LM fine-tuning, from JSON-lines or plain lines."""
    try:
        content = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"{path} is not valid UTF-8 at byte {e.start}") from e
    lines = [ln for ln in content.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path} contains no text")
    if lines[0].lstrip().startswith("{"):
        texts = []
        for lineno, ln in enumerate(lines, start=1):
            try:
                rec = json.loads(ln)
                texts.append(rec["text"])
            except (ValueError, TypeError, KeyError) as e:
                raise DataError(
                    f"{path}:{lineno}: expected a JSON object with a "
                    f"'text' field: {e}") from e
        return [normalize_text(t) for t in texts]
    return [normalize_text(ln) for ln in lines]


def _load_clf_checkpoint(ckpt_path, vocab_path):
    """Checkpoint + vocabulary + rebuilt head, with the hash check."""
    ckpt = load_checkpoint(ckpt_path)
    ckpt.require_vocab(file_digest(vocab_path))
    vocab, _ = load_vocab(vocab_path)
    if "head.W1" not in ckpt.tensors:
        raise UsageError(
            f"checkpoint {ckpt_path} has no classifier head; run clf-train first")
    task = ckpt.meta.get("task_kind")
    if task not in (BINARY, MULTILABEL):
        raise UsageError(f"checkpoint {ckpt_path} records no task kind")
    params = lm_params_from_tensors(ckpt.lm_config, ckpt.tensors)
    head = head_from_tensors(ckpt.tensors, task,
                             p_drop=float(ckpt.meta.get("head_p_drop",
                                                        HEAD_DROPOUT)))
    return ckpt, vocab, params, head


def _gold_by_checkpoint_labels(ds, label_vocabulary) -> list[set[int]]:
    """Map a dataset's first-seen label ids onto the checkpoint's."""
    index = {name: i for i, name in enumerate(label_vocabulary)}
    gold = []
    for ex in ds.examples:
        ids = set()
        for lid in ex.labels:
            name = ds.label_vocabulary[lid]
            if name not in index:
                raise DataError(
                    f"label {name!r} does not exist in the model's label set")
            ids.add(index[name])
        gold.append(ids)
    return gold


# ---------------------------------------------------------------------------
# commands


def _cmd_tok_train(args) -> int:
    cfg = _read_config(args.config)
    resolved = {
        "vocab_size": _resolve(args.vocab_size, cfg, "tokenizer", "vocab_size",
                               int, DEFAULT_TARGET_SIZE),
        "max_piece_len": _resolve(args.max_piece_len, cfg, "tokenizer",
                                  "max_piece_len", int, DEFAULT_MAX_PIECE_LEN),
        "character_coverage": _resolve(args.coverage, cfg, "tokenizer",
                                       "character_coverage", float,
                                       DEFAULT_CHARACTER_COVERAGE),
        "seed_size": _resolve(args.seed_size, cfg, "tokenizer", "seed_size",
                              int, None),
        "shrink_factor": _resolve(args.shrink_factor, cfg, "tokenizer",
                                  "shrink_factor", float,
                                  DEFAULT_SHRINK_FACTOR),
        "em_iters": _resolve(args.em_iters, cfg, "tokenizer", "em_iters", int,
                             DEFAULT_EM_ITERS_PER_ROUND),
    }
    manifest = _Manifest("tok-train", args.out, resolved, None,
                         _digests(args.corpus))
    corpus = load_lm_corpus(args.corpus)
    vocab = train_unigram(
        corpus, resolved["vocab_size"], resolved["em_iters"],
        resolved["shrink_factor"], max_seed_size=resolved["seed_size"],
        max_piece_len=resolved["max_piece_len"],
        character_coverage=resolved["character_coverage"])
    save_vocab(args.out, vocab, parameters=resolved,
               target_size=resolved["vocab_size"])
    manifest.finish({"vocab": str(args.out), "digest": file_digest(args.out)},
                    {"pieces": len(vocab.pieces),
                     "documents": len(corpus.documents),
                     "warning": vocab.warning})
    print(f"tok-train: {len(vocab.pieces)} pieces from "
          f"{len(corpus.documents)} documents -> {args.out}")
    return 0


def _lm_stage_command(args, stage: str) -> int:
    cfg = _read_config(args.config)
    seed = _resolve(args.seed, cfg, "training", "seed", int, 0)
    resolved = {
        "epochs": _resolve(args.epochs, cfg, "training", "epochs", int, 10),
        "lr": _resolve(args.lr, cfg, "training", "lr", float, 0.001),
        "batch_size": _resolve(args.batch_size, cfg, "training", "batch_size",
                               int, 128),
        "bptt_len": _resolve(args.bptt, cfg, "training", "bptt_len", int, 70),
    }
    run_cfg = default_run_config(stage, seed=seed, epochs=resolved["epochs"],
                                 base_lr=resolved["lr"],
                                 batch_size=resolved["batch_size"],
                                 bptt_len=resolved["bptt_len"])

    if stage == PRETRAIN:
        vocab, _ = load_vocab(args.vocab)
        lm_config = LMConfig.with_master_dropout(
            _resolve(args.dropout, cfg, "lm", "dropout", float, 0.3),
            vocab_size=len(vocab.pieces),
            embedding_dim=_resolve(args.embedding_dim, cfg, "lm",
                                   "embedding_dim", int, 400),
            hidden_dim=_resolve(args.hidden_dim, cfg, "lm", "hidden_dim",
                                int, 1152),
            batch_size=resolved["batch_size"], bptt_len=resolved["bptt_len"])
        params = init_lm_params(lm_config, np.random.default_rng(seed))
        corpus = load_lm_corpus(args.corpus)
        documents = corpus.documents
        inputs = _digests(list(args.corpus) + [args.vocab])
        meta = {"previous_stage": None}
    else:
        ckpt = load_checkpoint(args.ckpt)
        ckpt.require_vocab(file_digest(args.vocab))
        vocab, _ = load_vocab(args.vocab)
        lm_config = ckpt.lm_config
        params = lm_params_from_tensors(lm_config, ckpt.tensors)
        documents = _read_target_texts(args.data)
        inputs = _digests([args.data, args.ckpt, args.vocab])
        meta = {"previous_stage": ckpt.stage}

    command = "lm-pretrain" if stage == PRETRAIN else "lm-finetune"
    stream = _encode_stream(vocab, documents)
    config_snapshot = {"run": asdict(run_cfg), "lm": asdict(lm_config),
                       "stream_tokens": int(stream.size)}
    manifest = _Manifest(command, args.out, config_snapshot, seed, inputs)

    def on_epoch(epoch, _params, entry):
        manifest.add_epoch(entry)

    trainer = lm_pretrain if stage == PRETRAIN else lm_finetune
    log = trainer(params, lm_config, stream, run_cfg, on_epoch_end=on_epoch)

    save_checkpoint(args.out, Checkpoint(
        lm_config=lm_config, vocab_hash=file_digest(args.vocab), stage=stage,
        tensors=lm_params_to_tensors(params), meta=meta))
    curve_path = figures.plot_training_curves(log, str(args.out) + ".png")
    manifest.finish(
        {"checkpoint": str(args.out), "digest": file_digest(args.out),
         "figure": curve_path},
        {"untrained_val_perplexity": log["untrained_val_perplexity"],
         "best_epoch": log["best_epoch"],
         "best_val_perplexity": log["best_val_perplexity"]})
    print(f"{command}: val perplexity "
          f"{log['untrained_val_perplexity']:.2f} -> "
          f"{log['best_val_perplexity']:.2f} "
          f"(best epoch {log['best_epoch']}) -> {args.out}")
    return 0


def _cmd_lm_pretrain(args) -> int:
    return _lm_stage_command(args, PRETRAIN)


def _cmd_lm_finetune(args) -> int:
    return _lm_stage_command(args, LM_FINETUNE)


def _cmd_clf_train(args) -> int:
    cfg = _read_config(args.config)
    seed = _resolve(args.seed, cfg, "classifier", "seed", int, 0)
    resolved = {
        "epochs": _resolve(args.epochs, cfg, "classifier", "epochs", int, 5),
        "lr": _resolve(args.lr, cfg, "classifier", "lr", float, 0.05),
        "batch_size": _resolve(args.batch_size, cfg, "classifier",
                               "batch_size", int, 32),
        "valid_fraction": _resolve(args.valid_fraction, cfg, "classifier",
                                   "valid_fraction", float, 0.15),
        "test_fraction": _resolve(args.test_fraction, cfg, "classifier",
                                  "test_fraction", float, 0.15),
        "min_label_count": _resolve(args.min_label_count, cfg, "classifier",
                                    "min_label_count", int, 1),
        "max_len": _resolve(args.max_len, cfg, "classifier", "max_len", int,
                            MAX_DOC_TOKENS),
    }
    ckpt = load_checkpoint(args.ckpt)
    ckpt.require_vocab(file_digest(args.vocab))
    vocab, _ = load_vocab(args.vocab)
    params = lm_params_from_tensors(ckpt.lm_config, ckpt.tensors)

    ds = load_classification_dataset(args.data, args.task)
    if args.task == MULTILABEL and resolved["min_label_count"] > 1:
        ds = filter_frequent_labels(ds, resolved["min_label_count"])
        if ds.warning:
            print(f"warning: {ds.warning}", file=sys.stderr)
    vf, tf = resolved["valid_fraction"], resolved["test_fraction"]
    if not (0.0 < vf and 0.0 < tf and vf + tf < 1.0):
        raise UsageError(
            f"valid and test fractions must be positive and sum below 1, "
            f"got {vf} and {tf}")
    train_ds, valid_ds, test_ds = split_dataset(ds, (1.0 - vf - tf, vf, tf),
                                                seed)
    train_set = encode_dataset(train_ds, vocab, max_len=resolved["max_len"])
    valid_set = encode_dataset(valid_ds, vocab, max_len=resolved["max_len"])

    n_out = 2 if args.task == BINARY else len(ds.label_vocabulary)
    if n_out < 1:
        raise DataError("no labels survive the frequency threshold")
    head = init_clf_head(ckpt.lm_config, n_out, args.task,
                         np.random.default_rng(seed))
    run_cfg = default_run_config(CLF_FINETUNE, seed=seed,
                                 epochs=resolved["epochs"],
                                 base_lr=resolved["lr"],
                                 batch_size=resolved["batch_size"])

    config_snapshot = {"run": asdict(run_cfg), "lm": asdict(ckpt.lm_config),
                       "task": args.task, **resolved,
                       "n_train": len(train_ds.examples),
                       "n_valid": len(valid_ds.examples),
                       "n_test": len(test_ds.examples)}
    manifest = _Manifest("clf-train", args.out, config_snapshot, seed,
                         _digests([args.data, args.ckpt, args.vocab]))

    def on_epoch(epoch, _params, entry):
        manifest.add_epoch(entry)

    log = clf_train(params, ckpt.lm_config, head, train_set, run_cfg,
                    valid_set, on_epoch_end=on_epoch)

    test_path = str(args.out) + ".test.jsonl"
    _write_text_atomic(test_path, "".join(
        json.dumps({"text": ex.text,
                    "labels": sorted(ds.label_vocabulary[l]
                                     for l in ex.labels)},
                   sort_keys=True) + "\n"
        for ex in test_ds.examples))

    tensors = dict(lm_params_to_tensors(params))
    tensors.update(head_to_tensors(head))
    save_checkpoint(args.out, Checkpoint(
        lm_config=ckpt.lm_config, vocab_hash=ckpt.vocab_hash,
        stage=CLF_FINETUNE, tensors=tensors,
        meta={"task_kind": args.task,
              "label_vocabulary": list(ds.label_vocabulary),
              "head_p_drop": head.p_drop,
              "previous_stage": ckpt.stage}))
    curve_path = figures.plot_training_curves(log, str(args.out) + ".png")
    manifest.finish(
        {"checkpoint": str(args.out), "digest": file_digest(args.out),
         "figure": curve_path, "test_split": test_path},
        {"best_epoch": log["best_epoch"],
         "best_val_metric": log["best_val_metric"]})
    metric_name = "pos F1" if args.task == BINARY else "nDCG@5"
    print(f"clf-train: best val {metric_name} {log['best_val_metric']:.4f} "
          f"(epoch {log['best_epoch']}) -> {args.out}")
    return 0


def _cmd_predict(args) -> int:
    ckpt, vocab, params, head = _load_clf_checkpoint(args.ckpt, args.vocab)
    labels = list(ckpt.meta.get("label_vocabulary", []))
    try:
        lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {args.input}: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"{args.input} is not valid UTF-8 at byte {e.start}") from e

    results = predict_texts(params, ckpt.lm_config, head, vocab, lines,
                            batch_size=args.batch_size)

    def name(i: int) -> str:
        return labels[i] if i < len(labels) else str(i)

    rows = []
    if head.task_kind == BINARY:
        rows.append("# index\tprediction\t"
                    + "\t".join(f"score:{name(i)}" for i in range(2)))
        for i, r in enumerate(results):
            rows.append(f"{i}\t{name(r['class_id'])}\t"
                        + "\t".join(f"{s:.6f}" for s in r["scores"]))
    else:
        rows.append("# index\tselected\tranking\t"
                    + "\t".join(f"score:{name(i)}" for i in range(head.n_out)))
        for i, r in enumerate(results):
            selected = ";".join(name(j) for j in r["selected"]) or "-"
            ranking = ";".join(name(j) for j in r["ranking"])
            rows.append(f"{i}\t{selected}\t{ranking}\t"
                        + "\t".join(f"{s:.6f}" for s in r["scores"]))
    _write_text_atomic(args.out, "\n".join(rows) + "\n")

    manifest = _Manifest("predict", args.out,
                         {"batch_size": args.batch_size,
                          "task": head.task_kind, "n_inputs": len(lines)},
                         None, _digests([args.input, args.ckpt, args.vocab]))
    manifest.finish({"predictions": str(args.out),
                     "digest": file_digest(args.out)})
    print(f"predict: {len(lines)} inputs ({head.task_kind}) -> {args.out}")
    return 0


def _parse_metric(spec: str) -> tuple[str, int | None]:
    if spec in ("pos-f1", "mean-f1"):
        return spec, None
    m = _METRIC_RE.match(spec)
    if m and int(m.group(1)) >= 1:
        return "ndcg", int(m.group(1))
    raise UsageError(
        f"metric must be pos-f1, mean-f1, or ndcg@K with K >= 1, got {spec!r}")


def _cmd_evaluate(args) -> int:
    metric_kind, k = _parse_metric(args.metric)
    ckpt, vocab, params, head = _load_clf_checkpoint(args.ckpt, args.vocab)
    labels = list(ckpt.meta.get("label_vocabulary", []))

    if head.task_kind == BINARY and metric_kind == "ndcg":
        raise UsageError("ndcg@K applies to multilabel checkpoints")
    if head.task_kind == MULTILABEL and metric_kind != "ndcg":
        raise UsageError(f"{args.metric} applies to binary checkpoints")

    ds = load_classification_dataset(args.data, head.task_kind)
    gold_sets = _gold_by_checkpoint_labels(ds, labels)
    texts = [ex.text for ex in ds.examples]
    results = predict_texts(params, ckpt.lm_config, head, vocab, texts,
                            batch_size=args.batch_size)

    report: dict[str, float] = {}
    if head.task_kind == BINARY:
        preds = [r["class_id"] for r in results]
        gold = [next(iter(g)) for g in gold_sets]
        counts = ConfusionCounts.from_binary(preds, gold, positive_class=1)
        report["pos_f1"] = binary_f1(preds, gold, positive_class=1)
        report["mean_f1"] = mean_f1(preds, gold)
        report["accuracy"] = (counts.tp + counts.tn) / counts.total
        value = report["pos_f1"] if metric_kind == "pos-f1" else report["mean_f1"]
        extra = {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
                 "tn": counts.tn}
    else:
        scores = [r["scores"] for r in results]
        report[f"ndcg@{k}"] = ndcg_at_k(scores, gold_sets, k=k)
        value = report[f"ndcg@{k}"]
        extra = {}

    lines = [f"metric\t{args.metric}", f"value\t{value!r}",
             f"n_examples\t{len(ds.examples)}"]
    lines += [f"{name}\t{val!r}" for name, val in sorted(report.items())]
    lines += [f"{name}\t{val}" for name, val in sorted(extra.items())]
    _write_text_atomic(args.out, "\n".join(lines) + "\n")
    figure_path = figures.plot_metric_report(
        report, str(args.out) + ".png",
        title=f"evaluation on {Path(args.data).name}")

    manifest = _Manifest("evaluate", args.out,
                         {"metric": args.metric, "task": head.task_kind,
                          "batch_size": args.batch_size,
                          "n_examples": len(ds.examples)},
                         None, _digests([args.data, args.ckpt, args.vocab]))
    manifest.finish({"report": str(args.out), "figure": figure_path},
                    {"value": value, **report, **extra})
    print(f"evaluate: {args.metric} = {float(value)} "
          f"on {len(ds.examples)} examples -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lmft",
        description="Train and apply LSTM language models for text "
                    "classification via transfer learning.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tok-train", help="fit a subword vocabulary")
    t.add_argument("--corpus", nargs="+", required=True)
    t.add_argument("--vocab-size", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--max-piece-len", type=int)
    t.add_argument("--coverage", type=float)
    t.add_argument("--seed-size", type=int)
    t.add_argument("--shrink-factor", type=float)
    t.add_argument("--em-iters", type=int)
    t.set_defaults(func=_cmd_tok_train)

    lp = sub.add_parser("lm-pretrain", help="train the language model")
    lp.add_argument("--corpus", nargs="+", required=True)
    lp.add_argument("--vocab", required=True)
    lp.add_argument("--out", required=True)
    _add_train_flags(lp)
    lp.add_argument("--bptt", type=int)
    lp.add_argument("--dropout", type=float)
    lp.add_argument("--embedding-dim", type=int)
    lp.add_argument("--hidden-dim", type=int)
    lp.set_defaults(func=_cmd_lm_pretrain)

    lf = sub.add_parser("lm-finetune",
                        help="adapt a pretrained model to target texts")
    lf.add_argument("--data", required=True)
    lf.add_argument("--ckpt", required=True)
    lf.add_argument("--vocab", required=True)
    lf.add_argument("--out", required=True)
    _add_train_flags(lf)
    lf.add_argument("--bptt", type=int)
    lf.set_defaults(func=_cmd_lm_finetune)

    ct = sub.add_parser("clf-train", help="train a classifier on a checkpoint")
    ct.add_argument("--data", required=True)
    ct.add_argument("--task", required=True, choices=[BINARY, MULTILABEL])
    ct.add_argument("--ckpt", required=True)
    ct.add_argument("--vocab", required=True)
    ct.add_argument("--out", required=True)
    _add_train_flags(ct)
    ct.add_argument("--valid-fraction", type=float)
    ct.add_argument("--test-fraction", type=float)
    ct.add_argument("--min-label-count", type=int)
    ct.add_argument("--max-len", type=int)
    ct.set_defaults(func=_cmd_clf_train)

    pr = sub.add_parser("predict", help="classify texts, one per line")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--vocab", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--batch-size", type=int, default=32)
    pr.set_defaults(func=_cmd_predict)

    ev = sub.add_parser("evaluate", help="score a labeled dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--vocab", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--metric", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--batch-size", type=int, default=32)
    ev.set_defaults(func=_cmd_evaluate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataError, CompatibilityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericalFault as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except ToolkitError as e:  # base-class fallback, not expected
        print(f"error: {e}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
