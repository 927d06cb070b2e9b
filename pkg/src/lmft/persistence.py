"""Versioned binary containers for vocabularies and model checkpoints.

Both formats are single files, little-endian regardless of platform,
and written atomically (temp file in the target directory, then rename)
so a crash never leaves a half-written file at the destination.

Vocabulary file layout:
  8-byte magic "LMFT-VOC" | u32 version | u32 header length | header JSON
  | per piece: u32 surface byte length, UTF-8 surface, f64 log-prob.
  Specials come first in the fixed order PAD, UNK, BOS, EOS.

Checkpoint file layout:
  8-byte magic "LMFT-CKP" | u32 version | u32 header length | header JSON
  (config, vocab hash, stage, tensor directory with offsets) | raw
  tensor payloads | 32-byte sha-256 of everything before it.

Headers are canonical JSON (sorted keys), tensors are stored in sorted
name order, and log-probs are exact f64 bits, so identical inputs
always produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .awd_lstm import LMConfig, LMParams, LSTMLayerParams
from .errors import CompatibilityError, CorruptionError, UsageError
from .tokenizer import SPECIALS, UnigramVocab

VOCAB_MAGIC = b"LMFT-VOC"
CHECKPOINT_MAGIC = b"LMFT-CKP"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _atomic_write(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, obj) -> None:
    """Human-readable JSON, still written via the atomic rename path."""
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n")
                  .encode("utf-8"))


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class _Reader:
    """Cursor over file bytes; any short read reports the failing offset."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptionError(
                f"{self.path}: truncated at byte {len(self.blob)}, "
                f"needed {self.pos + n}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]


def _check_magic_version(r: _Reader, magic: bytes, kind: str) -> None:
    got = r.take(len(magic))
    if got != magic:
        raise CorruptionError(f"{r.path}: not a {kind} file "
                              f"(magic {got!r}, expected {magic!r})")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CompatibilityError(
            f"{r.path}: format version {version} is not supported by this "
            f"build (version {FORMAT_VERSION}); upgrade to read it")


# ---------------------------------------------------------------------------
# vocabulary files


def save_vocab(path, vocab: UnigramVocab, parameters: dict | None = None,
               target_size: int | None = None) -> None:
    """Write the vocabulary with its training parameters in the header."""
    header = {
        "kind": "unigram-vocab",
        "parameters": parameters or {},
        "piece_count": len(vocab.pieces),
        "target_size": target_size,
        "warning": vocab.warning,
    }
    parts = [VOCAB_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    hdr = _canonical_json(header)
    parts.append(struct.pack("<I", len(hdr)))
    parts.append(hdr)
    for surface, lp in vocab.pieces:
        raw = surface.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<d", lp))
    _atomic_write(path, b"".join(parts))


def load_vocab(path) -> tuple[UnigramVocab, dict]:
    """Read a vocabulary and its header; validates structure and invariants."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise UsageError(f"cannot read vocabulary {path}: {e}") from e
    r = _Reader(blob, path)
    _check_magic_version(r, VOCAB_MAGIC, "vocabulary")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise CorruptionError(f"{path}: unreadable header: {e}") from e
    count = header.get("piece_count")
    if not isinstance(count, int) or count < 4:
        raise CorruptionError(f"{path}: invalid piece count {count!r}")
    pieces = []
    for _ in range(count):
        n = r.u32()
        try:
            surface = r.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptionError(
                f"{path}: piece surface is not UTF-8 near byte {r.pos}") from e
        pieces.append((surface, r.f64()))
    if r.pos != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - r.pos} trailing bytes")
    if tuple(s for s, _ in pieces[:4]) != SPECIALS:
        raise CorruptionError(f"{path}: special pieces are malformed")
    try:
        vocab = UnigramVocab(pieces=tuple(pieces), warning=header.get("warning"))
    except UsageError as e:
        raise CorruptionError(f"{path}: invalid vocabulary: {e}") from e
    return vocab, header


def file_digest(path) -> str:
    """sha-256 hex digest of a file's bytes (used as the vocab hash)."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoints


@dataclass(frozen=True)
class Checkpoint:
    lm_config: LMConfig
    vocab_hash: str
    stage: str
    tensors: dict[str, np.ndarray]
    meta: dict

    def require_vocab(self, vocab_hash: str) -> None:
        if vocab_hash != self.vocab_hash:
            raise CompatibilityError(
                f"checkpoint was trained with vocabulary {self.vocab_hash[:12]}..., "
                f"got {vocab_hash[:12]}...; refusing to mix them")


def expected_lm_shapes(config: LMConfig) -> dict[str, tuple[int, ...]]:
    shapes = {"embedding": (config.vocab_size, config.embedding_dim),
              "decoder.bias": (config.vocab_size,)}
    for i, (d_in, d_hid) in enumerate(zip(config.layer_input_dims,
                                          config.layer_hidden_dims), start=1):
        shapes[f"lstm{i}.W"] = (d_in, 4 * d_hid)
        shapes[f"lstm{i}.U"] = (d_hid, 4 * d_hid)
        shapes[f"lstm{i}.b"] = (4 * d_hid,)
    return shapes


def lm_params_to_tensors(params: LMParams) -> dict[str, np.ndarray]:
    return {name: t.data for name, t in params.named_tensors()}


def lm_params_from_tensors(config: LMConfig,
                           tensors: dict[str, np.ndarray]) -> LMParams:
    expected = expected_lm_shapes(config)
    for name, shape in expected.items():
        if name not in tensors:
            raise CorruptionError(f"checkpoint lacks tensor {name!r}")
        if tensors[name].shape != shape:
            raise CorruptionError(
                f"tensor {name!r} has shape {tensors[name].shape}, "
                f"config requires {shape}")

    def t(name):
        return Tensor(tensors[name].copy(), requires_grad=True)

    layers = tuple(
        LSTMLayerParams(W=t(f"lstm{i}.W"), U=t(f"lstm{i}.U"), b=t(f"lstm{i}.b"))
        for i in (1, 2, 3))
    return LMParams(embedding=t("embedding"), layers=layers,
                    decoder_bias=t("decoder.bias"))


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """Serialize config, metadata, and tensors; bitwise-stable output."""
    directory = []
    offset = 0
    names = sorted(checkpoint.tensors)
    for name in names:
        arr = checkpoint.tensors[name]
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise UsageError(f"tensor {name!r} has unsupported dtype {dtype}")
        nbytes = arr.size * arr.itemsize
        directory.append({"name": name, "dtype": dtype,
                          "shape": list(arr.shape), "offset": offset,
                          "nbytes": nbytes})
        offset += nbytes
    header = {
        "kind": "checkpoint",
        "lm_config": dataclasses.asdict(checkpoint.lm_config),
        "meta": checkpoint.meta,
        "stage": checkpoint.stage,
        "tensors": directory,
        "vocab_hash": checkpoint.vocab_hash,
    }
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    hdr = _canonical_json(header)
    parts.append(struct.pack("<I", len(hdr)))
    parts.append(hdr)
    for name in names:
        arr = checkpoint.tensors[name]
        parts.append(np.ascontiguousarray(arr).astype(
            _DTYPES[str(arr.dtype)], copy=False).tobytes())
    body = b"".join(parts)
    _atomic_write(path, body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> Checkpoint:
    """Read and verify a checkpoint: digest, directory, shapes, config."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise UsageError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 32:
        raise CorruptionError(f"{path}: truncated at byte {len(blob)}")
    body, digest = blob[:-32], blob[-32:]
    r = _Reader(body, path)
    _check_magic_version(r, CHECKPOINT_MAGIC, "checkpoint")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise CorruptionError(f"{path}: unreadable header: {e}") from e
    if hashlib.sha256(body).digest() != digest:
        raise CorruptionError(f"{path}: content digest mismatch; "
                              f"the file is corrupt")
    try:
        config = LMConfig(**header["lm_config"])
        entries = header["tensors"]
        vocab_hash = header["vocab_hash"]
        stage = header["stage"]
        meta = header.get("meta", {})
    except (KeyError, TypeError, UsageError) as e:
        raise CorruptionError(f"{path}: malformed header: {e}") from e
    tensors = {}
    payload_start = r.pos
    total = 0
    for entry in entries:
        try:
            name = entry["name"]
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(x) for x in entry["shape"])
            off = int(entry["offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptionError(f"{path}: malformed tensor entry: {e}") from e
        count = int(np.prod(shape, dtype=np.int64))
        if count * np.dtype(dtype).itemsize != nbytes:
            raise CorruptionError(f"{path}: tensor {name!r} directory entry "
                                  f"is inconsistent")
        end = payload_start + off + nbytes
        if end > len(body):
            raise CorruptionError(f"{path}: truncated at byte {len(blob)}, "
                                  f"tensor {name!r} ends at {end}")
        arr = np.frombuffer(body, dtype=dtype, count=count,
                            offset=payload_start + off)
        tensors[name] = arr.reshape(shape).astype(dtype.lstrip("<"), copy=True)
        total = max(total, off + nbytes)
    if payload_start + total != len(body):
        raise CorruptionError(f"{path}: payload size mismatch")
    return Checkpoint(lm_config=config, vocab_hash=vocab_hash, stage=stage,
                      tensors=tensors, meta=meta)
