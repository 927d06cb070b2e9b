"""Persistence tests.

Round-trips are checked at the byte level: saving the same content twice
must produce identical files, and every stored float must come back with
its exact bits. Corruption coverage works on real files, flipping and
truncating actual bytes rather than mocking the reader.
"""

import hashlib
import json
import math
import struct

import numpy as np
import pytest

from lmft.awd_lstm import LMConfig, init_lm_params
from lmft.errors import CompatibilityError, CorruptionError, UsageError
from lmft.persistence import (CHECKPOINT_MAGIC, FORMAT_VERSION, VOCAB_MAGIC,
                              Checkpoint, expected_lm_shapes, file_digest,
                              lm_params_from_tensors, lm_params_to_tensors,
                              load_checkpoint, load_vocab, save_checkpoint,
                              save_vocab, write_json_atomic)
from lmft.tokenizer import BOUNDARY, UnigramVocab

SPECIAL_SURFACES = ("<pad>", "<unk>", "<s>", "</s>")

# Log-probs with no short decimal form, so a printf-style writer that
# rounded through text would be caught.
REAL_PIECES = (
    (BOUNDARY, -0.9217304928374421),
    ("a", math.log(1.0 / 3.0)),
    ("b", -1.0000000000000002),
    ("ab", -2.718281828459045),
)


def small_vocab(warning=None):
    pieces = tuple((s, 0.0) for s in SPECIAL_SURFACES) + REAL_PIECES
    return UnigramVocab(pieces=pieces, warning=warning)


def vocab_bytes(pieces, header=None):
    """Handwritten clone of the vocabulary writer, for crafting bad files."""
    if header is None:
        header = {"kind": "unigram-vocab", "parameters": {},
                  "piece_count": len(pieces), "target_size": None,
                  "warning": None}
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [VOCAB_MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<I", len(hdr)), hdr]
    for surface, lp in pieces:
        raw = surface if isinstance(surface, bytes) else surface.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<d", lp)]
    return b"".join(parts)


def specials_plus(*entries):
    return tuple((s, 0.0) for s in SPECIAL_SURFACES) + entries


# ---------------------------------------------------------------------------
# vocabulary files


def test_vocab_round_trip_is_exact(tmp_path):
    path = tmp_path / "toy.vocab"
    vocab = small_vocab(warning="only 9 distinct fragments")
    save_vocab(path, vocab, parameters={"coverage": 0.9995, "seed": 7},
               target_size=8)
    loaded, header = load_vocab(path)
    assert loaded.pieces == vocab.pieces
    for (_, want), (_, got) in zip(vocab.pieces, loaded.pieces):
        assert struct.pack("<d", got) == struct.pack("<d", want)
    assert loaded.warning == "only 9 distinct fragments"
    assert header["kind"] == "unigram-vocab"
    assert header["parameters"] == {"coverage": 0.9995, "seed": 7}
    assert header["target_size"] == 8
    assert header["piece_count"] == len(vocab.pieces)


def test_vocab_default_header_fields(tmp_path):
    path = tmp_path / "toy.vocab"
    save_vocab(path, small_vocab())
    _, header = load_vocab(path)
    assert header["parameters"] == {}
    assert header["target_size"] is None
    assert header["warning"] is None


def test_vocab_resave_is_byte_identical(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.vocab", "b.vocab", "c.vocab"))
    save_vocab(a, small_vocab(), parameters={"seed": 7}, target_size=8)
    save_vocab(b, small_vocab(), parameters={"seed": 7}, target_size=8)
    assert a.read_bytes() == b.read_bytes()
    # and a load/save cycle reproduces the file as well
    loaded, _ = load_vocab(a)
    save_vocab(c, loaded, parameters={"seed": 7}, target_size=8)
    assert c.read_bytes() == a.read_bytes()


def test_vocab_truncation_reports_the_failing_offset(tmp_path):
    src = tmp_path / "toy.vocab"
    save_vocab(src, small_vocab())
    blob = src.read_bytes()
    cut = tmp_path / "cut.vocab"

    cut.write_bytes(blob[:5])
    with pytest.raises(CorruptionError, match="truncated at byte 5, needed 8"):
        load_vocab(cut)
    for point in (9, 14, len(blob) // 2, len(blob) - 3):
        cut.write_bytes(blob[:point])
        with pytest.raises(CorruptionError, match="truncated at byte"):
            load_vocab(cut)


def test_vocab_bad_magic(tmp_path):
    src = tmp_path / "toy.vocab"
    save_vocab(src, small_vocab())
    blob = bytearray(src.read_bytes())
    blob[0] ^= 0xFF
    bad = tmp_path / "bad.vocab"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CorruptionError, match="not a vocabulary file"):
        load_vocab(bad)


def test_vocab_future_version_is_refused(tmp_path):
    src = tmp_path / "toy.vocab"
    save_vocab(src, small_vocab())
    blob = bytearray(src.read_bytes())
    blob[8:12] = struct.pack("<I", 2)
    bad = tmp_path / "future.vocab"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CompatibilityError, match="format version 2"):
        load_vocab(bad)


def test_vocab_trailing_bytes_are_rejected(tmp_path):
    src = tmp_path / "toy.vocab"
    save_vocab(src, small_vocab())
    bad = tmp_path / "long.vocab"
    bad.write_bytes(src.read_bytes() + b"??")
    with pytest.raises(CorruptionError, match="2 trailing bytes"):
        load_vocab(bad)


def test_vocab_unreadable_header(tmp_path):
    bad = tmp_path / "hdr.vocab"
    bad.write_bytes(VOCAB_MAGIC + struct.pack("<I", FORMAT_VERSION)
                    + struct.pack("<I", 4) + b"oops")
    with pytest.raises(CorruptionError, match="unreadable header"):
        load_vocab(bad)


def test_vocab_invalid_piece_count(tmp_path):
    bad = tmp_path / "count.vocab"
    pieces = specials_plus()
    header = {"kind": "unigram-vocab", "parameters": {}, "piece_count": 2,
              "target_size": None, "warning": None}
    bad.write_bytes(vocab_bytes(pieces[:2], header=header))
    with pytest.raises(CorruptionError, match="invalid piece count 2"):
        load_vocab(bad)

    header["piece_count"] = None
    bad.write_bytes(vocab_bytes(pieces[:2], header=header))
    with pytest.raises(CorruptionError, match="invalid piece count"):
        load_vocab(bad)


def test_vocab_misplaced_specials(tmp_path):
    bad = tmp_path / "specials.vocab"
    pieces = (("<pad>", 0.0), ("<unk>", 0.0), ("</s>", 0.0), ("<s>", 0.0),
              ("a", -1.0))
    bad.write_bytes(vocab_bytes(pieces))
    with pytest.raises(CorruptionError, match="special pieces are malformed"):
        load_vocab(bad)


def test_vocab_invariant_breakage_reads_as_corruption(tmp_path):
    bad = tmp_path / "invariant.vocab"
    # positive log-prob violates the vocabulary's own constructor checks
    bad.write_bytes(vocab_bytes(specials_plus(("a", 0.5))))
    with pytest.raises(CorruptionError, match="invalid vocabulary"):
        load_vocab(bad)
    # duplicate surface
    bad.write_bytes(vocab_bytes(specials_plus(("a", -1.0), ("a", -2.0))))
    with pytest.raises(CorruptionError, match="invalid vocabulary"):
        load_vocab(bad)


def test_vocab_non_utf8_surface(tmp_path):
    bad = tmp_path / "utf8.vocab"
    bad.write_bytes(vocab_bytes(specials_plus((b"\xff\xfe", -1.0))))
    with pytest.raises(CorruptionError, match="not UTF-8"):
        load_vocab(bad)


def test_missing_vocab_file_is_a_usage_error(tmp_path):
    with pytest.raises(UsageError, match="cannot read vocabulary"):
        load_vocab(tmp_path / "nope.vocab")


def test_file_digest_matches_sha256(tmp_path):
    # larger than one read chunk, so the streaming loop is exercised
    data = np.random.default_rng(11).bytes(2_500_000)
    path = tmp_path / "blob.bin"
    path.write_bytes(data)
    assert file_digest(path) == hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# checkpoints


def tiny_config():
    return LMConfig(vocab_size=12, embedding_dim=4, hidden_dim=5,
                    p_out=0.0, p_hid=0.0, p_emb=0.0, p_inp=0.0, p_wdrop=0.0,
                    bptt_len=6, batch_size=2)


def tiny_checkpoint(stage="lm-pretrain", vocab_hash="a" * 64, extra=None):
    config = tiny_config()
    params = init_lm_params(config, np.random.default_rng(3))
    tensors = lm_params_to_tensors(params)
    if extra:
        tensors.update(extra)
    meta = {"epoch": 3, "val_perplexity": 41.25, "note": "toy"}
    return Checkpoint(lm_config=config, vocab_hash=vocab_hash, stage=stage,
                      tensors=tensors, meta=meta)


def resign_checkpoint(blob, mutate):
    """Mutate a checkpoint's parsed header and re-sign the result.

    Needed because the trailing digest catches plain byte edits before
    the directory validation under test can run.
    """
    body = blob[:-32]
    hlen = struct.unpack("<I", body[12:16])[0]
    header = json.loads(body[16:16 + hlen])
    payload = body[16 + hlen:]
    mutate(header)
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    new_body = (CHECKPOINT_MAGIC + struct.pack("<I", FORMAT_VERSION)
                + struct.pack("<I", len(hdr)) + hdr + payload)
    return new_body + hashlib.sha256(new_body).digest()


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    path = tmp_path / "model.ckpt"
    rng = np.random.default_rng(5)
    extra = {"head.W1": rng.standard_normal((12, 6)).astype(np.float32),
             "head.b1": np.zeros(6, dtype=np.float64)}
    ckpt = tiny_checkpoint(stage="clf-train", extra=extra)
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)

    assert loaded.lm_config == ckpt.lm_config
    assert loaded.vocab_hash == ckpt.vocab_hash
    assert loaded.stage == "clf-train"
    assert loaded.meta == ckpt.meta
    assert set(loaded.tensors) == set(ckpt.tensors)
    for name, want in ckpt.tensors.items():
        got = loaded.tensors[name]
        assert got.dtype == want.dtype
        assert got.shape == want.shape
        assert got.tobytes() == want.tobytes()
        assert got.flags.writeable


def test_checkpoint_resave_is_byte_identical(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.ckpt", "b.ckpt", "c.ckpt"))
    save_checkpoint(a, tiny_checkpoint())
    save_checkpoint(b, tiny_checkpoint())
    assert a.read_bytes() == b.read_bytes()
    save_checkpoint(c, load_checkpoint(a))
    assert c.read_bytes() == a.read_bytes()


def test_every_flipped_byte_is_detected(tmp_path):
    src = tmp_path / "model.ckpt"
    save_checkpoint(src, tiny_checkpoint())
    blob = src.read_bytes()
    bad = tmp_path / "flip.ckpt"

    positions = set(range(0, len(blob), max(1, len(blob) // 60)))
    positions |= {8, 9, 10, 11, len(blob) - 1}
    for pos in sorted(positions):
        flipped = bytearray(blob)
        flipped[pos] ^= 0x01
        bad.write_bytes(bytes(flipped))
        # a flip inside the version field reads as an incompatibility,
        # every other flip as corruption; silence is the only failure
        with pytest.raises((CorruptionError, CompatibilityError)):
            load_checkpoint(bad)


def test_checkpoint_truncation(tmp_path):
    src = tmp_path / "model.ckpt"
    save_checkpoint(src, tiny_checkpoint())
    blob = src.read_bytes()
    bad = tmp_path / "cut.ckpt"
    for point in (0, 31, 40, len(blob) // 2, len(blob) - 1):
        bad.write_bytes(blob[:point])
        with pytest.raises(CorruptionError):
            load_checkpoint(bad)
    bad.write_bytes(blob[:31])
    with pytest.raises(CorruptionError, match="truncated at byte 31"):
        load_checkpoint(bad)


def test_checkpoint_bad_magic_and_version(tmp_path):
    src = tmp_path / "model.ckpt"
    save_checkpoint(src, tiny_checkpoint())
    blob = bytearray(src.read_bytes())

    wrong = bytearray(blob)
    wrong[:8] = VOCAB_MAGIC
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(wrong))
    with pytest.raises(CorruptionError, match="not a checkpoint file"):
        load_checkpoint(bad)

    wrong = bytearray(blob)
    wrong[8:12] = struct.pack("<I", 3)
    bad.write_bytes(bytes(wrong))
    with pytest.raises(CompatibilityError, match="format version 3"):
        load_checkpoint(bad)


def test_vocab_hash_mismatch_is_refused():
    ckpt = tiny_checkpoint(vocab_hash="a" * 64)
    ckpt.require_vocab("a" * 64)
    with pytest.raises(CompatibilityError, match="refusing to mix"):
        ckpt.require_vocab("b" * 64)


def test_directory_nbytes_inconsistency(tmp_path):
    src = tmp_path / "model.ckpt"
    save_checkpoint(src, tiny_checkpoint())

    def grow_first_entry(header):
        header["tensors"][0]["nbytes"] += 8

    bad = tmp_path / "dir.ckpt"
    bad.write_bytes(resign_checkpoint(src.read_bytes(), grow_first_entry))
    with pytest.raises(CorruptionError, match="inconsistent"):
        load_checkpoint(bad)


def test_directory_offset_beyond_payload(tmp_path):
    src = tmp_path / "model.ckpt"
    save_checkpoint(src, tiny_checkpoint())

    def push_entry_out(header):
        header["tensors"][-1]["offset"] += 1 << 20

    bad = tmp_path / "off.ckpt"
    bad.write_bytes(resign_checkpoint(src.read_bytes(), push_entry_out))
    with pytest.raises(CorruptionError, match="ends at"):
        load_checkpoint(bad)


def test_directory_missing_entry_leaves_unclaimed_payload(tmp_path):
    src = tmp_path / "model.ckpt"
    save_checkpoint(src, tiny_checkpoint())

    def drop_last_entry(header):
        header["tensors"].pop()

    bad = tmp_path / "short.ckpt"
    bad.write_bytes(resign_checkpoint(src.read_bytes(), drop_last_entry))
    with pytest.raises(CorruptionError, match="payload size mismatch"):
        load_checkpoint(bad)


def test_malformed_header_and_entries(tmp_path):
    src = tmp_path / "model.ckpt"
    save_checkpoint(src, tiny_checkpoint())
    blob = src.read_bytes()
    bad = tmp_path / "hdr.ckpt"

    def drop_hash(header):
        del header["vocab_hash"]

    bad.write_bytes(resign_checkpoint(blob, drop_hash))
    with pytest.raises(CorruptionError, match="malformed header"):
        load_checkpoint(bad)

    def break_config(header):
        header["lm_config"]["n_layers"] = 4

    bad.write_bytes(resign_checkpoint(blob, break_config))
    with pytest.raises(CorruptionError, match="malformed header"):
        load_checkpoint(bad)

    def alien_dtype(header):
        header["tensors"][0]["dtype"] = "int64"

    bad.write_bytes(resign_checkpoint(blob, alien_dtype))
    with pytest.raises(CorruptionError, match="malformed tensor entry"):
        load_checkpoint(bad)


def test_save_rejects_unsupported_dtype(tmp_path):
    ckpt = tiny_checkpoint(extra={"head.counts": np.arange(3, dtype=np.int64)})
    with pytest.raises(UsageError, match="unsupported dtype"):
        save_checkpoint(tmp_path / "model.ckpt", ckpt)


def test_missing_checkpoint_file_is_a_usage_error(tmp_path):
    with pytest.raises(UsageError, match="cannot read checkpoint"):
        load_checkpoint(tmp_path / "nope.ckpt")


# ---------------------------------------------------------------------------
# parameter bridging


def test_lm_params_tensor_bridge_round_trip():
    config = tiny_config()
    params = init_lm_params(config, np.random.default_rng(9))
    tensors = lm_params_to_tensors(params)
    rebuilt = lm_params_from_tensors(config, tensors)

    assert [n for n, _ in rebuilt.named_tensors()] \
        == [n for n, _ in params.named_tensors()]
    for (_, want), (_, got) in zip(params.named_tensors(),
                                   rebuilt.named_tensors()):
        assert got.data.tobytes() == want.data.tobytes()
        assert got.requires_grad
    # rebuilt tensors own their memory (the dict aliases params itself)
    original = params.embedding.data.tobytes()
    tensors["embedding"][:] = 0.0
    assert rebuilt.embedding.data.tobytes() == original


def test_lm_params_from_tensors_tolerates_extra_head_tensors():
    config = tiny_config()
    tensors = lm_params_to_tensors(init_lm_params(config,
                                                  np.random.default_rng(9)))
    tensors["head.W1"] = np.zeros((12, 4), dtype=np.float32)
    rebuilt = lm_params_from_tensors(config, tensors)
    assert rebuilt.embedding.data.shape == (12, 4)


def test_lm_params_from_tensors_rejects_damage():
    config = tiny_config()
    tensors = lm_params_to_tensors(init_lm_params(config,
                                                  np.random.default_rng(9)))
    short = dict(tensors)
    del short["lstm2.U"]
    with pytest.raises(CorruptionError, match="lacks tensor 'lstm2.U'"):
        lm_params_from_tensors(config, short)

    wrong = dict(tensors)
    wrong["lstm1.b"] = np.zeros(7, dtype=np.float32)
    with pytest.raises(CorruptionError, match="config requires"):
        lm_params_from_tensors(config, wrong)


def test_expected_lm_shapes_match_the_tied_decoder_layout():
    shapes = expected_lm_shapes(tiny_config())
    assert shapes == {
        "embedding": (12, 4), "decoder.bias": (12,),
        "lstm1.W": (4, 20), "lstm1.U": (5, 20), "lstm1.b": (20,),
        "lstm2.W": (5, 20), "lstm2.U": (5, 20), "lstm2.b": (20,),
        "lstm3.W": (5, 16), "lstm3.U": (4, 16), "lstm3.b": (16,),
    }


# ---------------------------------------------------------------------------
# atomic writes


def test_writers_leave_no_temp_files(tmp_path):
    save_vocab(tmp_path / "a.vocab", small_vocab())
    save_checkpoint(tmp_path / "a.ckpt", tiny_checkpoint())
    write_json_atomic(tmp_path / "a.json", {"b": 2, "a": 1})
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["a.ckpt", "a.json", "a.vocab"]
    assert json.loads((tmp_path / "a.json").read_text()) == {"a": 1, "b": 2}


def test_failed_write_cleans_up_its_temp_file(tmp_path, monkeypatch):
    def refuse(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr("lmft.persistence.os.replace", refuse)
    with pytest.raises(OSError, match="disk full"):
        write_json_atomic(tmp_path / "out.json", {"a": 1})
    assert list(tmp_path.iterdir()) == []
