import json

import pytest

from lmft.corpus import (BINARY, MULTILABEL, filter_frequent_labels,
                         load_classification_dataset, load_lm_corpus,
                         normalize_text, split_dataset)
from lmft.errors import (DataError, IngestionError, SchemaError, UsageError)


def test_normalize_maps_ascii_digits_only():
    assert normalize_text("Article 12(3) of 1994") == "Article 00(0) of 0000"
    assert normalize_text("no digits here") == "no digits here"
    # every digit maps to one '0'; runs are not collapsed, case untouched
    assert normalize_text("1234567890") == "0000000000"
    assert normalize_text("µ٣") == "µ٣"  # non-ASCII numerals stay


def test_normalize_is_idempotent():
    s = normalize_text("The Tribunal Finds 42")
    assert normalize_text(s) == s


def test_load_lm_corpus_sorted_and_normalized(tmp_path):
    (tmp_path / "b.txt").write_text("Second FILE\n\n", encoding="utf-8")
    (tmp_path / "a.txt").write_text("First 1\n  \nsecond line\n", encoding="utf-8")
    corpus = load_lm_corpus([tmp_path / "b.txt", tmp_path / "a.txt"])
    assert corpus.documents == ("First 0", "second line", "Second FILE")
    assert len(corpus.source_tags) == 3


def test_load_lm_corpus_bad_utf8(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_bytes(b"fine\n\xff\xfe broken")
    with pytest.raises(IngestionError) as e:
        load_lm_corpus([p])
    assert "bad.txt" in str(e.value)


def test_load_lm_corpus_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_lm_corpus([tmp_path / "nope.txt"])


def _write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records),
                    encoding="utf-8")
    return path


def test_classification_first_seen_label_order(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl", [
        {"text": "A", "labels": ["neg"]},
        {"text": "B", "labels": ["pos"]},
        {"text": "C", "labels": ["neg"]},
    ])
    ds = load_classification_dataset(p, BINARY)
    assert ds.label_vocabulary == ("neg", "pos")
    assert [sorted(e.labels) for e in ds.examples] == [[0], [1], [0]]
    assert ds.examples[0].text == "A"


def test_classification_schema_errors_name_line(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl", [
        {"text": "ok", "labels": ["x"]},
        {"text": "missing labels"},
    ])
    with pytest.raises(SchemaError) as e:
        load_classification_dataset(p, MULTILABEL)
    assert ":2" in str(e.value)


def test_binary_needs_exactly_one_label(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl",
                     [{"text": "t", "labels": ["a", "b"]}])
    with pytest.raises(SchemaError):
        load_classification_dataset(p, BINARY)
    p2 = _write_jsonl(tmp_path / "one.jsonl", [{"text": "t", "labels": ["a"]}])
    with pytest.raises(SchemaError):
        load_classification_dataset(p2, BINARY)  # only one label value overall


def test_multilabel_allows_empty_labels(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl", [
        {"text": "t", "labels": []},
        {"text": "u", "labels": ["a"]},
    ])
    ds = load_classification_dataset(p, MULTILABEL)
    assert ds.examples[0].labels == frozenset()


def test_unknown_task_kind_rejected(tmp_path):
    with pytest.raises(UsageError):
        load_classification_dataset(tmp_path / "x.jsonl", "ranking")


def test_filter_frequent_labels_remaps_ids(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl", [
        {"text": "a", "labels": ["rare", "common"]},
        {"text": "b", "labels": ["common"]},
        {"text": "c", "labels": ["common", "other"]},
        {"text": "d", "labels": ["other"]},
    ])
    ds = load_classification_dataset(p, MULTILABEL)
    out = filter_frequent_labels(ds, 2)
    assert out.label_vocabulary == ("common", "other")
    assert sorted(out.examples[0].labels) == [0]
    assert sorted(out.examples[2].labels) == [0, 1]
    assert out.warning is None


def test_filter_all_labels_warns_instead_of_error(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl", [{"text": "a", "labels": ["x"]}])
    ds = load_classification_dataset(p, MULTILABEL)
    out = filter_frequent_labels(ds, 5)
    assert out.label_vocabulary == ()
    assert out.warning is not None
    assert out.examples[0].labels == frozenset()


def test_filter_rejects_binary(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl", [
        {"text": "a", "labels": ["x"]}, {"text": "b", "labels": ["y"]}])
    ds = load_classification_dataset(p, BINARY)
    with pytest.raises(UsageError):
        filter_frequent_labels(ds, 1)


def test_split_dataset_partition_and_determinism(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl",
                     [{"text": f"t{i}", "labels": ["a" if i % 2 else "b"]}
                      for i in range(20)])
    ds = load_classification_dataset(p, BINARY)
    a = split_dataset(ds, (0.7, 0.15, 0.15), seed=3)
    b = split_dataset(ds, (0.7, 0.15, 0.15), seed=3)
    assert [len(part.examples) for part in a] == [14, 3, 3]
    for pa, pb in zip(a, b):
        assert pa.examples == pb.examples
    seen = [e.text for part in a for e in part.examples]
    assert sorted(seen) == sorted(e.text for e in ds.examples)
    c = split_dataset(ds, (0.7, 0.15, 0.15), seed=4)
    assert any(pa.examples != pc.examples for pa, pc in zip(a, c))


def test_split_dataset_remainder_goes_to_train(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl",
                     [{"text": f"t{i}", "labels": [["a", "b"][i % 2]]}
                      for i in range(10)])
    ds = load_classification_dataset(p, BINARY)
    train, valid, test = split_dataset(ds, (1 / 3, 1 / 3, 1 / 3), seed=0)
    assert (len(train.examples), len(valid.examples), len(test.examples)) \
        == (4, 3, 3)


def test_split_dataset_validates(tmp_path):
    p = _write_jsonl(tmp_path / "d.jsonl",
                     [{"text": "a", "labels": ["x"]},
                      {"text": "b", "labels": ["y"]}])
    ds = load_classification_dataset(p, BINARY)
    with pytest.raises(DataError):
        split_dataset(ds, (0.8, 0.1, 0.1), seed=0)
    with pytest.raises(UsageError):
        split_dataset(ds, (0.8, 0.2), seed=0)
    with pytest.raises(UsageError):
        split_dataset(ds, (0.5, 0.3, 0.3), seed=0)
