import json

import pytest

from fusedet.errors import ParseError
from fusedet.vocab import ClassEntry, ClassVocabulary, PromptTemplateSet, load_templates, load_vocabulary


def write_vocab(tmp_path, classes):
    path = tmp_path / "vocab.json"
    path.write_text(json.dumps({"classes": classes}))
    return str(path)


def test_minimal_vocabulary(tmp_path):
    path = write_vocab(tmp_path, [
        {"id": 0, "name": "person", "known": True},
        {"id": 1, "name": "xylophone", "synonyms": ["xylophone", "marimba"], "known": False},
    ])
    vocab = load_vocabulary(path)
    assert len(vocab) == 2
    assert vocab[0].synonyms == ("person",)
    assert vocab[1].synonyms == ("xylophone", "marimba")
    assert vocab.known_ids == (0,)
    assert vocab.novel_ids == (1,)


def test_duplicate_class_id(tmp_path):
    path = write_vocab(tmp_path, [
        {"id": 3, "name": "a", "known": True},
        {"id": 3, "name": "b", "known": False},
    ])
    with pytest.raises(ParseError, match="duplicate class_id 3"):
        load_vocabulary(path)


def test_ids_must_be_dense(tmp_path):
    path = write_vocab(tmp_path, [
        {"id": 0, "name": "a", "known": True},
        {"id": 2, "name": "b", "known": False},
    ])
    with pytest.raises(ParseError, match="dense"):
        load_vocabulary(path)


def test_name_must_lead_synonyms(tmp_path):
    path = write_vocab(tmp_path, [
        {"id": 0, "name": "a", "synonyms": ["b", "a"], "known": True},
    ])
    with pytest.raises(ParseError, match="first synonym"):
        load_vocabulary(path)


def test_requires_a_known_class(tmp_path):
    path = write_vocab(tmp_path, [{"id": 0, "name": "a", "known": False}])
    with pytest.raises(ParseError, match="known"):
        load_vocabulary(path)


def test_lvis_scale_split(tmp_path):
    classes = [
        {"id": i, "name": f"class_{i:04d}", "known": i < 80}
        for i in range(1203)
    ]
    vocab = load_vocabulary(write_vocab(tmp_path, classes))
    assert len(vocab) == 1203
    assert len(vocab.known_ids) == 80
    assert len(vocab.novel_ids) == 1123


def test_content_hash_tracks_edits():
    v1 = ClassVocabulary((ClassEntry(0, "a", ("a",), True),))
    v2 = ClassVocabulary((ClassEntry(0, "a", ("a", "alias"), True),))
    assert v1.content_hash() != v2.content_hash()
    assert v1.content_hash() == ClassVocabulary((ClassEntry(0, "a", ("a",), True),)).content_hash()


def test_templates_placeholder_rules():
    ts = PromptTemplateSet(("a photo of a [CLASS]",))
    assert ts.expand("dog") == ["a photo of a dog"]
    with pytest.raises(ValueError):
        PromptTemplateSet(("no placeholder here",))
    with pytest.raises(ValueError):
        PromptTemplateSet(("[CLASS] and [CLASS]",))
    with pytest.raises(ValueError):
        PromptTemplateSet(())


def test_load_templates(tmp_path):
    path = tmp_path / "templates.json"
    path.write_text(json.dumps({"templates": ["a [CLASS]", "the [CLASS]"]}))
    ts = load_templates(str(path))
    assert len(ts.templates) == 2
    path.write_text(json.dumps({"templates": "nope"}))
    with pytest.raises(ParseError):
        load_templates(str(path))
