"""Class vocabularies (names, synonyms, known/novel flags) and prompt templates."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from fusedet.errors import ParseError

PLACEHOLDER = "[CLASS]"


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    synonyms: tuple[str, ...]
    known: bool

    def __post_init__(self) -> None:
        if not self.synonyms:
            raise ValueError(f"class {self.class_id} ({self.name!r}) has no synonyms")
        if self.synonyms[0] != self.name:
            raise ValueError(
                f"class {self.class_id}: name {self.name!r} must be the first synonym"
            )


@dataclass(frozen=True)
class ClassVocabulary:
    """Dense, ordered class list; entry i has class_id i."""

    entries: tuple[ClassEntry, ...]

    def __post_init__(self) -> None:
        for i, entry in enumerate(self.entries):
            if entry.class_id != i:
                raise ValueError(
                    f"class_ids must be dense 0..{len(self.entries) - 1}; "
                    f"position {i} holds id {entry.class_id}"
                )
        if self.entries and not any(e.known for e in self.entries):
            raise ValueError("vocabulary needs at least one known class")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, class_id: int) -> ClassEntry:
        return self.entries[class_id]

    @property
    def known_ids(self) -> tuple[int, ...]:
        return tuple(e.class_id for e in self.entries if e.known)

    @property
    def novel_ids(self) -> tuple[int, ...]:
        return tuple(e.class_id for e in self.entries if not e.known)

    def content_hash(self) -> str:
        """Checksum binding derived artifacts (text matrices) to this vocabulary."""
        payload = [[e.class_id, e.name, list(e.synonyms), e.known] for e in self.entries]
        blob = json.dumps(payload, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptTemplateSet:
    """Prompt templates, each containing the [CLASS] placeholder exactly once."""

    templates: tuple[str, ...] = field(default=("a photo of a [CLASS]",))

    def __post_init__(self) -> None:
        if not self.templates:
            raise ValueError("template set must not be empty")
        for t in self.templates:
            if t.count(PLACEHOLDER) != 1:
                raise ValueError(
                    f"template {t!r} must contain {PLACEHOLDER} exactly once"
                )

    def expand(self, term: str) -> list[str]:
        """All prompts for one class name or synonym."""
        return [t.replace(PLACEHOLDER, term) for t in self.templates]

    def content_hash(self) -> str:
        blob = json.dumps(list(self.templates), separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict):
        raise ParseError("top-level value must be an object", path=path)
    return doc


def load_vocabulary(path: str) -> ClassVocabulary:
    """Parse a vocab.json file: {"classes": [{id, name, synonyms[], known}]}."""
    doc = _load_json(path)
    classes = doc.get("classes")
    if not isinstance(classes, list) or not classes:
        raise ParseError('missing or empty "classes" array', path=path)

    seen: dict[int, int] = {}
    parsed: list[ClassEntry] = []
    for i, rec in enumerate(classes):
        if not isinstance(rec, dict):
            raise ParseError(f"classes[{i}] is not an object", path=path)
        try:
            cid = rec["id"]
            name = rec["name"]
        except KeyError as exc:
            raise ParseError(f"classes[{i}] missing field {exc}", path=path) from exc
        if not isinstance(cid, int) or isinstance(cid, bool):
            raise ParseError(f"classes[{i}].id must be an integer", path=path)
        if cid in seen:
            raise ParseError(f"duplicate class_id {cid}", path=path)
        seen[cid] = i
        synonyms = rec.get("synonyms", [name])
        if not isinstance(synonyms, list) or not all(isinstance(s, str) for s in synonyms):
            raise ParseError(f"classes[{i}].synonyms must be a list of strings", path=path)
        known = rec.get("known")
        if not isinstance(known, bool):
            raise ParseError(f'classes[{i}].known must be a boolean', path=path)
        try:
            parsed.append(ClassEntry(cid, name, tuple(synonyms), known))
        except ValueError as exc:
            raise ParseError(str(exc), path=path) from exc

    parsed.sort(key=lambda e: e.class_id)
    try:
        return ClassVocabulary(tuple(parsed))
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from exc


def load_templates(path: str) -> PromptTemplateSet:
    """Parse a templates.json file: {"templates": ["a photo of a [CLASS]", ...]}."""
    doc = _load_json(path)
    templates = doc.get("templates")
    if not isinstance(templates, list) or not all(isinstance(t, str) for t in templates):
        raise ParseError('"templates" must be a list of strings', path=path)
    try:
        return PromptTemplateSet(tuple(templates))
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from exc
