"""Zero-shot class-text matrix and background-box labelling.

The text matrix is built one class at a time: every synonym is expanded
through all prompt templates, the prompt embeddings are L2-normalized and
averaged into a synonym feature, and the normalized synonym features are
averaged into the class column. Columns are NOT re-normalized after the
final average; cosine similarity at classification time absorbs the norm.
Column norms are therefore always <= 1, with equality only when all
normalized synonym features coincide.

Averages are computed in float64 and quantized to float32 on assembly so
that a freshly built matrix and one reloaded from the cache are bitwise
identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from fusedet.errors import MatrixBuildError, ParseError, ProtocolError
from fusedet.geometry import BBox, LabeledDetection, RawDetection, SourceTag, clamp_to_image
from fusedet.protocol import BackendSession
from fusedet.vocab import ClassVocabulary, PromptTemplateSet

log = logging.getLogger(__name__)

_MAGIC = b"FDTM"
_VERSION = 1


@dataclass(frozen=True)
class ClassTextMatrix:
    """d x |C| matrix of class text features bound to a vocabulary."""

    values: np.ndarray
    vocabulary_hash: str

    def __post_init__(self) -> None:
        # canonical C layout: cache-loaded and freshly built matrices must be
        # indistinguishable to BLAS for bit-reproducible classification
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"matrix must be 2-d, got shape {values.shape}")
        norms = np.linalg.norm(values.astype(np.float64), axis=0)
        if values.shape[1] and not np.all(norms > 0.0):
            raise ValueError("matrix contains a zero column")
        if np.any(norms > 1.0 + 1e-5):
            raise ValueError("column norms must not exceed 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.values.shape[1])

    @cached_property
    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.values.astype(np.float64), axis=0)


def _normalize_rows(embs: np.ndarray, what: str) -> np.ndarray:
    embs = np.asarray(embs, dtype=np.float64)
    if embs.ndim == 1:
        embs = embs[None, :]
    if embs.shape[0] == 0:
        raise ValueError(f"{what}: empty embedding list")
    norms = np.linalg.norm(embs, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"{what}: cannot normalize zero-norm embedding")
    return embs / norms[:, None]


def synonym_feature(per_prompt_embeddings: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Average of L2-normalized prompt embeddings for one synonym."""
    stacked = np.asarray(per_prompt_embeddings, dtype=np.float64)
    return _normalize_rows(stacked, "synonym_feature").mean(axis=0)


def class_feature(synonym_features: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Average of L2-normalized synonym features; not re-normalized."""
    stacked = np.asarray(synonym_features, dtype=np.float64)
    return _normalize_rows(stacked, "class_feature").mean(axis=0)


def _dedupe(items: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(items))


def _class_column(
    session: BackendSession,
    templates: PromptTemplateSet,
    synonyms: Sequence[str],
    dim: int | None,
) -> np.ndarray:
    feats = []
    for syn in _dedupe(synonyms):
        prompts = _dedupe(templates.expand(syn))
        embs = np.asarray(session.text_embed(prompts), dtype=np.float64)
        if embs.ndim != 2 or embs.shape[0] != len(prompts):
            raise ProtocolError(
                f"backend returned {embs.shape} embeddings for {len(prompts)} prompts"
            )
        if dim is not None and embs.shape[1] != dim:
            raise ProtocolError(
                f"embedding dimension drifted: expected {dim}, got {embs.shape[1]}"
            )
        feats.append(synonym_feature(embs))
    return class_feature(feats)


def build_class_matrix(
    vocab: ClassVocabulary,
    templates: PromptTemplateSet,
    backend: BackendSession | None = None,
    *,
    synonym_averaging: bool = True,
    workers: int = 1,
    session_factory: Callable[[], BackendSession] | None = None,
) -> ClassTextMatrix:
    """Build the class-text matrix, one TextEmbed batch per synonym.

    Duplicate synonym strings and duplicate prompts are dropped before
    embedding so they cannot reweight the averages. With
    synonym_averaging off, each class uses only its primary name and
    the first template (single-prompt ablation). Multi-worker builds fan
    classes out across sessions from session_factory; assembly is by
    class_id, so completion order never affects the result.
    """
    if backend is None and session_factory is None:
        raise ValueError("either backend or session_factory is required")

    if not synonym_averaging:
        templates = PromptTemplateSet(templates.templates[:1])

    def synonyms_of(class_id: int) -> Sequence[str]:
        entry = vocab[class_id]
        return entry.synonyms if synonym_averaging else entry.synonyms[:1]

    n = len(vocab)
    columns: dict[int, np.ndarray] = {}

    if workers <= 1:
        session = backend if backend is not None else session_factory()  # type: ignore[misc]
        dim = getattr(session, "dim", None)
        try:
            for class_id in range(n):
                columns[class_id] = _class_column(session, templates, synonyms_of(class_id), dim)
        except Exception as exc:
            raise MatrixBuildError(
                f"text embedding failed for class {len(columns)}: {exc}",
                completed=len(columns),
                total=n,
            ) from exc
    else:
        if session_factory is None:
            raise ValueError("multi-worker builds require session_factory")

        def task(class_id: int) -> tuple[int, np.ndarray]:
            session = session_factory()
            try:
                dim = getattr(session, "dim", None)
                return class_id, _class_column(session, templates, synonyms_of(class_id), dim)
            finally:
                session.close()

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(task, cid): cid for cid in range(n)}
            done, pending = wait(futures, return_when=FIRST_EXCEPTION)
            failure: Exception | None = None
            for fut in done:
                exc = fut.exception()
                if exc is not None:
                    failure = exc if failure is None else failure
                    continue
                class_id, column = fut.result()
                columns[class_id] = column
            for fut in pending:
                fut.cancel()
            if failure is not None:
                raise MatrixBuildError(
                    f"text embedding failed: {failure}", completed=len(columns), total=n
                ) from failure

    dims = {c.shape[0] for c in columns.values()}
    if len(dims) > 1:
        raise ProtocolError(f"embedding dimension drifted across classes: {sorted(dims)}")
    matrix = np.stack([columns[cid] for cid in range(n)], axis=1).astype(np.float32)
    return ClassTextMatrix(values=matrix, vocabulary_hash=vocab.content_hash())


def matrix_cache_key(
    vocabulary_hash: str, template_hash: str, backend_id: str, synonym_averaging: bool
) -> str:
    blob = json.dumps(
        [vocabulary_hash, template_hash, backend_id, synonym_averaging],
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_class_matrix(path: str, matrix: ClassTextMatrix, meta: dict | None = None) -> None:
    """Write class_matrix.bin: header {d, |C|, vocabulary_hash} + column-major f32."""
    header = {"vocabulary_hash": matrix.vocabulary_hash}
    if meta:
        header.update(meta)
    header_bytes = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, matrix.dim, matrix.num_classes))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(matrix.values.astype("<f4").ravel(order="F").tobytes())


def load_class_matrix(path: str) -> tuple[ClassTextMatrix, dict]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    if blob[:4] != _MAGIC:
        raise ParseError("not a class-matrix file (bad magic)", path=path)
    try:
        version, dim, n = struct.unpack_from("<III", blob, 4)
        (header_len,) = struct.unpack_from("<I", blob, 16)
        header = json.loads(blob[20 : 20 + header_len].decode("utf-8"))
        data = np.frombuffer(
            blob, dtype="<f4", count=dim * n, offset=20 + header_len
        )
    except (struct.error, json.JSONDecodeError, ValueError) as exc:
        raise ParseError(f"corrupt class-matrix file: {exc}", path=path) from exc
    if version != _VERSION:
        raise ParseError(f"unsupported class-matrix version {version}", path=path)
    if data.size != dim * n:
        raise ParseError("class-matrix data truncated", path=path)
    values = data.reshape((dim, n), order="F")
    vocab_hash = header.get("vocabulary_hash", "")
    matrix = ClassTextMatrix(values=values, vocabulary_hash=vocab_hash)
    return matrix, header


def classify_embedding(
    img_emb: np.ndarray,
    matrix: ClassTextMatrix,
    temperature: float = 0.01,
    *,
    confidence_mode: str = "softmax",
    restrict_to: Sequence[int] | None = None,
) -> tuple[int, float]:
    """Cosine-classify one embedding; returns (class_id, confidence in [0, 1])."""
    class_ids, confidences = classify_batch(
        np.asarray(img_emb)[None, :],
        matrix,
        temperature,
        confidence_mode=confidence_mode,
        restrict_to=restrict_to,
    )
    return int(class_ids[0]), float(confidences[0])


def classify_batch(
    img_embs: np.ndarray,
    matrix: ClassTextMatrix,
    temperature: float = 0.01,
    *,
    confidence_mode: str = "softmax",
    restrict_to: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized classify_embedding over rows of img_embs."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if confidence_mode not in ("softmax", "cosine"):
        raise ValueError(f"unknown confidence mode {confidence_mode!r}")
    embs = np.asarray(img_embs, dtype=np.float64)
    if embs.ndim != 2 or embs.shape[1] != matrix.dim:
        raise ValueError(f"expected embeddings of shape (n, {matrix.dim}), got {embs.shape}")
    norms = np.linalg.norm(embs, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot classify zero-norm embedding")
    embs = embs / norms[:, None]

    if restrict_to is None:
        col_idx = np.arange(matrix.num_classes)
        values = matrix.values
        col_norms = matrix.column_norms
    else:
        col_idx = np.asarray(sorted(set(restrict_to)), dtype=np.int64)
        if col_idx.size == 0 or col_idx[0] < 0 or col_idx[-1] >= matrix.num_classes:
            raise ValueError("restrict_to must name valid class ids")
        values = matrix.values[:, col_idx]
        col_norms = matrix.column_norms[col_idx]

    cosines = (embs @ values.astype(np.float64)) / col_norms[None, :]
    local_best = np.argmax(cosines, axis=1)
    class_ids = col_idx[local_best]
    if confidence_mode == "cosine":
        best = cosines[np.arange(len(embs)), local_best]
        confidences = np.clip(best, 0.0, 1.0)
    else:
        logits = cosines / temperature
        logits -= logits.max(axis=1, keepdims=True)
        expd = np.exp(logits)
        probs = expd / expd.sum(axis=1, keepdims=True)
        confidences = probs[np.arange(len(embs)), local_best]
    return class_ids.astype(np.int64), confidences


def label_background(
    dets: Sequence[RawDetection],
    image_ref: str,
    matrix: ClassTextMatrix,
    backend: BackendSession,
    *,
    temperature: float = 0.01,
    context_pad: float = 0.0,
    image_size: tuple[int, int] | None = None,
    confidence_mode: str = "softmax",
    restrict_to: Sequence[int] | None = None,
) -> list[LabeledDetection]:
    """Zero-shot label background boxes; order and BG provenance preserved."""
    for det in dets:
        if det.source is not SourceTag.BG:
            raise ValueError(f"label_background expects BG detections, got {det.source.value}")
    if not dets:
        return []
    boxes: list[BBox] = []
    for det in dets:
        box = det.box
        if image_size is not None:
            box = clamp_to_image(box, image_size[0], image_size[1])
        boxes.append(box)
    embs = backend.image_embed_roi(image_ref, boxes, context_pad=context_pad)
    embs = np.asarray(embs, dtype=np.float64)
    if embs.shape[0] != len(dets):
        raise ProtocolError(
            f"backend returned {embs.shape[0]} embeddings for {len(dets)} boxes"
        )
    class_ids, confidences = classify_batch(
        embs, matrix, temperature, confidence_mode=confidence_mode, restrict_to=restrict_to
    )
    return [
        LabeledDetection(
            box=det.box,
            class_id=int(class_ids[i]),
            score=float(confidences[i]),
            source=SourceTag.BG,
        )
        for i, det in enumerate(dets)
    ]
