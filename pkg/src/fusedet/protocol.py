"""Wire protocol to the model backend and the socket client session.

Transport: one length-prefixed JSON message per request/response over a
byte stream (4-byte big-endian length, then UTF-8 JSON). Request kinds:
``text_embed``, ``image_embed_roi``, ``segment_boxes``; error responses
carry {"kind": "error", "message": ...}. Embeddings travel as base64
little-endian float32 arrays. A session opens with a ``hello`` handshake
that fixes the embedding dimension for its whole lifetime.

Sessions are not thread-safe; use one session per worker.
"""

from __future__ import annotations

import base64
import json
import socket
import struct
from typing import Protocol, Sequence
from urllib.parse import urlparse

import numpy as np

from fusedet.errors import BackendError, ProtocolError
from fusedet.geometry import BBox
from fusedet.rle import SegmentationResult

_HEADER = struct.Struct(">I")
MAX_MESSAGE_BYTES = 64 * 1024 * 1024


def encode_message(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message of {len(body)} bytes exceeds limit")
    return _HEADER.pack(len(body)) + body


def read_message(read_exact) -> dict:
    """Read one framed message via a callable read_exact(n) -> bytes."""
    header = read_exact(_HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"incoming message of {length} bytes exceeds limit")
    body = read_exact(length)
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed message body: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    return obj


def encode_embedding(vec: np.ndarray) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


def decode_embedding(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:  # noqa: BLE001
        raise ProtocolError(f"invalid base64 embedding payload: {exc}") from exc
    if len(raw) % 4 != 0:
        raise ProtocolError("embedding payload length not a multiple of 4 bytes")
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)


class BackendSession(Protocol):
    """What the pipeline needs from any backend (socket, stub, replay)."""

    @property
    def dim(self) -> int: ...

    def text_embed(self, texts: Sequence[str]) -> np.ndarray: ...

    def image_embed_roi(
        self, image_ref: str, boxes: Sequence[BBox], context_pad: float = 0.0
    ) -> np.ndarray: ...

    def segment_boxes(
        self, image_ref: str, boxes: Sequence[BBox]
    ) -> list[SegmentationResult]: ...

    def close(self) -> None: ...


def _boxes_payload(boxes: Sequence[BBox]) -> list[list[float]]:
    return [[b.x1, b.y1, b.x2, b.y2] for b in boxes]


class SocketBackendSession:
    """Backend client over a TCP socket (endpoint ``tcp://host:port``)."""

    def __init__(self, endpoint: str, timeout: float = 120.0):
        parsed = urlparse(endpoint)
        if parsed.scheme != "tcp" or parsed.hostname is None or parsed.port is None:
            raise ValueError(f"expected tcp://host:port endpoint, got {endpoint!r}")
        self._sock = socket.create_connection((parsed.hostname, parsed.port), timeout=timeout)
        self._file = self._sock.makefile("rwb")
        hello = self.request({"kind": "hello"})
        if hello.get("kind") != "hello" or not isinstance(hello.get("dim"), int):
            raise ProtocolError(f"bad handshake response: {hello}")
        self._dim: int = hello["dim"]
        self.backend_id: str = str(hello.get("backend_id", "unknown"))

    @property
    def dim(self) -> int:
        return self._dim

    def _read_exact(self, n: int) -> bytes:
        data = self._file.read(n)
        if data is None or len(data) != n:
            raise ProtocolError("connection closed mid-message")
        return data

    def request(self, obj: dict) -> dict:
        self._file.write(encode_message(obj))
        self._file.flush()
        response = read_message(self._read_exact)
        if response.get("kind") == "error":
            raise BackendError(str(response.get("message", "backend error")))
        return response

    def _decode_vectors(self, response: dict, expected: int) -> np.ndarray:
        if response.get("kind") != "embeddings":
            raise ProtocolError(f"expected embeddings response, got {response.get('kind')!r}")
        vectors = response.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != expected:
            raise ProtocolError(
                f"response cardinality {len(vectors) if isinstance(vectors, list) else '?'} "
                f"!= request cardinality {expected}"
            )
        out = np.empty((expected, self._dim), dtype=np.float32)
        for i, payload in enumerate(vectors):
            vec = decode_embedding(payload)
            if vec.shape[0] != self._dim:
                raise ProtocolError(
                    f"embedding dimension {vec.shape[0]} drifted from handshake {self._dim}"
                )
            out[i] = vec
        return out

    def text_embed(self, texts: Sequence[str]) -> np.ndarray:
        response = self.request({"kind": "text_embed", "texts": list(texts)})
        return self._decode_vectors(response, len(texts))

    def image_embed_roi(
        self, image_ref: str, boxes: Sequence[BBox], context_pad: float = 0.0
    ) -> np.ndarray:
        response = self.request(
            {
                "kind": "image_embed_roi",
                "image_ref": image_ref,
                "boxes": _boxes_payload(boxes),
                "context_pad": context_pad,
            }
        )
        return self._decode_vectors(response, len(boxes))

    def segment_boxes(self, image_ref: str, boxes: Sequence[BBox]) -> list[SegmentationResult]:
        response = self.request(
            {"kind": "segment_boxes", "image_ref": image_ref, "boxes": _boxes_payload(boxes)}
        )
        if response.get("kind") != "segmentations":
            raise ProtocolError(f"expected segmentations response, got {response.get('kind')!r}")
        results = response.get("results")
        if not isinstance(results, list) or len(results) != len(boxes):
            raise ProtocolError(
                f"response cardinality {len(results) if isinstance(results, list) else '?'} "
                f"!= request cardinality {len(boxes)}"
            )
        out = []
        for rec in results:
            if not isinstance(rec, dict):
                raise ProtocolError("segmentation record must be an object")
            try:
                out.append(
                    SegmentationResult(
                        counts=tuple(int(c) for c in rec["counts"]),
                        height=int(rec["height"]),
                        width=int(rec["width"]),
                        sam_score=float(rec["score"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"bad segmentation record: {exc}") from exc
        return out

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "SocketBackendSession":
        return self

    def __exit__(self, *_exc) -> None:
        self.close()
