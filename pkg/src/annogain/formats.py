"""Binary file formats for embeddings and labels.

Embedding file ("IEMB"): header, then ``count`` rows of ``dim`` float32
values, then an optional id table of length-prefixed UTF-8 strings. When the
id table is absent, ids are the row indices. Label file ("ILBL"): header
plus ``count`` signed 32-bit labels where -1 means unlabeled. Both formats
are little-endian throughout and round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

EMB_MAGIC = b"IEMB"
EMB_VERSION = 1
LABEL_MAGIC = b"ILBL"
LABEL_VERSION = 1


class FileFormatError(ValueError):
    pass


@dataclass
class EmbeddingFile:
    vectors: np.ndarray  # (count, dim) float32
    ids: list[str] | None = None  # None -> row indices

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def id_list(self) -> list[str]:
        if self.ids is not None:
            return list(self.ids)
        return [str(i) for i in range(self.count)]

    def to_bytes(self) -> bytes:
        if self.ids is not None and len(self.ids) != self.count:
            raise FileFormatError("id table length disagrees with vector count")
        parts = [EMB_MAGIC, struct.pack("<H", EMB_VERSION),
                 struct.pack("<I", self.dim), struct.pack("<Q", self.count),
                 np.ascontiguousarray(self.vectors, dtype="<f4").tobytes()]
        if self.ids is not None:
            for sid in self.ids:
                raw = sid.encode("utf-8")
                parts.append(struct.pack("<I", len(raw)))
                parts.append(raw)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EmbeddingFile":
        if len(data) < 18:
            raise FileFormatError("truncated embedding file: missing header")
        if data[:4] != EMB_MAGIC:
            raise FileFormatError(f"bad magic {data[:4]!r}, expected {EMB_MAGIC!r}")
        version = struct.unpack("<H", data[4:6])[0]
        if version != EMB_VERSION:
            raise FileFormatError(
                f"unsupported embedding file version {version}, expected {EMB_VERSION}")
        dim = struct.unpack("<I", data[6:10])[0]
        count = struct.unpack("<Q", data[10:18])[0]
        need = 18 + count * dim * 4
        if len(data) < need:
            raise FileFormatError(
                f"truncated embedding file: need {need} bytes, have {len(data)}")
        vecs = np.frombuffer(data[18:need], dtype="<f4").reshape(count, dim).copy()
        ids: list[str] | None = None
        if len(data) > need:
            ids = []
            pos = need
            for _ in range(count):
                if pos + 4 > len(data):
                    raise FileFormatError("truncated id table")
                ln = struct.unpack("<I", data[pos : pos + 4])[0]
                pos += 4
                if pos + ln > len(data):
                    raise FileFormatError("truncated id table entry")
                ids.append(data[pos : pos + ln].decode("utf-8"))
                pos += ln
            if pos != len(data):
                raise FileFormatError("trailing bytes after id table")
        return cls(vectors=vecs, ids=ids)

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "EmbeddingFile":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class LabelFile:
    num_classes: int
    labels: np.ndarray  # (count,) int32, -1 = unlabeled

    @property
    def count(self) -> int:
        return self.labels.shape[0]

    def to_bytes(self) -> bytes:
        labels = np.ascontiguousarray(self.labels, dtype="<i4")
        valid = (labels >= -1) & (labels < self.num_classes)
        if not np.all(valid):
            raise FileFormatError("labels must lie in {-1, 0..num_classes-1}")
        return b"".join([
            LABEL_MAGIC, struct.pack("<H", LABEL_VERSION),
            struct.pack("<I", self.num_classes), struct.pack("<Q", self.count),
            labels.tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "LabelFile":
        if len(data) < 18:
            raise FileFormatError("truncated label file: missing header")
        if data[:4] != LABEL_MAGIC:
            raise FileFormatError(f"bad magic {data[:4]!r}, expected {LABEL_MAGIC!r}")
        version = struct.unpack("<H", data[4:6])[0]
        if version != LABEL_VERSION:
            raise FileFormatError(
                f"unsupported label file version {version}, expected {LABEL_VERSION}")
        num_classes = struct.unpack("<I", data[6:10])[0]
        count = struct.unpack("<Q", data[10:18])[0]
        need = 18 + count * 4
        if len(data) != need:
            raise FileFormatError(
                f"label file has {len(data)} bytes, expected exactly {need}")
        labels = np.frombuffer(data[18:], dtype="<i4").copy()
        if np.any((labels < -1) | (labels >= num_classes)):
            raise FileFormatError("labels must lie in {-1, 0..num_classes-1}")
        return cls(num_classes=num_classes, labels=labels)

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "LabelFile":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
