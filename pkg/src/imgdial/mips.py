"""Exact maximum-inner-product search over unit-normalized embeddings.

For unit vectors, ranking by inner product equals ranking by Euclidean
distance, so this index doubles as exact nearest-neighbour search. Rows are
stored as float32; scores accumulate in float64.
"""

from __future__ import annotations

import struct

import numpy as np

from . import kernels

MAGIC = b"MIDX"
VERSION = 1
UNIT_TOL = 1e-6

_HEADER = struct.Struct("<4sIIQ")
_LEN = struct.Struct("<I")


class IndexFormatError(ValueError):
    pass


class BadMagicError(IndexFormatError):
    pass


class UnsupportedVersionError(IndexFormatError):
    pass


class TruncatedIndexError(IndexFormatError):
    pass


class VectorIndex:
    def __init__(self, dim):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.ids = []
        self._id_set = set()
        self._rows = []
        self._matrix = np.zeros((0, self.dim), dtype=np.float32)
        self._rank = np.zeros(0, dtype=np.int64)
        self._dirty = False
        self.frozen = False

    def __len__(self):
        return len(self.ids)

    @property
    def matrix(self):
        self._sync()
        return self._matrix

    def _sync(self):
        if self._dirty:
            self._matrix = np.vstack([self._matrix] + self._rows).astype(np.float32, copy=False)
            self._rows = []
            order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
            rank = np.empty(len(self.ids), dtype=np.int64)
            rank[order] = np.arange(len(self.ids))
            self._rank = rank
            self._dirty = False

    def add(self, id, v):
        if self.frozen:
            raise RuntimeError("index is frozen")
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: index {self.dim}, vector {v.shape[0]}")
        if id in self._id_set:
            raise ValueError(f"duplicate id: {id}")
        if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_TOL:
            raise ValueError("not unit-normalized")
        self.ids.append(id)
        self._id_set.add(id)
        self._rows.append(v.astype(np.float32)[None, :])
        self._dirty = True
        return self

    def add_many(self, ids, vectors):
        for i, v in zip(ids, np.asarray(vectors)):
            self.add(i, v)
        return self

    def freeze(self):
        self._sync()
        self._matrix.setflags(write=False)
        self.frozen = True
        return self

    def _queries(self, queries):
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: index {self.dim}, query {q.shape[1]}")
        return q

    def batch_search(self, queries, k):
        """Top-k ``(id, score)`` lists for every query row; descending score, ties by id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.ids:
            raise ValueError("empty index")
        q = self._queries(queries)
        self._sync()
        idx, scores = kernels.topk_scan(self._matrix, q, int(k), self._rank)
        return [
            [(self.ids[int(i)], float(s)) for i, s in zip(ri, rs)]
            for ri, rs in zip(idx, scores)
        ]

    def search_top_k(self, q, k):
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        return self.batch_search(q[None, :], k)[0]

    def __eq__(self, other):
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.ids == other.ids
            and np.array_equal(self.matrix, other.matrix)
        )

    def save(self, path):
        self._sync()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, self.dim, len(self.ids)))
            for i in self.ids:
                b = i.encode("utf-8")
                fh.write(_LEN.pack(len(b)))
                fh.write(b)
            fh.write(np.ascontiguousarray(self._matrix, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < 4 or data[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic")
        if len(data) < _HEADER.size:
            raise TruncatedIndexError(f"{path}: truncated index")
        _, version, dim, count = _HEADER.unpack_from(data)
        if version != VERSION:
            raise UnsupportedVersionError(f"{path}: unsupported index version {version}")
        off = _HEADER.size
        ids = []
        for _ in range(count):
            if off + _LEN.size > len(data):
                raise TruncatedIndexError(f"{path}: truncated index")
            (n,) = _LEN.unpack_from(data, off)
            off += _LEN.size
            if off + n > len(data):
                raise TruncatedIndexError(f"{path}: truncated index")
            ids.append(data[off:off + n].decode("utf-8"))
            off += n
        need = count * dim * 4
        if len(data) - off < need:
            raise TruncatedIndexError(f"{path}: truncated index")
        if len(data) - off > need:
            raise IndexFormatError(f"{path}: trailing bytes after matrix")
        matrix = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off)
        index = cls(dim)
        index.ids = ids
        index._id_set = set(ids)
        if len(index._id_set) != len(ids):
            raise IndexFormatError(f"{path}: duplicate ids")
        index._rows = [matrix.reshape(count, dim).astype(np.float32)]
        index._dirty = True
        return index.freeze()

