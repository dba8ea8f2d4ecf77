"""Deterministic question embeddings.

Character 3-grams of the lowercased text are hashed into ``d`` signed
buckets and the result is L2-normalized. The hash is a fixed keyed BLAKE2b,
so vectors are identical across processes and platforms.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Mapping

import numpy as np

DEFAULT_DIM = 64
_KEY = b"cascade-lab-3gram"


class EmbeddingFileError(ValueError):
    pass


def _gram_hash(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=_KEY).digest()
    return int.from_bytes(digest, "little")


def embed_question(text: str, d: int = DEFAULT_DIM) -> np.ndarray:
    """Unit-norm signed-hash embedding of ``text``; zeros for empty text."""
    if d < 8:
        raise ValueError("embedding dimension must be at least 8")
    vec = np.zeros(d)
    text = text.lower()
    if not text:
        return vec
    grams = [text[i:i + 3] for i in range(len(text) - 2)] or [text]
    for g in grams:
        h = _gram_hash(g)
        vec[h % d] += 1.0 if (h >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # every gram cancelled out; fall back to a single deterministic bucket
        vec[_gram_hash(text) % d] = 1.0
        return vec
    return vec / norm


class EmbeddingTable(Mapping):
    """question_id -> unit vector, with a clear error for unknown ids."""

    def __init__(self, vectors: dict, d: int):
        self._v = vectors
        self.d = d

    def __getitem__(self, qid):
        try:
            return self._v[qid]
        except KeyError:
            raise KeyError(f"no embedding for question {qid}") from None

    def __iter__(self):
        return iter(self._v)

    def __len__(self):
        return len(self._v)


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def save_embeddings(vectors: Mapping, path) -> None:
    """Write ``# d=<dim>`` then ``question_id,v_1,...,v_d`` rows."""
    dims = {len(v) for v in vectors.values()}
    if len(dims) > 1:
        raise EmbeddingFileError(f"inconsistent dimensions {sorted(dims)}")
    d = dims.pop() if dims else 0
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# d={d}\n")
        for qid in sorted(vectors):
            fh.write(",".join([str(int(qid))] + [repr(float(x)) for x in vectors[qid]]) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    """Read an embedding file; rows are re-normalized to unit length."""
    with Path(path).open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# d="):
        raise EmbeddingFileError("line 1: expected header '# d=<dim>'")
    try:
        d = int(lines[0][4:])
    except ValueError as exc:
        raise EmbeddingFileError("line 1: bad dimension") from exc
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) - 1 != d:
            raise EmbeddingFileError(
                f"line {lineno}: dimension {len(parts) - 1} does not match header d={d}")
        qid = int(parts[0])
        if qid in out:
            raise EmbeddingFileError(f"line {lineno}: duplicate question {qid}")
        out[qid] = _normalize(np.array([float(x) for x in parts[1:]]))
    return EmbeddingTable(out, d)


def embed_trace(trace, d: int = DEFAULT_DIM) -> EmbeddingTable:
    return EmbeddingTable({q.question_id: embed_question(q.text, d) for q in trace.questions}, d)
