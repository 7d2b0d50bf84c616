"""Convert a title->description mapping file into an embedding file.

Input (line-delimited JSON):   {"title": str, "description": str}
Output (line-delimited JSON):  {"key": <title>, "vector": [float, ...]}

One record per title, vectors L2-normalized at export time so downstream
cosine thresholding reduces to a plain dot product.  Records are written in
sorted title order, which makes re-runs byte-identical.

Encoder identifiers:
    hashing:<dim>   deterministic char-n-gram hashing encoder (no downloads;
                    the default, dim 256)
    st:<model>      a sentence-transformers model available locally
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class ExportError(Exception):
    """Bad input data or an unavailable encoder."""


@dataclass
class ExportJob:
    mapping_path: str
    output_path: str
    encoder: str = "hashing:256"
    batch_size: int = 64

    def __post_init__(self):
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be >= 1, got {self.batch_size}")


def load_mapping(path: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExportError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            title = record.get("title")
            desc = record.get("description")
            if not isinstance(title, str) or not title:
                raise ExportError(f"{path}:{lineno}: missing title")
            if not isinstance(desc, str) or not desc.strip():
                raise ExportError(f"{path}:{lineno}: empty description text for {title!r}")
            if title in mapping:
                raise ExportError(f"{path}:{lineno}: duplicate title {title!r}")
            mapping[title] = desc
    if not mapping:
        raise ExportError(f"{path}: empty mapping file")
    return mapping


def _make_encoder(identifier: str):
    """Return a callable texts -> (n, dim) float64 array of raw embeddings."""
    if identifier.startswith("hashing"):
        _, _, dim_part = identifier.partition(":")
        try:
            dim = int(dim_part) if dim_part else 256
        except ValueError:
            raise ExportError(f"bad hashing dimension in encoder id {identifier!r}") from None
        if dim < 2:
            raise ExportError(f"hashing dimension must be >= 2, got {dim}")
        from sklearn.feature_extraction.text import HashingVectorizer

        vectorizer = HashingVectorizer(
            n_features=dim, analyzer="char_wb", ngram_range=(3, 5), norm=None,
            alternate_sign=True,
        )

        def encode(texts: list[str]) -> np.ndarray:
            return np.asarray(vectorizer.transform(texts).todense(), dtype=np.float64)

        return encode
    if identifier.startswith("st:"):
        model_name = identifier[3:]
        try:
            from sentence_transformers import SentenceTransformer

            model = SentenceTransformer(model_name)
        except Exception as exc:  # model missing, offline, or package absent
            raise ExportError(f"cannot load sentence encoder {model_name!r}: {exc}") from exc

        def encode(texts: list[str]) -> np.ndarray:
            return np.asarray(model.encode(texts, convert_to_numpy=True), dtype=np.float64)

        return encode
    raise ExportError(f"unknown encoder identifier {identifier!r}")


def export(job: ExportJob) -> int:
    """Run the export; returns the number of records written."""
    mapping = load_mapping(job.mapping_path)
    encode = _make_encoder(job.encoder)
    titles = sorted(mapping)
    rows: list[np.ndarray] = []
    for start in range(0, len(titles), job.batch_size):
        batch = titles[start : start + job.batch_size]
        embedded = encode([mapping[t] for t in batch])
        if embedded.ndim != 2 or embedded.shape[0] != len(batch):
            raise ExportError("encoder returned a malformed batch")
        rows.append(embedded)
    matrix = np.vstack(rows)
    norms = np.linalg.norm(matrix, axis=1)
    for title, norm in zip(titles, norms):
        if not np.isfinite(norm) or norm < 1e-12:
            raise ExportError(f"description for {title!r} produced a degenerate vector")
    matrix = matrix / norms[:, None]
    with open(job.output_path, "w", encoding="utf-8") as fh:
        for title, vector in zip(titles, matrix):
            fh.write(json.dumps({"key": title, "vector": vector.tolist()}, sort_keys=True))
            fh.write("\n")
    return len(titles)
