"""Embedding post-processing: projection, mean pooling, normalization, scoring.

Encoders live upstream; this module only does the math that turns token
hidden states into final embeddings and scores. Matrices travel as files
(see load_matrix) or as in-memory EmbeddingMatrix values.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DataError, NumericError

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-major real matrix of token states or final embeddings."""

    rows: int
    dim: int
    data: np.ndarray
    ids: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.dim < 1:
            raise DataError(f"dim must be >= 1, got {self.dim}")
        if self.rows < 0:
            raise DataError(f"rows must be >= 0, got {self.rows}")
        arr = np.asarray(self.data, dtype=float)
        if arr.size != self.rows * self.dim:
            raise DataError(
                f"data has {arr.size} values, expected rows*dim = {self.rows * self.dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError("matrix entries must be finite")
        object.__setattr__(self, "data", arr.reshape(self.rows, self.dim))
        if self.ids is not None and len(self.ids) != self.rows:
            raise DataError(
                f"{len(self.ids)} ids for {self.rows} rows"
            )

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]],
                  ids: Optional[Sequence[str]] = None) -> "EmbeddingMatrix":
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2:
            raise DataError(f"expected a 2-d array of rows, got ndim={arr.ndim}")
        return cls(arr.shape[0], arr.shape[1], arr,
                   tuple(ids) if ids is not None else None)


@dataclass(frozen=True)
class Projection:
    """Affine map h' = W h + b taking hidden size d down (or up) to size m."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2:
            raise DataError(f"weight must be 2-d, got ndim={w.ndim}")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise DataError(
                f"bias length {b.shape} inconsistent with weight shape {w.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DataError("projection entries must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


def project(tokens: EmbeddingMatrix, p: Projection) -> EmbeddingMatrix:
    """Apply h'_i = W h_i + b to every row.

    Raises:
        DataError: token dim does not match the projection's input dim.
    """
    if tokens.dim != p.in_dim:
        raise DataError(
            f"token dim {tokens.dim} does not match projection input dim {p.in_dim}"
        )
    out = tokens.data @ p.weight.T + p.bias
    return EmbeddingMatrix(tokens.rows, p.out_dim, out, tokens.ids)


def mean_pool(tokens: EmbeddingMatrix) -> np.ndarray:
    """Element-wise mean over rows; the final single-vector embedding.

    Raises:
        DataError: zero rows.
    """
    if tokens.rows == 0:
        raise DataError("cannot pool an empty matrix")
    return tokens.data.mean(axis=0)


def l2_normalize(v: Sequence[float]) -> np.ndarray:
    """Scale v to unit Euclidean norm.

    Raises:
        NumericError: norm <= 1e-12, a degenerate embedding.
    """
    arr = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(arr))
    if not norm > ZERO_NORM_EPS:
        raise NumericError(f"cannot normalize near-zero vector (norm {norm})")
    return arr / norm


def score_pairs(queries: EmbeddingMatrix, docs: EmbeddingMatrix,
                normalize: bool = False) -> np.ndarray:
    """All-pairs inner products S[i][j] = q_i . d_j.

    With normalize=True each row is L2-normalized first, so scores are
    cosines. Temperature is not applied here; it belongs to the metrics
    layer.

    Raises:
        DataError: dimension mismatch.
        NumericError: a near-zero row under normalize=True.
    """
    if queries.dim != docs.dim:
        raise DataError(
            f"query dim {queries.dim} does not match doc dim {docs.dim}"
        )
    q = queries.data
    d = docs.data
    if normalize:
        q = np.vstack([l2_normalize(row) for row in q]) if queries.rows else q
        d = np.vstack([l2_normalize(row) for row in d]) if docs.rows else d
    return q @ d.T


def load_matrix(path: str) -> EmbeddingMatrix:
    """Read a matrix file: one `id v1 v2 ... vd` line per row.

    Blank lines and `#` comments are skipped. When `<path>.json` exists it
    must contain {"rows": n, "dim": d} matching the parsed content.

    Raises:
        DataError: malformed line (with line number), inconsistent row
            widths, empty file, or sidecar mismatch.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    ids = []
    rows = []
    dim = None
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: expected `id v1 ... vd`")
        try:
            values = [float(tok) for tok in parts[1:]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise DataError(
                f"{path}:{lineno}: row has {len(values)} values, expected {dim}"
            )
        ids.append(parts[0])
        rows.append(values)
    if dim is None:
        raise DataError(f"{path}: no matrix rows")
    matrix = EmbeddingMatrix(len(rows), dim, np.asarray(rows), tuple(ids))

    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{sidecar}: invalid JSON: {exc}") from None
        if meta.get("rows") != matrix.rows or meta.get("dim") != matrix.dim:
            raise DataError(
                f"{sidecar}: declares rows={meta.get('rows')} dim={meta.get('dim')}, "
                f"file has rows={matrix.rows} dim={matrix.dim}"
            )
    return matrix


def save_matrix(matrix: EmbeddingMatrix, path: str, sidecar: bool = True):
    """Write the line-oriented matrix format; repr floats round-trip exactly."""
    ids = matrix.ids or tuple(str(i) for i in range(matrix.rows))
    with open(path, "w", encoding="utf-8") as fh:
        for rid, row in zip(ids, matrix.data):
            fh.write(rid + " " + " ".join(repr(float(v)) for v in row) + "\n")
    if sidecar:
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump({"rows": matrix.rows, "dim": matrix.dim}, fh)
            fh.write("\n")
