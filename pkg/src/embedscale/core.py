"""Domain types and observation-table ingestion shared by the fitting and planning modules.

An observation is one measured point: a named model evaluated at one
embedding dimension on one dataset, with its contrastive entropy.
Parameter counts are stored in raw parameters; any unit scaling is the
fitter's business, not the table's.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from math import isfinite
from numbers import Rational

CSV_HEADER = ("model_name", "n_params", "embed_dim", "dataset", "entropy")


class DataError(ValueError):
    """Malformed, inconsistent, or out-of-contract input data."""


class NumericError(ArithmeticError):
    """A numeric routine produced no usable result."""


@dataclass(frozen=True)
class Observation:
    """One measured (model, embedding dimension, dataset) -> entropy point."""

    model_name: str
    n_params: float
    embed_dim: int
    dataset: str
    entropy: float

    def __post_init__(self):
        if not self.model_name:
            raise DataError("model_name must be nonempty")
        if not self.dataset:
            raise DataError("dataset must be nonempty")
        if not (isfinite(self.n_params) and self.n_params > 0):
            raise DataError(f"n_params must be positive and finite, got {self.n_params}")
        if self.embed_dim < 1:
            raise DataError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not (isfinite(self.entropy) and self.entropy >= 0):
            raise DataError(f"entropy must be nonnegative and finite, got {self.entropy}")

    @property
    def key(self) -> tuple[str, int, str]:
        """Uniqueness key within a table."""
        return (self.model_name, self.embed_dim, self.dataset)


@dataclass(frozen=True)
class ObservationTable:
    """Ordered, validated collection of observations.

    Rows keep their input order. (model_name, embed_dim, dataset) must be
    unique; duplicates are rejected at construction rather than silently
    collapsed so that fixture files stay trustworthy.
    """

    rows: tuple[Observation, ...]
    provenance: str = ""

    def __post_init__(self):
        if not self.rows:
            raise DataError("empty table")
        seen = set()
        for row in self.rows:
            if row.key in seen:
                raise DataError(
                    f"duplicate observation key {row.key!r}"
                )
            seen.add(row.key)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def model_names(self) -> tuple[str, ...]:
        """Distinct model names in first-appearance order."""
        out = []
        for row in self.rows:
            if row.model_name not in out:
                out.append(row.model_name)
        return tuple(out)

    @property
    def datasets(self) -> tuple[str, ...]:
        """Distinct dataset tags in first-appearance order."""
        out = []
        for row in self.rows:
            if row.dataset not in out:
                out.append(row.dataset)
        return tuple(out)


@dataclass(frozen=True)
class SweepConfig:
    """Embedding-dimension sweep: multiples of an encoder's native hidden size."""

    base_hidden: int
    multipliers: tuple = field(default=(Fraction(1, 4), Fraction(1, 2), 1, 2, 4, 8, 16))

    def __post_init__(self):
        if self.base_hidden < 1:
            raise DataError(f"base_hidden must be >= 1, got {self.base_hidden}")
        if not self.multipliers:
            raise DataError("multipliers must be nonempty")
        for phi in self.multipliers:
            if not phi > 0:
                raise DataError(f"multipliers must be positive, got {phi}")


def parse_observations(text, fmt: str = "csv") -> ObservationTable:
    """Parse an observation table from CSV text.

    Expects the exact header ``model_name,n_params,embed_dim,dataset,entropy``.
    Lines starting with ``#`` and blank lines are ignored. Values are parsed
    as 64-bit floats / integers with no rounding.

    Args:
        text: CSV content as a string or a readable text stream.
        fmt: Input format; only ``"csv"`` is supported.

    Returns:
        A validated ObservationTable with row order preserved.

    Raises:
        DataError: on unknown format, bad header, malformed rows (reported
            with their line number), duplicate keys, or an empty body.
    """
    if fmt != "csv":
        raise DataError(f"unsupported format {fmt!r}")
    if isinstance(text, str):
        text = io.StringIO(text)

    numbered = [
        (lineno, line)
        for lineno, line in enumerate(text, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not numbered:
        raise DataError("empty table: no header row")

    header_line = numbered[0][1]
    header = next(csv.reader([header_line]))
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise DataError(
            f"line {numbered[0][0]}: expected header {','.join(CSV_HEADER)!r}, "
            f"got {header_line.strip()!r}"
        )

    rows = []
    for lineno, line in numbered[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(CSV_HEADER):
            raise DataError(
                f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(fields)}"
            )
        model_name, n_params_s, embed_dim_s, dataset, entropy_s = (
            f.strip() for f in fields
        )
        try:
            n_params = float(n_params_s)
            embed_dim = int(embed_dim_s)
            entropy = float(entropy_s)
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        try:
            rows.append(
                Observation(model_name, n_params, embed_dim, dataset, entropy)
            )
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None

    if not rows:
        raise DataError("empty table")
    try:
        return ObservationTable(tuple(rows))
    except DataError as exc:
        raise DataError(str(exc)) from None


def serialize_observations(table: ObservationTable) -> str:
    """Render a table back to CSV with round-trip-exact numeric formatting."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in table:
        writer.writerow(
            [row.model_name, repr(row.n_params), row.embed_dim, row.dataset,
             repr(row.entropy)]
        )
    return out.getvalue()


def filter_by(table: ObservationTable, model_name: str | None = None,
              dataset: str = "") -> ObservationTable:
    """Select the rows of one dataset (and optionally one model), preserving order.

    Raises:
        DataError: if the dataset tag is absent from the table or the
            selection comes back empty.
    """
    if not dataset:
        raise DataError("dataset tag is required")
    if dataset not in table.datasets:
        raise DataError(f"dataset {dataset!r} not present in table")
    rows = tuple(
        row for row in table
        if row.dataset == dataset
        and (model_name is None or row.model_name == model_name)
    )
    if not rows:
        raise DataError(
            f"empty selection: no rows for model={model_name!r}, dataset={dataset!r}"
        )
    return ObservationTable(rows, provenance=table.provenance)


def expand_sweep(cfg: SweepConfig) -> list[int]:
    """Expand a sweep config into the sorted unique dimension list {round(phi * d)}.

    Rational multipliers expand exactly; float multipliers go through
    ordinary rounding.

    Raises:
        DataError: if any phi * d falls below 1.
    """
    dims = set()
    for phi in cfg.multipliers:
        value = phi * cfg.base_hidden
        if value < 1:
            raise DataError(
                f"multiplier {phi} of hidden size {cfg.base_hidden} "
                f"gives dimension {value} < 1"
            )
        if isinstance(value, Rational):
            dims.add(int(round(value)))
        else:
            dims.add(int(round(float(value))))
    return sorted(dims)
