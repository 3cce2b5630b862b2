"""Schema-aware representation of mixed-type tables.

Tables are held as a dense float matrix: continuous cells carry raw values,
categorical/ordinal cells carry integer codes in {1..K}, and missing cells
carry NaN alongside a binary mask (True = missing). Model-space encoding
z-scores continuous columns and one-hot expands categorical columns.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
ORDINAL = "ordinal"

KINDS = (CONTINUOUS, CATEGORICAL, ORDINAL)

# tokens treated as a missing cell on CSV input
MISSING_TOKENS = ("", "NA")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    cardinality: int | None = None  # K for categorical, number of levels for ordinal

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind == CONTINUOUS:
            if self.cardinality is not None:
                raise SchemaError(f"continuous column {self.name!r} cannot have a cardinality")
        else:
            if self.cardinality is None or self.cardinality < 2:
                raise SchemaError(f"column {self.name!r} needs cardinality >= 2")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered column specs plus the continuous/discrete index split."""

    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if not self.columns:
            raise SchemaError("schema has no columns")

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def cont_idx(self) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.columns) if c.kind == CONTINUOUS], dtype=int)

    @property
    def cat_idx(self) -> np.ndarray:
        """Indices routed to the discrete channel (categorical and ordinal)."""
        return np.array([i for i, c in enumerate(self.columns) if c.kind != CONTINUOUS], dtype=int)

    @property
    def cat_cards(self) -> list[int]:
        return [self.columns[i].cardinality for i in self.cat_idx]

    def to_dict(self) -> dict:
        out = {}
        for c in self.columns:
            if c.kind == CONTINUOUS:
                out[c.name] = {"kind": c.kind}
            elif c.kind == ORDINAL:
                out[c.name] = {"kind": c.kind, "R": c.cardinality}
            else:
                out[c.name] = {"kind": c.kind, "K": c.cardinality}
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "FeatureSchema":
        cols = []
        for name, entry in spec.items():
            kind = entry.get("kind")
            card = entry.get("K", entry.get("R"))
            cols.append(ColumnSpec(name, kind, int(card) if card is not None else None))
        return cls(tuple(cols))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class MaskedTable:
    """Raw table plus missingness mask (True = missing).

    Invariant: mask is True exactly where values is NaN.
    """

    values: np.ndarray  # (n, d) float64, NaN at missing cells
    mask: np.ndarray    # (n, d) bool
    schema: FeatureSchema

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask shapes differ")
        if self.values.shape[1] != self.schema.d:
            raise ValueError("column count does not match schema")
        if np.isnan(self.values[~self.mask]).any():
            raise ValueError("observed cell holds the missing marker")
        if not np.isnan(self.values[self.mask]).all():
            raise ValueError("missing cell holds a value")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "MaskedTable":
        return MaskedTable(self.values.copy(), self.mask.copy(), self.schema)

    def with_mask(self, mask: np.ndarray) -> "MaskedTable":
        """Re-mask a (fully observed) table: masked cells become NaN."""
        mask = np.asarray(mask, dtype=bool)
        vals = self.values.copy()
        vals[mask] = np.nan
        return MaskedTable(vals, mask | self.mask, self.schema)


@dataclass(frozen=True)
class ObsMisSplit:
    obs_cont: np.ndarray
    obs_cat: np.ndarray
    mis_cont: np.ndarray
    mis_cat: np.ndarray


def split_obs_mis(mask_row: np.ndarray, schema: FeatureSchema) -> ObsMisSplit:
    """Partition column indices of one row into the four obs/mis x cont/cat sets."""
    m = np.asarray(mask_row, dtype=bool)
    if m.shape != (schema.d,):
        raise ValueError("mask row length does not match schema")
    cont = schema.cont_idx
    cat = schema.cat_idx
    return ObsMisSplit(
        obs_cont=cont[~m[cont]],
        obs_cat=cat[~m[cat]],
        mis_cont=cont[m[cont]],
        mis_cat=cat[m[cat]],
    )


def _parse_cell(token: str, col: ColumnSpec, row_no: int) -> float:
    if token in MISSING_TOKENS:
        return np.nan
    try:
        v = float(token)
    except ValueError:
        raise ValueError(f"unparsable value {token!r} in column {col.name!r} (row {row_no})")
    if col.kind != CONTINUOUS:
        k = int(round(v))
        if abs(v - k) > 1e-9 or not (1 <= k <= col.cardinality):
            raise ValueError(
                f"category out of range: {token!r} in column {col.name!r} "
                f"(row {row_no}, expected 1..{col.cardinality})"
            )
        return float(k)
    return v


def load_table(path, schema: FeatureSchema) -> MaskedTable:
    """Read a CSV with header into a MaskedTable; empty or "NA" cells are missing."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header != schema.names:
            raise SchemaError(
                f"CSV header {header!r} does not match schema columns {schema.names!r}"
            )
        rows = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != schema.d:
                raise ValueError(f"row {row_no} has {len(row)} cells, expected {schema.d}")
            rows.append([_parse_cell(tok, col, row_no) for tok, col in zip(row, schema.columns)])
    values = np.array(rows, dtype=np.float64).reshape(len(rows), schema.d)
    return MaskedTable(values, np.isnan(values), schema)


def _format_cell(v: float, col: ColumnSpec) -> str:
    if np.isnan(v):
        return ""
    if col.kind != CONTINUOUS:
        return str(int(round(v)))
    return repr(float(v))


def save_table(table: MaskedTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.schema.names)
        for row in table.values:
            writer.writerow([_format_cell(v, c) for v, c in zip(row, table.schema.columns)])


@dataclass
class Standardizer:
    """Per-column z-score parameters for continuous features.

    Fitted over observed entries only, so the parameters do not depend on
    the mask pattern of other columns.
    """

    mean: np.ndarray  # (d_cont,)
    std: np.ndarray   # (d_cont,)

    @classmethod
    def fit(cls, table: MaskedTable) -> "Standardizer":
        cont = table.schema.cont_idx
        mean = np.zeros(len(cont))
        std = np.ones(len(cont))
        for out_j, j in enumerate(cont):
            col = table.values[:, j]
            obs = col[~table.mask[:, j]]
            if obs.size == 0:
                raise ValueError(f"column {table.schema.columns[j].name!r} has no observed entries")
            mean[out_j] = obs.mean()
            s = obs.std()
            if s == 0.0:
                raise ValueError(
                    f"column {table.schema.columns[j].name!r} has zero variance; "
                    "remove constant columns before fitting"
                )
            std[out_j] = s
        return cls(mean, std)

    def transform(self, cont_values: np.ndarray) -> np.ndarray:
        return (cont_values - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


def cat_block_slices(schema: FeatureSchema) -> list[slice]:
    """Column slices of each one-hot block inside the concatenated cat matrix."""
    slices = []
    start = 0
    for k in schema.cat_cards:
        slices.append(slice(start, start + k))
        start += k
    return slices


@dataclass
class EncodedBatch:
    """Model-space view of a batch of rows.

    cont holds z-scored values with zeros at missing positions; cat holds
    the concatenated one-hot blocks (all-zero where missing). Masks follow
    the table convention: True = missing.
    """

    cont: np.ndarray       # (n, d_cont)
    cat: np.ndarray        # (n, sum K_j)
    mask_cont: np.ndarray  # (n, d_cont) bool
    mask_cat: np.ndarray   # (n, d_cat) bool
    standardizer: Standardizer
    schema: FeatureSchema
    cat_slices: list[slice] = field(default_factory=list)

    def __post_init__(self):
        if not self.cat_slices:
            self.cat_slices = cat_block_slices(self.schema)


def encode_batch(values: np.ndarray, mask: np.ndarray, schema: FeatureSchema,
                 standardizer: Standardizer) -> EncodedBatch:
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n = values.shape[0]
    cont_idx, cat_idx = schema.cont_idx, schema.cat_idx

    mask_cont = mask[:, cont_idx] if len(cont_idx) else np.zeros((n, 0), dtype=bool)
    cont = np.zeros((n, len(cont_idx)))
    if len(cont_idx):
        raw = values[:, cont_idx]
        z = standardizer.transform(np.where(mask_cont, 0.0, raw))
        cont = np.where(mask_cont, 0.0, z)

    slices = cat_block_slices(schema)
    width = sum(schema.cat_cards)
    cat = np.zeros((n, width))
    mask_cat = mask[:, cat_idx] if len(cat_idx) else np.zeros((n, 0), dtype=bool)
    for out_j, j in enumerate(cat_idx):
        obs = ~mask_cat[:, out_j]
        codes = values[obs, j].astype(int) - 1
        block = cat[:, slices[out_j]]
        block[np.nonzero(obs)[0], codes] = 1.0
    return EncodedBatch(cont, cat, mask_cont, mask_cat, standardizer, schema, slices)


def decode_batch(batch: EncodedBatch) -> np.ndarray:
    """Map model space back to raw values; categorical blocks decode via argmax.

    Every cell is decoded, including masked positions (used after imputation
    fills the blocks); callers that only need observed cells should select
    them with the mask.
    """
    schema = batch.schema
    n = batch.cont.shape[0]
    out = np.empty((n, schema.d))
    cont_idx, cat_idx = schema.cont_idx, schema.cat_idx
    if len(cont_idx):
        out[:, cont_idx] = batch.standardizer.inverse(batch.cont)
    for out_j, j in enumerate(cat_idx):
        block = batch.cat[:, batch.cat_slices[out_j]]
        out[:, j] = np.argmax(block, axis=1) + 1.0
    return out
