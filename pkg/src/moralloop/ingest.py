"""Canonical CSV reading/writing and deterministic train/test splitting.

The canonical schema has one row per recorded response::

    scenario_id,left_man,...,left_cat,right_man,...,right_cat,car_heading,legality,saved

with twenty ``left_*``/``right_*`` count columns in taxonomy order,
``car_heading`` and ``saved`` in {L, R}, ``legality`` in
{none, left_legal, right_legal}. The header is bit-exact, fields are
comma-separated, and files use LF line endings, so write(read(f)) is
byte-identical for canonical files.

Datasets are stored columnar: an (N, 42) integer key matrix plus a boolean
saved-left vector, which is what every numeric consumer of the data wants.
Row objects are materialized on demand.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import pandas as pd

from . import rng
from .errors import SchemaError, ValidationError
from .scenario import (
    KEY_LENGTH,
    MAX_GROUP_SIZE,
    Response,
    Side,
    Taxonomy,
    active_taxonomy,
    decode,
    encode,
)

_HEADING_TO_SIGN = {"L": 1, "R": -1}
_SIGN_TO_HEADING = {1: "L", -1: "R"}
_LEGALITY_TO_SIGN = {"none": 0, "left_legal": 1, "right_legal": -1}
_SIGN_TO_LEGALITY = {0: "none", 1: "left_legal", -1: "right_legal"}


def canonical_columns(taxonomy: Taxonomy = None) -> list[str]:
    tax = taxonomy or active_taxonomy()
    return (
        ["scenario_id"]
        + [f"left_{n}" for n in tax.names]
        + [f"right_{n}" for n in tax.names]
        + ["car_heading", "legality", "saved"]
    )


@dataclass
class Dataset:
    """Columnar response data plus provenance metadata."""

    keys: np.ndarray          # (N, 42) int16, canonical encoding per row
    saved_left: np.ndarray    # (N,) bool
    ids: np.ndarray           # (N,) str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.int16)
        self.saved_left = np.asarray(self.saved_left, dtype=bool)
        self.ids = np.asarray(self.ids, dtype=object)
        if len(self.keys) == 0:
            raise ValidationError("dataset must contain at least one row")
        if self.keys.ndim != 2 or self.keys.shape[1] != KEY_LENGTH:
            raise ValidationError(f"key matrix must be (n, {KEY_LENGTH}), got {self.keys.shape}")
        if len(self.saved_left) != len(self.keys) or len(self.ids) != len(self.keys):
            raise ValidationError("keys, saved_left and ids must have equal length")

    def __len__(self) -> int:
        return len(self.keys)

    def row(self, i: int) -> Response:
        saved = Side.LEFT if self.saved_left[i] else Side.RIGHT
        return Response(scenario=decode(self.keys[i]), saved=saved, row_id=str(self.ids[i]))

    def rows(self) -> Iterator[Response]:
        for i in range(len(self)):
            yield self.row(i)

    def subset(self, indices, provenance_note: str = "") -> "Dataset":
        indices = np.asarray(indices)
        prov = dict(self.provenance)
        if provenance_note:
            prov["subset"] = provenance_note
        return Dataset(self.keys[indices], self.saved_left[indices], self.ids[indices], prov)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.keys.tobytes())
        h.update(self.saved_left.tobytes())
        return h.hexdigest()


def dataset_from_responses(responses, provenance: dict = None) -> Dataset:
    """Build a columnar dataset from Response objects."""
    responses = list(responses)
    if not responses:
        raise ValidationError("dataset must contain at least one row")
    keys = np.array([encode(r.scenario) for r in responses], dtype=np.int16)
    saved = np.array([r.saved is Side.LEFT for r in responses], dtype=bool)
    ids = np.array([r.row_id or str(i + 1) for i, r in enumerate(responses)], dtype=object)
    return Dataset(keys, saved, ids, provenance or {})


def read_csv(path) -> Dataset:
    """Load a canonical CSV file, validating schema and every row.

    Raises SchemaError when the header deviates (naming the missing and
    unexpected columns), and ValidationError with a 1-based line number for
    the first malformed or out-of-range cell.
    """
    tax = active_taxonomy()
    expected = canonical_columns(tax)
    df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=False)
    got = list(df.columns)
    if got != expected:
        missing = [c for c in expected if c not in got]
        extra = [c for c in got if c not in expected]
        if missing or extra:
            raise SchemaError(f"header mismatch: missing columns {missing}, unexpected columns {extra}")
        raise SchemaError("header mismatch: canonical columns present but in the wrong order")
    if len(df) == 0:
        raise ValidationError(f"{path}: no data rows (header only)")

    count_cols = expected[1:1 + 2 * tax.size]
    counts = np.empty((len(df), 2 * tax.size), dtype=np.int16)
    for j, col in enumerate(count_cols):
        values = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values) | (values < 0) | (values != np.floor(values))
        if bad.any():
            line = int(np.argmax(bad)) + 2
            raise ValidationError(f"{path}:{line}: column {col} has invalid count {df[col].iloc[line - 2]!r}")
        counts[:, j] = values.astype(np.int16)

    left_tot = counts[:, :tax.size].sum(axis=1)
    right_tot = counts[:, tax.size:].sum(axis=1)
    for name, tot in (("left", left_tot), ("right", right_tot)):
        bad = (tot < 1) | (tot > MAX_GROUP_SIZE)
        if bad.any():
            line = int(np.argmax(bad)) + 2
            raise ValidationError(
                f"{path}:{line}: {name} side has {int(tot[line - 2])} characters "
                f"(must be between 1 and {MAX_GROUP_SIZE})"
            )

    def map_column(col, mapping, what):
        raw = df[col].to_numpy()
        known = np.isin(raw, list(mapping))
        if not known.all():
            line = int(np.argmax(~known)) + 2
            raise ValidationError(f"{path}:{line}: invalid {what} value {raw[line - 2]!r}")
        out = np.empty(len(raw), dtype=np.int16)
        for value, sign in mapping.items():
            out[raw == value] = sign
        return out

    heading = map_column("car_heading", _HEADING_TO_SIGN, "car_heading")
    legality = map_column("legality", _LEGALITY_TO_SIGN, "legality")
    saved = map_column("saved", _HEADING_TO_SIGN, "saved") == 1

    keys = np.concatenate([counts, heading[:, None], legality[:, None]], axis=1)
    ids = df["scenario_id"].to_numpy(dtype=object)
    provenance = {"source": str(path), "n_rows": int(len(df))}
    return Dataset(keys, saved, ids, provenance)


def write_csv(dataset: Dataset, path) -> None:
    """Write a dataset in the canonical schema (LF line endings)."""
    tax = active_taxonomy()
    data = {"scenario_id": dataset.ids}
    for j, col in enumerate(canonical_columns(tax)[1:1 + 2 * tax.size]):
        data[col] = dataset.keys[:, j]
    data["car_heading"] = [_SIGN_TO_HEADING[int(v)] for v in dataset.keys[:, -2]]
    data["legality"] = [_SIGN_TO_LEGALITY[int(v)] for v in dataset.keys[:, -1]]
    data["saved"] = np.where(dataset.saved_left, "L", "R")
    pd.DataFrame(data).to_csv(path, index=False, lineterminator="\n")


@dataclass(frozen=True)
class SplitConfig:
    """Reproducible 80/20-style splitting over response rows."""

    train_fraction: float = 0.8
    seed: int = 0
    replicates: int = 5

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must lie strictly between 0 and 1")
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")


def split(dataset: Dataset, cfg: SplitConfig, replicate_index: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test partition, deterministic per (seed, replicate).

    Rows are split i.i.d. (not grouped by dilemma or session), so the same
    dilemma generally occurs on both sides of the split; the permutation is
    over row indices, which makes file row order part of the reproducibility
    contract.
    """
    if replicate_index < 0 or replicate_index >= cfg.replicates:
        raise ValidationError(f"replicate_index {replicate_index} outside 0..{cfg.replicates - 1}")
    n = len(dataset)
    n_train = int(round(cfg.train_fraction * n))
    if n_train < 1 or n - n_train < 1:
        raise ValidationError(f"dataset of {n} rows cannot yield non-empty parts at fraction {cfg.train_fraction}")
    perm = rng.stream(cfg.seed, "split", replicate_index).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (
        dataset.subset(train_idx, f"train split r{replicate_index}"),
        dataset.subset(test_idx, f"test split r{replicate_index}"),
    )


def subsample(dataset: Dataset, size: int, seed: int, *labels) -> Dataset:
    """Seeded size-n subset without replacement, preserving row order."""
    if size < 1 or size > len(dataset):
        raise ValidationError(f"subsample size {size} outside 1..{len(dataset)}")
    idx = np.sort(rng.stream(seed, "subsample", size, *labels).choice(len(dataset), size=size, replace=False))
    return dataset.subset(idx, f"subsample n={size}")
