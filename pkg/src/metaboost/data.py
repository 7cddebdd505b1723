"""Benchmark tables: loading, fold-wise encoding and cross-validation folds.

Preprocessing follows the usual recipe for the regression benchmarks:
drop rows with missing cells, standardize continuous features and the
target with training-fold statistics, label-encode ordinal columns and
one-hot encode nominal ones.  Encoded matrices put the continuous and
ordinal columns first and the one-hot indicator columns last, matching
:class:`~metaboost.metatree.FeatureSchema`.
"""

from __future__ import annotations

import io
import json
import logging
import os
import urllib.request
import warnings
import zipfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .metatree import FeatureSchema

log = logging.getLogger(__name__)

KINDS = ("continuous", "ordinal", "nominal", "target", "ignore")
DATA_DIR_ENV = "METABOOST_DATA_DIR"


class DataError(Exception):
    """Raised for unreadable, malformed or missing datasets."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    columns: tuple[ColumnSpec, ...]
    source: str = "url"
    url: str | None = None
    delimiter: str = ","
    header: bool = True
    zip_member: str | None = None
    n_rows: int | None = None
    note: str = ""

    def __post_init__(self):
        targets = [c for c in self.columns if c.kind == "target"]
        if len(targets) != 1:
            raise ValueError(f"dataset {self.name!r} needs exactly one target column")

    @property
    def target(self) -> str:
        return next(c.name for c in self.columns if c.kind == "target")

    @property
    def used_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind != "ignore"]

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        cols = tuple(
            ColumnSpec(c["name"], c["kind"],
                       tuple(c["categories"]) if c.get("categories") is not None else None)
            for c in data["columns"])
        extra = {k: v for k, v in data.items() if k != "columns"}
        return cls(columns=cols, **extra)


def load_manifest(path=None) -> dict[str, DatasetSpec]:
    """Dataset specs keyed by name; defaults to the bundled manifest."""
    if path is None:
        text = resources.files("metaboost").joinpath("datasets.json").read_text()
    else:
        text = Path(path).read_text()
    return {d["name"]: DatasetSpec.from_dict(d) for d in json.loads(text)["datasets"]}


def data_dir(path=None) -> Path:
    if path is not None:
        return Path(path)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def load_csv(path, spec: DatasetSpec) -> pd.DataFrame:
    """Read a normalized CSV (header row, comma separated) and type its columns.

    Rows with any missing cell are dropped.  Continuous, ordinal-numeric and
    target columns must parse as numbers; nominal columns with a declared
    category list must only contain those categories.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    names = [c.name for c in spec.columns]
    missing = [n for n in names if n not in raw.columns]
    if missing:
        raise DataError(f"{path}: header lacks columns {missing}")
    raw = raw[names].apply(lambda s: s.str.strip())
    na = raw.isin(["", "?", "NA", "NaN", "nan"]).any(axis=1)
    if na.any():
        log.info("%s: dropping %d rows with missing cells", spec.name, int(na.sum()))
    raw = raw.loc[~na].reset_index(drop=True)

    table = pd.DataFrame(index=raw.index)
    for col in spec.used_columns:
        values = raw[col.name]
        if col.kind in ("continuous", "target") or (col.kind == "ordinal" and col.categories is None):
            parsed = pd.to_numeric(values, errors="coerce")
            if parsed.isna().any():
                bad = values[parsed.isna()].iloc[0]
                raise DataError(f"{spec.name}.{col.name}: unparseable value {bad!r}")
            table[col.name] = parsed.astype(float)
        else:
            if col.categories is not None:
                allowed = {str(c) for c in col.categories}
                unknown = sorted(set(values) - allowed)
                if unknown:
                    raise DataError(f"{spec.name}.{col.name}: unknown categories {unknown}")
            table[col.name] = values
    return table


@dataclass
class Transformer:
    """Fold-fitted encoder; :meth:`transform` applies it to any rows."""

    spec: DatasetSpec
    means: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)
    ordinal_codes: dict = field(default_factory=dict)
    nominal_levels: dict = field(default_factory=dict)
    target_mean: float = 0.0
    target_scale: float = 1.0

    @property
    def continuous_names(self) -> list[str]:
        return [c.name for c in self.spec.used_columns if c.kind in ("continuous", "ordinal")]

    @property
    def binary_names(self) -> list[str]:
        return [f"{name}={level}" for name, levels in self.nominal_levels.items()
                for level in levels]

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema(len(self.continuous_names), len(self.binary_names))

    def transform(self, table: pd.DataFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Encode ``table``; returns ``(X, y, kept)`` where ``kept`` masks surviving rows.

        Rows with a nominal or ordinal category unseen in the training fold
        are dropped with a warning.
        """
        keep = np.ones(len(table), dtype=bool)
        for name, levels in {**self.nominal_levels, **self.ordinal_codes}.items():
            unseen = ~table[name].isin(list(levels)).to_numpy()
            if unseen.any():
                warnings.warn(
                    f"{self.spec.name}.{name}: {int(unseen.sum())} rows with categories "
                    f"unseen in training ({sorted(set(table[name][unseen]))}) excluded")
                keep &= ~unseen
        rows = table.loc[keep]
        cols = []
        for col in self.spec.used_columns:
            if col.kind == "continuous":
                v = rows[col.name].to_numpy(dtype=float)
                scale = self.scales[col.name]
                cols.append((v - self.means[col.name]) / scale if scale > 0 else np.zeros(len(v)))
            elif col.kind == "ordinal":
                codes = self.ordinal_codes[col.name]
                cols.append(rows[col.name].map(codes).to_numpy(dtype=float))
        for name, levels in self.nominal_levels.items():
            values = rows[name].to_numpy()
            cols.extend((values == level).astype(float) for level in levels)
        X = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
        y = (rows[self.spec.target].to_numpy(dtype=float) - self.target_mean) / self.target_scale
        return X, y, keep


def fit_transform(table: pd.DataFrame, train_idx, spec: DatasetSpec):
    """Fit a :class:`Transformer` on the rows ``train_idx``; returns ``(X, y, transformer)``."""
    train_idx = np.asarray(train_idx)
    if len(train_idx) == 0:
        raise ValueError("training fold is empty")
    fold = table.iloc[train_idx]
    tr = Transformer(spec)
    for col in spec.used_columns:
        values = fold[col.name]
        if col.kind == "continuous":
            tr.means[col.name] = float(values.mean())
            scale = float(values.std(ddof=0))
            if not scale > 0:
                warnings.warn(f"{spec.name}.{col.name}: zero variance in training fold, "
                              "encoded as constant 0")
                scale = 0.0
            tr.scales[col.name] = scale
        elif col.kind == "ordinal":
            levels = list(col.categories) if col.categories is not None else sorted(values.unique())
            if col.categories is not None:
                levels = [str(c) for c in levels]
            tr.ordinal_codes[col.name] = {level: float(i) for i, level in enumerate(levels)}
        elif col.kind == "nominal":
            seen = set(values)
            if col.categories is not None:
                levels = [str(c) for c in col.categories if str(c) in seen]
            else:
                levels = sorted(seen)
            tr.nominal_levels[col.name] = levels
        elif col.kind == "target":
            tr.target_mean = float(values.mean())
            tr.target_scale = float(values.std(ddof=0)) or 1.0
    X, y, _ = tr.transform(fold)
    return X, y, tr


def kfold(n_rows: int, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Seeded random partition of ``range(n_rows)`` into ``k`` near-equal folds."""
    if k < 2 or n_rows < k:
        raise ValueError("need k >= 2 and n_rows >= k")
    perm = np.random.default_rng(seed).permutation(n_rows)
    return [np.sort(fold) for fold in np.array_split(perm, k)]


# -- fetching ---------------------------------------------------------------


def _fetch_sklearn(spec: DatasetSpec) -> pd.DataFrame:
    from sklearn.datasets import load_diabetes

    if spec.name.lower() != "diabetes":
        raise DataError(f"no bundled loader for {spec.name}")
    bunch = load_diabetes(scaled=False)
    frame = pd.DataFrame(bunch.data, columns=[c.name for c in spec.columns if c.kind != "target"])
    frame[spec.target] = bunch.target
    return frame


def _fetch_url(spec: DatasetSpec, timeout: float) -> pd.DataFrame:
    with urllib.request.urlopen(spec.url, timeout=timeout) as resp:
        payload = resp.read()
    if spec.zip_member:
        with zipfile.ZipFile(io.BytesIO(payload)) as zf:
            payload = zf.read(spec.zip_member)
    text = payload.decode("utf-8", errors="replace")
    names = [c.name for c in spec.columns]
    if spec.delimiter == "whitespace":
        rows = []
        for line in text.splitlines():
            parts = line.split()
            if len(parts) != len(names):
                continue
            try:
                [float(p) for p in parts]
            except ValueError:
                continue
            rows.append(parts)
        return pd.DataFrame(rows, columns=names)
    frame = pd.read_csv(io.StringIO(text), sep=spec.delimiter, dtype=str,
                        header=0 if spec.header else None)
    if not spec.header:
        frame.columns = names
    return frame[names]


def fetch_dataset(spec: DatasetSpec, directory=None, timeout: float = 30.0) -> Path:
    """Write ``<directory>/<name>.csv`` in the normalized layout :func:`load_csv` reads."""
    out = data_dir(directory) / f"{spec.name}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        frame = _fetch_sklearn(spec) if spec.source == "sklearn" else _fetch_url(spec, timeout)
    except DataError:
        raise
    except Exception as exc:  # network and archive errors all surface the same way
        raise DataError(f"could not fetch {spec.name} from {spec.url}: {exc}") from exc
    frame.to_csv(out, index=False)
    return out


def dataset_path(name: str, directory=None) -> Path:
    return data_dir(directory) / f"{name}.csv"


def load_dataset(name: str, directory=None, manifest=None) -> tuple[pd.DataFrame, DatasetSpec]:
    specs = manifest if manifest is not None else load_manifest()
    if name not in specs:
        raise DataError(f"unknown dataset {name!r}; known: {sorted(specs)}")
    path = dataset_path(name, directory)
    if not path.exists():
        raise DataError(f"dataset {name} not found at {path}; run `metaboost fetch-data`")
    return load_csv(path, specs[name]), specs[name]
