"""Records, covariate schemas, dummy encoding and threshold exceedances."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, UnknownCategoryError

logger = logging.getLogger(__name__)

BASE_COLUMNS = ("entry_age", "exit_age", "event")
LABEL_RE = re.compile(r"^[a-z0-9_-]+$")


@dataclass(frozen=True)
class IndividualRecord:
    entry_age: float
    exit_age: float
    event: bool
    covariates: Mapping[str, str]
    period: int | None = None
    row: int | None = None

    def __post_init__(self):
        for name in ("entry_age", "exit_age"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"{name} must be finite and positive, got {v!r}", row=self.row)
        if self.exit_age < self.entry_age:
            raise DataError(
                f"exit_age {self.exit_age} is below entry_age {self.entry_age}", row=self.row)


@dataclass(frozen=True)
class Covariate:
    name: str
    categories: tuple[str, ...]
    reference: str | None = None

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise ValueError(f"duplicate categories for covariate {self.name!r}")
        if len(self.categories) < 1:
            raise ValueError(f"covariate {self.name!r} has no categories")
        if self.reference is not None and self.reference not in self.categories:
            raise ValueError(
                f"reference {self.reference!r} is not a category of {self.name!r}")

    @property
    def levels(self) -> tuple[str, ...]:
        """Non-reference categories, in declared order."""
        return tuple(c for c in self.categories if c != self.reference)


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("duplicate covariate names in schema")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    @property
    def has_references(self) -> bool:
        return all(c.reference is not None for c in self.covariates)

    def __getitem__(self, name) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def columns(self) -> tuple[str, ...]:
        """Design column names: ``intercept`` then ``covariate:level``."""
        self._require_references()
        cols = ["intercept"]
        for c in self.covariates:
            cols.extend(f"{c.name}:{lvl}" for lvl in c.levels)
        return tuple(cols)

    @property
    def n_columns(self) -> int:
        return 1 + sum(len(c.categories) - 1 for c in self.covariates)

    def _require_references(self):
        missing = [c.name for c in self.covariates if c.reference is None]
        if missing:
            raise ValueError(f"reference category unresolved for: {', '.join(missing)}")

    def with_references(self, references: Mapping[str, str]) -> "CovariateSchema":
        return CovariateSchema(tuple(
            Covariate(c.name, c.categories, references.get(c.name, c.reference))
            for c in self.covariates))

    def reference_profile(self) -> dict[str, str]:
        self._require_references()
        return {c.name: c.reference for c in self.covariates}

    def profiles(self) -> Iterable[dict[str, str]]:
        """Every combination of categories, in schema order."""
        for combo in itertools.product(*(c.categories for c in self.covariates)):
            yield dict(zip(self.names, combo))

    def to_text(self) -> str:
        lines = []
        for c in self.covariates:
            cats = [cat + ("*" if cat == c.reference else "") for cat in c.categories]
            lines.append(f"{c.name} = {','.join(cats)}")
        return "\n".join(lines) + "\n"


def parse_schema(text: str) -> CovariateSchema:
    """Parse ``name = cat1,cat2*,cat3`` lines; ``*`` marks the reference."""
    covariates = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"schema line {lineno}: expected 'name = cat1,cat2*'")
        name, _, rhs = line.partition("=")
        name = name.strip()
        cats, ref = [], None
        for tok in rhs.split(","):
            tok = tok.strip()
            if tok.endswith("*"):
                tok = tok[:-1].strip()
                if ref is not None:
                    raise DataError(f"schema line {lineno}: more than one reference for {name!r}")
                ref = tok
            if not LABEL_RE.match(tok):
                raise DataError(f"schema line {lineno}: invalid category label {tok!r}")
            cats.append(tok)
        if not LABEL_RE.match(name):
            raise DataError(f"schema line {lineno}: invalid covariate name {name!r}")
        try:
            covariates.append(Covariate(name, tuple(cats), ref))
        except ValueError as exc:
            raise DataError(f"schema line {lineno}: {exc}") from None
    return CovariateSchema(tuple(covariates))


def load_schema(path) -> CovariateSchema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ModelSpec:
    threshold_u: float
    schema: CovariateSchema

    def __post_init__(self):
        if not (math.isfinite(self.threshold_u) and self.threshold_u > 0):
            raise ValueError("threshold_u must be positive")


def _open_source(source):
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, io.IOBase):
        return source
    return io.StringIO("".join(line if line.endswith("\n") else line + "\n" for line in source))


def load_records(source, schema: CovariateSchema | None = None) -> list[IndividualRecord]:
    """Read the record CSV (``entry_age,exit_age,event,<covariates...>``).

    ``source`` is a path, an open text file or an iterable of lines. Row numbers
    in errors count the header as row 1. An optional ``period`` column holds the
    calendar year of last observation.
    """
    fh = _open_source(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty input: missing header row") from None
        missing = [c for c in BASE_COLUMNS if c not in header]
        if missing:
            raise DataError(f"missing column(s): {', '.join(missing)}", row=1)
        cov_names = [h for h in header if h not in BASE_COLUMNS and h != "period"]
        if schema is not None:
            absent = [n for n in schema.names if n not in cov_names]
            if absent:
                raise DataError(f"missing covariate column(s): {', '.join(absent)}", row=1)
            extra = [n for n in cov_names if n not in schema.names]
            if extra:
                raise DataError(f"column(s) not in schema: {', '.join(extra)}", row=1)
        idx = {h: i for i, h in enumerate(header)}
        records = []
        for rownum, fields in enumerate(reader, start=2):
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(fields)}", row=rownum)
            fields = [f.strip() for f in fields]
            try:
                entry = float(fields[idx["entry_age"]])
                exit_ = float(fields[idx["exit_age"]])
            except ValueError:
                raise DataError("malformed numeric age field", row=rownum) from None
            ev = fields[idx["event"]]
            if ev not in ("0", "1"):
                raise DataError(f"event must be 0 or 1, got {ev!r}", row=rownum)
            period = None
            if "period" in idx and fields[idx["period"]]:
                try:
                    period = int(fields[idx["period"]])
                except ValueError:
                    raise DataError("malformed period field", row=rownum) from None
            covs = {}
            for name in cov_names:
                label = fields[idx[name]]
                if not label:
                    raise DataError(f"missing label for covariate {name!r}", row=rownum)
                if schema is not None and label not in schema[name].categories:
                    raise UnknownCategoryError(name, label, row=rownum)
                covs[name] = label
            records.append(IndividualRecord(entry, exit_, ev == "1", covs, period, rownum))
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
    return records


def write_records(records: Sequence[IndividualRecord], fh, covariate_names: Sequence[str]):
    """Write records in the loader's CSV layout using round-trip float formatting."""
    with_period = any(r.period is not None for r in records)
    header = list(BASE_COLUMNS) + list(covariate_names) + (["period"] if with_period else [])
    fh.write(",".join(header) + "\n")
    for r in records:
        row = [repr(float(r.entry_age)), repr(float(r.exit_age)), "1" if r.event else "0"]
        row += [r.covariates[n] for n in covariate_names]
        if with_period:
            row.append("" if r.period is None else str(r.period))
        fh.write(",".join(row) + "\n")


def exposure_by_category(records, name, threshold_u=None) -> Counter:
    """Person-years at risk per category, counted above ``threshold_u`` when given."""
    exposure = Counter()
    for r in records:
        start = r.entry_age if threshold_u is None else max(r.entry_age, threshold_u)
        exposure[r.covariates[name]] += max(r.exit_age - start, 0.0)
    return exposure


def resolve_references(schema: CovariateSchema, records, threshold_u=None) -> CovariateSchema:
    """Fill unset references with the category of highest exposure in ``records``."""
    refs = {}
    for c in schema.covariates:
        if c.reference is not None:
            continue
        exp = exposure_by_category(records, c.name, threshold_u)
        # ties broken by declared category order
        refs[c.name] = max(c.categories, key=lambda cat: (exp.get(cat, 0.0), -c.categories.index(cat)))
    return schema.with_references(refs) if refs else schema


def encode_profile(labels: Mapping[str, str], schema: CovariateSchema) -> np.ndarray:
    """Design row for one profile: intercept 1 then one dummy per non-reference level."""
    schema._require_references()
    row = np.zeros(schema.n_columns)
    row[0] = 1.0
    j = 1
    for c in schema.covariates:
        try:
            label = labels[c.name]
        except KeyError:
            raise DataError(f"profile has no label for covariate {c.name!r}") from None
        if label not in c.categories:
            raise UnknownCategoryError(c.name, label)
        for lvl in c.levels:
            if lvl == label:
                row[j] = 1.0
            j += 1
    return row


def decode_profile(row, schema: CovariateSchema) -> dict[str, str]:
    row = np.asarray(row)
    out = {}
    j = 1
    for c in schema.covariates:
        block = row[j:j + len(c.levels)]
        j += len(c.levels)
        hits = np.flatnonzero(block)
        if len(hits) > 1:
            raise ValueError(f"more than one level set for {c.name!r}")
        out[c.name] = c.levels[hits[0]] if len(hits) else c.reference
    return out


def parse_profile(text: str) -> dict[str, str]:
    """``"civ=widowed,sex=female"`` -> mapping."""
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        k, sep, v = part.partition("=")
        if not sep:
            raise DataError(f"profile item {part!r} is not name=label")
        out[k.strip()] = v.strip()
    return out


@dataclass(frozen=True)
class Exceedance:
    y: float
    a: float
    event: bool
    design_row: np.ndarray


@dataclass(frozen=True, eq=False)
class Exceedances:
    """Column-oriented exceedance data: one row per record with ``y > 0``."""

    y: np.ndarray
    a: np.ndarray
    event: np.ndarray
    Z: np.ndarray
    columns: tuple[str, ...] = ()
    n_dropped: int = 0
    labels: tuple[tuple[str, ...], ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        a = np.ascontiguousarray(self.a, dtype=float)
        ev = np.ascontiguousarray(self.event, dtype=bool)
        Z = np.ascontiguousarray(np.atleast_2d(self.Z), dtype=float)
        if Z.shape[0] != len(y) and len(y) == 0:
            Z = Z.reshape(0, Z.shape[-1])
        if not (len(y) == len(a) == len(ev) == Z.shape[0]):
            raise ValueError("y, a, event and Z must have matching lengths")
        if np.any(~np.isfinite(y)) or np.any(y <= 0):
            raise ValueError("exceedances must be finite and strictly positive")
        if np.any(a < 0) or np.any(a >= y):
            raise ValueError("entry exceedances must satisfy 0 <= a < y")
        for arr in (y, a, ev, Z):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "event", ev)
        object.__setattr__(self, "Z", Z)
        if not self.columns:
            cols = ("intercept",) + tuple(f"x{j}" for j in range(1, Z.shape[1]))
            object.__setattr__(self, "columns", cols)

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i) -> Exceedance:
        return Exceedance(float(self.y[i]), float(self.a[i]), bool(self.event[i]), self.Z[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_params(self) -> int:
        return self.Z.shape[1] + 1

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @classmethod
    def from_list(cls, items: Sequence[Exceedance], columns=()) -> "Exceedances":
        return cls(
            y=[e.y for e in items], a=[e.a for e in items],
            event=[e.event for e in items], Z=np.array([e.design_row for e in items]),
            columns=tuple(columns))

    def take(self, idx) -> "Exceedances":
        idx = np.asarray(idx)
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return Exceedances(self.y[idx], self.a[idx], self.event[idx], self.Z[idx],
                           self.columns, 0, labels)

    def without_truncation(self) -> "Exceedances":
        return Exceedances(self.y, np.zeros_like(self.a), self.event, self.Z,
                           self.columns, self.n_dropped, self.labels)


def to_exceedances(records: Sequence[IndividualRecord], spec: ModelSpec) -> Exceedances:
    """Threshold-relative view of the records that survive past ``u``.

    Covariates are taken as recorded, i.e. fixed at their value at the threshold.
    """
    u = spec.threshold_u
    schema = spec.schema
    kept = [r for r in records if r.exit_age > u]
    n_dropped = len(records) - len(kept)
    Z = np.empty((len(kept), schema.n_columns))
    cache = {}
    for i, r in enumerate(kept):
        key = tuple(r.covariates.get(n) for n in schema.names)
        row = cache.get(key)
        if row is None:
            try:
                row = cache[key] = encode_profile(r.covariates, schema)
            except DataError as exc:
                raise DataError(str(exc), row=r.row) from None
        Z[i] = row
    y = np.array([r.exit_age - u for r in kept])
    a = np.array([max(r.entry_age - u, 0.0) for r in kept])
    ev = np.array([r.event for r in kept], dtype=bool)
    labels = tuple(tuple(r.covariates[n] for n in schema.names) for r in kept)
    logger.info("threshold %.6g: kept %d exceedances, dropped %d records", u, len(kept), n_dropped)
    return Exceedances(y, a, ev, Z.reshape(len(kept), schema.n_columns), schema.columns,
                       n_dropped, labels)


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    age_bands: tuple[str, ...]
    period_bands: tuple[str, ...]
    outside: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def column_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def _check_breaks(breaks, what):
    b = np.asarray(breaks, dtype=float)
    if b.ndim != 1 or len(b) < 2 or np.any(np.diff(b) <= 0):
        raise ValueError(f"{what} must be strictly increasing with at least two entries")
    return b


def contingency_summary(records, age_breaks, period_breaks=None) -> ContingencyTable:
    """Counts by age at last observation (bands ``(lo, hi]``) and calendar period.

    Period bands are ``[lo, hi)`` in whole years. Without period data (or
    ``period_breaks``) a single ``all`` column is produced. Records falling
    outside every band are tallied in ``outside``.
    """
    ab = _check_breaks(age_breaks, "age_breaks")
    use_period = period_breaks is not None and any(r.period is not None for r in records)
    if use_period:
        pb = _check_breaks(period_breaks, "period_breaks")
        period_labels = tuple(f"{int(lo)}-{int(hi) - 1}" for lo, hi in zip(pb[:-1], pb[1:]))
    else:
        period_labels = ("all",)
    age_labels = tuple(f"({lo:g},{hi:g}]" for lo, hi in zip(ab[:-1], ab[1:]))
    counts = np.zeros((len(age_labels), len(period_labels)), dtype=int)
    outside = 0
    for r in records:
        i = int(np.searchsorted(ab, r.exit_age, side="left")) - 1
        if not 0 <= i < len(age_labels):
            outside += 1
            continue
        if use_period:
            if r.period is None:
                outside += 1
                continue
            j = int(np.searchsorted(pb, r.period, side="right")) - 1
            if not 0 <= j < len(period_labels):
                outside += 1
                continue
        else:
            j = 0
        counts[i, j] += 1
    return ContingencyTable(counts, age_labels, period_labels, outside)
