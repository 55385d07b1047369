"""Trial data representation, observation patterns, CSV ingestion.

The canonical input is a UTF-8 CSV with a header row and columns
``cluster_id, z, r_s, s_obs, r_y, y_obs`` followed by covariates.
Absent values are empty fields. Column names can be remapped and
categorical covariates declared through the ``schema`` argument of
:func:`load_dataset`.

Datasets are immutable after construction and safe to share read-only
across threads and chains.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    ConsistencyError,
    DataError,
    PositivityError,
    RandomizationError,
    SchemaError,
)

__all__ = [
    "ClusterRecord",
    "IndividualRecord",
    "ObservationPattern",
    "TrialDataset",
    "classify_pattern",
    "load_dataset",
    "impute_baseline_covariates",
    "write_dataset_csv",
]

CANONICAL_COLUMNS = ("cluster_id", "z", "r_s", "s_obs", "r_y", "y_obs")


class ObservationPattern(Enum):
    """The four feasible per-individual observation patterns."""

    COMPLETE_SURVIVOR = "complete_survivor"
    DEATH_TRUNCATION = "death_truncation"
    SURVIVOR_OUTCOME_MISSING = "survivor_outcome_missing"
    STATUS_AND_OUTCOME_MISSING = "status_and_outcome_missing"


@dataclass(frozen=True)
class ClusterRecord:
    cluster_id: str
    z: int
    size: int

    def __post_init__(self):
        if self.z not in (0, 1):
            raise RandomizationError(
                f"cluster {self.cluster_id!r}: assignment must be 0 or 1"
            )
        if self.size < 1:
            raise DataError(f"cluster {self.cluster_id!r}: size must be >= 1")


@dataclass(frozen=True)
class IndividualRecord:
    """One participant row.

    ``s_obs`` is present iff survival was observed (r_s=1); ``y_obs`` is
    present iff the outcome was observed (r_y=1). Outcomes of observed
    non-survivors are undefined by truncation, not merely missing.
    """

    cluster_id: str
    covariates: tuple
    r_s: int
    s_obs: int | None
    r_y: int
    y_obs: float | None

    def __post_init__(self):
        if self.r_s not in (0, 1) or self.r_y not in (0, 1):
            raise ConsistencyError("r_s and r_y must be 0 or 1")
        if self.r_s == 1:
            if self.s_obs not in (0, 1):
                raise ConsistencyError("r_s=1 requires s_obs in {0, 1}")
            if self.s_obs == 0 and (self.r_y != 0 or self.y_obs is not None):
                raise ConsistencyError(
                    "non-survivor carries an outcome (undefined by truncation)"
                )
        else:
            if self.s_obs is not None:
                raise ConsistencyError("r_s=0 requires s_obs to be absent")
            if self.r_y != 0 or self.y_obs is not None:
                raise ConsistencyError("r_s=0 requires r_y=0 and no outcome")
        if self.r_y == 1 and self.y_obs is None:
            raise ConsistencyError("r_y=1 requires an observed outcome")
        if self.r_y == 0 and self.y_obs is not None:
            raise ConsistencyError("r_y=0 requires y_obs to be absent")


def classify_pattern(ind: IndividualRecord) -> ObservationPattern:
    """Deterministic pattern from (r_s, s_obs, r_y); total on valid records."""
    if ind.r_s == 0:
        return ObservationPattern.STATUS_AND_OUTCOME_MISSING
    if ind.s_obs == 0:
        return ObservationPattern.DEATH_TRUNCATION
    if ind.r_y == 1:
        return ObservationPattern.COMPLETE_SURVIVOR
    return ObservationPattern.SURVIVOR_OUTCOME_MISSING


class TrialDataset:
    """Validated, immutable cluster-randomized trial data.

    Besides the record lists required by the loaders, the constructor
    caches flat numpy views used by the samplers:

    - ``covariate_matrix`` (n, p) float, NaN for unimputed gaps
    - ``z_individual``, ``cluster_index`` per individual
    - ``r_s``, ``r_y`` int8; ``s_obs`` int8 with -1 for absent
    - ``y_obs`` float with NaN for absent/undefined
    """

    def __init__(self, clusters, individuals, covariate_names,
                 covariate_kinds=None, onehot_groups=None, metadata=None):
        self.clusters = tuple(clusters)
        self.individuals = tuple(individuals)
        self.covariate_names = tuple(covariate_names)
        self.covariate_kinds = tuple(
            covariate_kinds if covariate_kinds is not None
            else ("continuous",) * len(self.covariate_names)
        )
        self.onehot_groups = dict(onehot_groups or {})
        self.metadata = dict(metadata or {})
        if len(self.covariate_kinds) != len(self.covariate_names):
            raise DataError("covariate_kinds must match covariate_names")
        self._validate_and_cache()

    # -- construction -------------------------------------------------

    def _validate_and_cache(self):
        by_id = {}
        for c in self.clusters:
            if c.cluster_id in by_id:
                raise DataError(f"duplicate cluster id {c.cluster_id!r}")
            by_id[c.cluster_id] = c
        arms = {c.z for c in by_id.values()}
        if arms != {0, 1}:
            raise PositivityError(
                "both treatment arms must be present with at least one "
                f"cluster each (found arms {sorted(arms)})"
            )
        index_of = {cid: i for i, cid in enumerate(by_id)}
        n = len(self.individuals)
        p = len(self.covariate_names)
        self.covariate_matrix = np.empty((n, p), dtype=float)
        self.z_individual = np.empty(n, dtype=np.int8)
        self.cluster_index = np.empty(n, dtype=np.int32)
        self.r_s = np.empty(n, dtype=np.int8)
        self.s_obs = np.empty(n, dtype=np.int8)
        self.r_y = np.empty(n, dtype=np.int8)
        self.y_obs = np.empty(n, dtype=float)
        counts = {cid: 0 for cid in by_id}
        for i, ind in enumerate(self.individuals):
            if ind.cluster_id not in by_id:
                raise DataError(
                    f"individual {i}: unknown cluster {ind.cluster_id!r}"
                )
            if len(ind.covariates) != p:
                raise DataError(f"individual {i}: covariate length mismatch")
            counts[ind.cluster_id] += 1
            self.covariate_matrix[i] = ind.covariates
            self.z_individual[i] = by_id[ind.cluster_id].z
            self.cluster_index[i] = index_of[ind.cluster_id]
            self.r_s[i] = ind.r_s
            self.s_obs[i] = -1 if ind.s_obs is None else ind.s_obs
            self.r_y[i] = ind.r_y
            self.y_obs[i] = math.nan if ind.y_obs is None else ind.y_obs
        for c in self.clusters:
            if counts[c.cluster_id] != c.size:
                raise DataError(
                    f"cluster {c.cluster_id!r}: size {c.size} does not match "
                    f"{counts[c.cluster_id]} individual rows"
                )
        self.covariate_matrix.setflags(write=False)
        for a in (self.z_individual, self.cluster_index, self.r_s,
                  self.s_obs, self.r_y, self.y_obs):
            a.setflags(write=False)

    # -- views ---------------------------------------------------------

    @property
    def n_individuals(self):
        return len(self.individuals)

    @property
    def n_clusters(self):
        return len(self.clusters)

    @property
    def n_covariates(self):
        return len(self.covariate_names)

    @property
    def has_covariate_gaps(self):
        return bool(np.isnan(self.covariate_matrix).any())

    def pattern_counts(self):
        out = {p: 0 for p in ObservationPattern}
        for ind in self.individuals:
            out[classify_pattern(ind)] += 1
        return out


# ---------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------

def _parse_binary(raw, name, row):
    if raw not in ("0", "1"):
        raise SchemaError(f"row {row}: column {name!r} must be 0 or 1, got {raw!r}")
    return int(raw)


def load_dataset(path, schema=None) -> TrialDataset:
    """Load and validate a trial CSV.

    ``schema`` keys (all optional):

    - ``columns``: mapping canonical name -> actual CSV column name
    - ``categorical``: list of covariate columns to one-hot encode
    - ``ordinal``: mapping covariate column -> ordered category labels,
      encoded as integer ranks

    Rows violating the observation-pattern invariants are rejected with
    the offending 1-based data row in the message. Covariate gaps are
    kept as NaN; run :func:`impute_baseline_covariates` before fitting.
    """
    schema = schema or {}
    colmap = dict(schema.get("columns", {}))
    categorical = list(schema.get("categorical", []))
    ordinal = dict(schema.get("ordinal", {}))

    def actual(name):
        return colmap.get(name, name)

    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{path}: empty file") from None
            rows = [row for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None

    col_of = {name: i for i, name in enumerate(header)}
    for canonical in CANONICAL_COLUMNS:
        if actual(canonical) not in col_of:
            raise SchemaError(f"missing required column {actual(canonical)!r}")
    design_cols = {actual(c) for c in CANONICAL_COLUMNS}
    covariate_cols = [c for c in header if c not in design_cols]
    for c in categorical + list(ordinal):
        if c not in covariate_cols:
            raise SchemaError(f"declared covariate column {c!r} not in file")

    def cell(row, name):
        return row[col_of[actual(name)]].strip()

    # First pass: collect raw covariate strings to fix encodings.
    raw_cov = {c: [r[col_of[c]].strip() for r in rows] for c in covariate_cols}
    encoders = {}     # column -> ("continuous"|"ordinal"|"onehot", payload)
    for c in covariate_cols:
        if c in ordinal:
            levels = {lab: k for k, lab in enumerate(ordinal[c])}
            encoders[c] = ("ordinal", levels)
        elif c in categorical:
            seen = sorted({v for v in raw_cov[c] if v != ""})
            if len(seen) < 2:
                raise SchemaError(f"categorical column {c!r} has <2 levels")
            encoders[c] = ("onehot", seen)
        else:
            encoders[c] = ("continuous", None)

    covariate_names = []
    covariate_kinds = []
    onehot_groups = {}
    for c in covariate_cols:
        kind, payload = encoders[c]
        if kind == "onehot":
            names = [f"{c}={lev}" for lev in payload]
            onehot_groups[c] = tuple(names)
            covariate_names.extend(names)
            covariate_kinds.extend(["onehot"] * len(names))
        else:
            covariate_names.append(c)
            covariate_kinds.append(kind)

    def encode_covariates(row, rownum):
        vals = []
        for c in covariate_cols:
            kind, payload = encoders[c]
            raw = row[col_of[c]].strip()
            if kind == "continuous":
                if raw == "":
                    vals.append(math.nan)
                else:
                    try:
                        vals.append(float(raw))
                    except ValueError:
                        raise SchemaError(
                            f"row {rownum}: column {c!r} is not numeric: {raw!r}"
                        ) from None
            elif kind == "ordinal":
                if raw == "":
                    vals.append(math.nan)
                elif raw in payload:
                    vals.append(float(payload[raw]))
                else:
                    raise SchemaError(
                        f"row {rownum}: unknown level {raw!r} for ordinal {c!r}"
                    )
            else:
                if raw == "":
                    vals.extend([math.nan] * len(payload))
                elif raw in payload:
                    vals.extend([1.0 if raw == lev else 0.0 for lev in payload])
                else:
                    raise SchemaError(
                        f"row {rownum}: unknown level {raw!r} for categorical {c!r}"
                    )
        return tuple(vals)

    individuals = []
    cluster_z = {}
    cluster_sizes = {}
    for rule_idx, row in enumerate(rows):
        rownum = rule_idx + 1
        if len(row) != len(header):
            raise SchemaError(f"row {rownum}: expected {len(header)} fields")
        cid = cell(row, "cluster_id")
        if cid == "":
            raise SchemaError(f"row {rownum}: empty cluster_id")
        z = _parse_binary(cell(row, "z"), "z", rownum)
        if cid in cluster_z and cluster_z[cid] != z:
            raise RandomizationError(
                f"row {rownum}: cluster {cid!r} carries both assignments"
            )
        cluster_z[cid] = z
        cluster_sizes[cid] = cluster_sizes.get(cid, 0) + 1
        r_s = _parse_binary(cell(row, "r_s"), "r_s", rownum)
        raw_s = cell(row, "s_obs")
        s_obs = None if raw_s == "" else _parse_binary(raw_s, "s_obs", rownum)
        r_y = _parse_binary(cell(row, "r_y"), "r_y", rownum)
        raw_y = cell(row, "y_obs")
        if raw_y == "":
            y_obs = None
        else:
            try:
                y_obs = float(raw_y)
            except ValueError:
                raise SchemaError(
                    f"row {rownum}: y_obs is not numeric: {raw_y!r}"
                ) from None
        try:
            ind = IndividualRecord(
                cluster_id=cid,
                covariates=encode_covariates(row, rownum),
                r_s=r_s, s_obs=s_obs, r_y=r_y, y_obs=y_obs,
            )
        except ConsistencyError as exc:
            raise ConsistencyError(f"row {rownum}: {exc}") from None
        individuals.append(ind)

    clusters = [
        ClusterRecord(cid, cluster_z[cid], cluster_sizes[cid])
        for cid in cluster_z
    ]
    return TrialDataset(
        clusters, individuals, covariate_names,
        covariate_kinds=covariate_kinds, onehot_groups=onehot_groups,
        metadata={"source": str(path)},
    )


def impute_baseline_covariates(dataset: TrialDataset) -> TrialDataset:
    """Fill covariate gaps: mean for continuous, mode for categorical.

    One-hot groups are filled consistently with the modal category.
    Ties in the mode go to the smallest value. The applied rules are
    recorded in ``metadata['imputation']``. Raises if a column has no
    observed value at all.
    """
    X = np.array(dataset.covariate_matrix, dtype=float)
    names = dataset.covariate_names
    kinds = dataset.covariate_kinds
    applied = {}
    group_of = {}
    for group, cols in dataset.onehot_groups.items():
        for c in cols:
            group_of[c] = group

    handled_groups = set()
    for j, (name, kind) in enumerate(zip(names, kinds)):
        col = X[:, j]
        missing = np.isnan(col)
        if kind == "onehot":
            group = group_of.get(name)
            if group in handled_groups:
                continue
            handled_groups.add(group)
            cols = [names.index(c) for c in dataset.onehot_groups[group]]
            block = X[:, cols]
            gap_rows = np.isnan(block[:, 0])
            if np.isnan(block).all():
                raise DataError(f"covariate group {group!r} entirely missing")
            counts = np.nansum(block, axis=0)
            modal = int(np.argmax(counts))  # argmax takes first (smallest) tie
            if gap_rows.any():
                for k, cj in enumerate(cols):
                    X[gap_rows, cj] = 1.0 if k == modal else 0.0
                applied[group] = {
                    "method": "mode",
                    "value": dataset.onehot_groups[group][modal],
                    "n_filled": int(gap_rows.sum()),
                }
            continue
        if not missing.any():
            continue
        observed = col[~missing]
        if observed.size == 0:
            raise DataError(f"covariate {name!r} entirely missing")
        if kind == "continuous":
            fill = float(observed.mean())
            method = "mean"
        else:  # ordinal: modal rank, ties -> smallest
            vals, cnts = np.unique(observed, return_counts=True)
            fill = float(vals[np.argmax(cnts)])
            method = "mode"
        X[missing, j] = fill
        applied[name] = {
            "method": method, "value": fill, "n_filled": int(missing.sum()),
        }

    if not applied:
        return dataset

    individuals = [
        IndividualRecord(
            cluster_id=ind.cluster_id,
            covariates=tuple(X[i]),
            r_s=ind.r_s, s_obs=ind.s_obs, r_y=ind.r_y, y_obs=ind.y_obs,
        )
        for i, ind in enumerate(dataset.individuals)
    ]
    metadata = dict(dataset.metadata)
    metadata["imputation"] = applied
    return TrialDataset(
        dataset.clusters, individuals, names,
        covariate_kinds=kinds, onehot_groups=dataset.onehot_groups,
        metadata=metadata,
    )


def write_dataset_csv(dataset: TrialDataset, path):
    """Serialize back to the canonical CSV layout (round-trips patterns)."""
    z_of = {c.cluster_id: c.z for c in dataset.clusters}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(CANONICAL_COLUMNS) + list(dataset.covariate_names))
        for ind in dataset.individuals:
            row = [
                ind.cluster_id,
                str(z_of[ind.cluster_id]),
                str(ind.r_s),
                "" if ind.s_obs is None else str(ind.s_obs),
                str(ind.r_y),
                "" if ind.y_obs is None else repr(float(ind.y_obs)),
            ]
            row.extend("" if math.isnan(v) else repr(float(v))
                       for v in ind.covariates)
            writer.writerow(row)
