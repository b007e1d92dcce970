"""Survival data containers, CSV ingestion, and risk-set indexing.

A dataset is right-censored time-to-event data with a single exposure column
and a (possibly empty) covariate matrix.  The risk index precomputes the
sorted-time structures every downstream routine shares: distinct event times,
tied-event counts, and suffix positions of risk sets.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CsvParseError, NoEventsError, SchemaError, ValidationError


class ConstantColumnWarning(UserWarning):
    pass


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurvivalDataset:
    """Immutable right-censored sample: follow-up time, event status, exposure,
    covariates, and an optional administrative truncation time ``tau``.

    Events occurring after ``tau`` are kept in risk sets but contribute no
    event terms.  ``status`` is 1 for an observed event, 0 for censoring.
    """

    time: np.ndarray
    status: np.ndarray
    exposure: np.ndarray
    covariates: np.ndarray
    tau: float = math.inf
    names: tuple = ()

    def __post_init__(self):
        time = np.asarray(self.time, dtype=np.float64).ravel()
        status = np.asarray(self.status, dtype=np.float64).ravel()
        exposure = np.asarray(self.exposure, dtype=np.float64).ravel()
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.ndim == 1:
            cov = cov.reshape(len(time), -1) if cov.size else cov.reshape(len(time), 0)
        if cov.ndim != 2:
            raise ValidationError("covariates must be a 2-d array")
        n = time.shape[0]
        if status.shape[0] != n or exposure.shape[0] != n or cov.shape[0] != n:
            raise ValidationError("time, status, exposure, covariates must share length")
        if n == 0:
            raise ValidationError("empty dataset")
        for label, arr in (("time", time), ("status", status), ("exposure", exposure)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {label}")
        if cov.size and not np.all(np.isfinite(cov)):
            raise ValidationError("non-finite values in covariates")
        if np.any(time < 0):
            raise ValidationError("negative follow-up times")
        if not np.all((status == 0.0) | (status == 1.0)):
            raise ValidationError("status must be 0 or 1")
        tau = float(self.tau)
        if not (tau > 0):
            raise ValidationError("tau must be positive")
        names = tuple(self.names) if self.names else tuple(f"x{j+1}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise ValidationError("names length must match covariate count")
        object.__setattr__(self, "time", _freeze(time))
        object.__setattr__(self, "status", _freeze(status))
        object.__setattr__(self, "exposure", _freeze(exposure))
        object.__setattr__(self, "covariates", _freeze(cov))
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.time.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    def truncated_status(self):
        """Event indicator after applying the tau cutoff."""
        if math.isinf(self.tau):
            return self.status
        return np.where(self.time <= self.tau, self.status, 0.0)


@dataclass(frozen=True)
class RiskIndex:
    """Sorted-time index over a dataset.

    ``order`` sorts subjects by (time, row index); the risk set of the k-th
    distinct event time is ``order[event_start[k]:]``.  ``event_rows`` lists the
    original rows of event subjects in event-time order (ties by row index),
    ``event_time_idx`` maps each to its distinct-time slot, and ``nevt_le[i]``
    counts distinct event times at or before the i-th *sorted* follow-up time.
    """

    order: np.ndarray
    event_times: np.ndarray
    event_start: np.ndarray
    event_count: np.ndarray
    event_rows: np.ndarray
    event_time_idx: np.ndarray
    nevt_le: np.ndarray

    @property
    def n_event_times(self):
        return self.event_times.shape[0]

    @property
    def n_events(self):
        return self.event_rows.shape[0]


def build_risk_index(data):
    """Construct the RiskIndex for ``data``.

    Raises NoEventsError when no event survives the tau cutoff.
    """
    n = data.n
    order = np.lexsort((np.arange(n), data.time))
    u_s = data.time[order]
    evt_s = data.truncated_status()[order]
    evt_pos = np.flatnonzero(evt_s == 1.0)
    if evt_pos.size == 0:
        raise NoEventsError("no events at or before tau")
    event_times, counts = np.unique(u_s[evt_pos], return_counts=True)
    # first sorted position at risk for each distinct event time
    event_start = np.searchsorted(u_s, event_times, side="left")
    event_rows = order[evt_pos]
    event_time_idx = np.searchsorted(event_times, u_s[evt_pos])
    nevt_le = np.searchsorted(event_times, u_s, side="right")
    return RiskIndex(
        order=_freeze(order.astype(np.int64)),
        event_times=_freeze(event_times),
        event_start=_freeze(event_start.astype(np.int64)),
        event_count=_freeze(counts.astype(np.int64)),
        event_rows=_freeze(event_rows.astype(np.int64)),
        event_time_idx=_freeze(event_time_idx.astype(np.int64)),
        nevt_le=_freeze(nevt_le.astype(np.int64)),
    )


@dataclass
class CsvSchema:
    """Column mapping for CSV ingestion.

    ``covariates=None`` means every column other than time/status/exposure, in
    file order.  Categorical covariate columns (any non-numeric cell) expand to
    one indicator per level beyond the lexicographically first.
    """

    time: str
    status: str
    exposure: str
    covariates: list = None
    delimiter: str = ","


_MISSING = {"", "na", "nan", "null", "none"}


def _parse_float(cell, row, col):
    s = cell.strip()
    if s.lower() in _MISSING:
        raise ValidationError(f"missing value at row {row}, column {col!r}")
    try:
        x = float(s)
    except ValueError:
        raise CsvParseError(
            f"cannot parse {cell!r} at row {row}, column {col!r}", row=row, column=col
        ) from None
    if not math.isfinite(x):
        raise ValidationError(f"non-finite value at row {row}, column {col!r}")
    return x


def ingest_csv(path, schema, tau=math.inf):
    """Read a delimited file into a SurvivalDataset.

    Time, status, and exposure columns must be numeric.  Covariate columns are
    numeric when every cell parses as a float, otherwise categorical and dummy
    coded (drop the lexicographically first level).  Missing cells are
    rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        rows = [row for row in reader if row]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicated column names")
    pos = {name: i for i, name in enumerate(header)}
    for need in (schema.time, schema.status, schema.exposure):
        if need not in pos:
            raise SchemaError(f"{path}: column {need!r} not found")
    if schema.covariates is None:
        reserved = {schema.time, schema.status, schema.exposure}
        cov_names = [h for h in header if h not in reserved]
    else:
        cov_names = list(schema.covariates)
        for c in cov_names:
            if c not in pos:
                raise SchemaError(f"{path}: covariate column {c!r} not found")
        if len(set(cov_names)) != len(cov_names):
            raise SchemaError("duplicated covariate names in schema")
        if {schema.time, schema.status, schema.exposure} & set(cov_names):
            raise SchemaError("time/status/exposure cannot also be covariates")
    if not body:
        raise ValidationError(f"{path}: no data rows")
    width = len(header)
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise CsvParseError(f"{path}: row {r} has {len(row)} cells, expected {width}", row=r)

    time = np.array([_parse_float(row[pos[schema.time]], r, schema.time)
                     for r, row in enumerate(body, start=2)])
    status = np.array([_parse_float(row[pos[schema.status]], r, schema.status)
                       for r, row in enumerate(body, start=2)])
    exposure = np.array([_parse_float(row[pos[schema.exposure]], r, schema.exposure)
                         for r, row in enumerate(body, start=2)])

    cols = []
    names = []
    for cname in cov_names:
        j = pos[cname]
        raw = [row[j].strip() for row in body]
        numeric = True
        vals = np.empty(len(raw))
        for i, cell in enumerate(raw):
            if cell.lower() in _MISSING:
                raise ValidationError(
                    f"missing value at row {i + 2}, column {cname!r}"
                )
            try:
                x = float(cell)
            except ValueError:
                numeric = False
                break
            if not math.isfinite(x):
                raise ValidationError(f"non-finite value at row {i + 2}, column {cname!r}")
            vals[i] = x
        if numeric:
            cols.append(vals)
            names.append(cname)
        else:
            levels = sorted(set(raw))
            # drop the first level as the reference category
            for lev in levels[1:]:
                cols.append(np.array([1.0 if c == lev else 0.0 for c in raw]))
                names.append(f"{cname}={lev}")
    cov = np.column_stack(cols) if cols else np.empty((len(body), 0))
    return SurvivalDataset(time, status, exposure, cov, tau=tau, names=tuple(names))


def write_csv(data, path, float_format=repr):
    """Write a dataset back to CSV with round-trippable float formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "status", "exposure", *data.names])
        for i in range(data.n):
            writer.writerow(
                [float_format(float(data.time[i])),
                 float_format(float(data.status[i])),
                 float_format(float(data.exposure[i])),
                 *(float_format(float(x)) for x in data.covariates[i])]
            )


@dataclass(frozen=True)
class StandardizeInfo:
    means: np.ndarray
    scales: np.ndarray
    constant: np.ndarray  # boolean mask of zero-variance columns


def standardize_matrix(x, center=True):
    """Column-wise standardization; returns (xs, StandardizeInfo).

    Scales are population standard deviations (about the mean even when
    ``center`` is False, so comparisons across modes stay meaningful).  A
    zero-variance column gets scale 1 and is flagged; when centered it becomes
    all zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("expected a 2-d matrix")
    means = x.mean(axis=0) if x.size else np.zeros(x.shape[1])
    sds = x.std(axis=0) if x.size else np.zeros(x.shape[1])
    constant = sds <= 1e-12 * np.maximum(1.0, np.abs(means))
    scales = np.where(constant, 1.0, sds)
    if center:
        xs = (x - means) / scales
        if constant.any():
            xs[:, constant] = 0.0
    else:
        xs = x / scales
        means = np.zeros_like(means)
    return xs, StandardizeInfo(means=means, scales=scales, constant=constant)


def standardize_covariates(data):
    """Center and scale the covariate block; exposure and time are untouched.

    Returns (dataset, StandardizeInfo).  Constant columns are zeroed out and
    reported via a ConstantColumnWarning.
    """
    xs, info = standardize_matrix(data.covariates, center=True)
    if info.constant.any():
        bad = [data.names[j] for j in np.flatnonzero(info.constant)]
        warnings.warn(f"constant covariate columns: {', '.join(bad)}", ConstantColumnWarning)
    out = SurvivalDataset(
        data.time, data.status, data.exposure, xs, tau=data.tau, names=data.names
    )
    return out, info
