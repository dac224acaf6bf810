"""Longitudinal cohort handling.

Loading the long-format CSV, clinical exclusions, patient-level splitting,
forward-fill imputation, z-score normalization and the two training layouts
(counting-process intervals and augmented per-follow-up rows).

Times are integer days since transplant throughout this module.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, SchemaError

FEATURES: tuple[str, ...] = ("bilirubin", "creatinine", "albumin", "ast", "alt", "inr")
DAYS_PER_YEAR = 365.25

CSV_COLUMNS: tuple[str, ...] = (
    "patient_id",
    "region",
    "transplant_date",
    "age_at_transplant",
    "transplant_count",
    "organ_count",
    "followup_day",
    *FEATURES,
    "event_type",
    "event_day",
)
_STATIC_COLUMNS = (
    "region",
    "transplant_date",
    "age_at_transplant",
    "transplant_count",
    "organ_count",
    "event_type",
    "event_day",
)


class EventType(IntEnum):
    CENSORED = 0
    GRAFT_FAILURE = 1
    COMPETING_DEATH = 2


@dataclass(frozen=True)
class BiomarkerPanel:
    """Six laboratory values in SRTR units; ``None`` marks a missing value."""

    bilirubin: float | None = None
    creatinine: float | None = None
    albumin: float | None = None
    ast: float | None = None
    alt: float | None = None
    inr: float | None = None

    def __post_init__(self):
        for name in FEATURES:
            v = getattr(self, name)
            if v is None:
                continue
            if not math.isfinite(v) or v <= 0:
                raise DataError(f"{name} must be finite and > 0, got {v!r}")

    @classmethod
    def from_values(cls, values: Iterable[float | None]) -> "BiomarkerPanel":
        return cls(*[None if v is None else float(v) for v in values])

    def values(self) -> tuple[float | None, ...]:
        return tuple(getattr(self, f) for f in FEATURES)

    def is_complete(self) -> bool:
        return all(v is not None for v in self.values())


@dataclass(frozen=True)
class FollowUpRecord:
    time_since_transplant: int
    panel: BiomarkerPanel


@dataclass(frozen=True)
class Outcome:
    event_type: EventType
    event_time: int

    def __post_init__(self):
        if self.event_time <= 0:
            raise DataError(f"event_time must be > 0, got {self.event_time}")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    region: str
    age_at_transplant: float
    transplant_count: int
    organ_count: int
    transplant_date: dt.date
    follow_ups: tuple[FollowUpRecord, ...]
    outcome: Outcome

    def __post_init__(self):
        times = [f.time_since_transplant for f in self.follow_ups]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError(f"{self.patient_id}: follow-up times must be strictly increasing")
        if times and times[-1] > self.outcome.event_time:
            raise DataError(
                f"{self.patient_id}: last follow-up (day {times[-1]}) is after event_day "
                f"{self.outcome.event_time}"
            )


# --------------------------------------------------------------------------- loading


def _parse_int(text: str, column: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        f = float(text)
    except ValueError:
        raise DataError(f"{where}: column {column!r} is not a number: {text!r}") from None
    if not f.is_integer():
        raise DataError(f"{where}: column {column!r} must be an integer, got {text!r}")
    return int(f)


def _parse_float(text: str, column: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{where}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: column {column!r} is not finite: {text!r}")
    return v


def load_cohort(path: str | Path, schema: Mapping[str, str] | None = None) -> list[PatientRecord]:
    """Read a long-format cohort CSV, one row per follow-up.

    Parameters
    ----------
    path : path-like
        CSV file with the columns in ``CSV_COLUMNS``.
    schema : mapping, optional
        Maps canonical column names to the names used in the file. Columns
        not listed are looked up under their canonical name.

    A row whose ``followup_day`` is empty describes a patient without any
    follow-up; all biomarker fields on such a row must be empty too.
    Missing biomarker values are encoded as empty fields only.
    """
    path = Path(path)
    mapping = {c: c for c in CSV_COLUMNS}
    if schema:
        unknown = set(schema) - set(CSV_COLUMNS)
        if unknown:
            raise ConfigError(f"schema maps unknown columns: {sorted(unknown)}")
        mapping.update(schema)

    patients: dict[str, dict] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for canonical, actual in mapping.items():
            if actual not in header:
                raise SchemaError(f"{path}: missing column {actual!r} (for {canonical})")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            get = lambda c: (row[mapping[c]] or "").strip()  # noqa: E731
            pid = get("patient_id")
            if not pid:
                raise DataError(f"{where}: empty patient_id")
            try:
                tdate = dt.date.fromisoformat(get("transplant_date"))
            except ValueError:
                raise DataError(
                    f"{where}: transplant_date is not ISO-8601: {get('transplant_date')!r}"
                ) from None
            static = (
                get("region"),
                tdate,
                _parse_float(get("age_at_transplant"), "age_at_transplant", where),
                _parse_int(get("transplant_count"), "transplant_count", where),
                _parse_int(get("organ_count"), "organ_count", where),
                _parse_int(get("event_type"), "event_type", where),
                _parse_int(get("event_day"), "event_day", where),
            )
            if static[5] not in (0, 1, 2):
                raise DataError(f"{where}: event_type must be 0, 1 or 2, got {static[5]}")
            entry = patients.setdefault(pid, {"static": static, "fu": {}, "line": where})
            if entry["static"] != static:
                diff = [c for c, a, b in zip(_STATIC_COLUMNS, entry["static"], static) if a != b]
                raise DataError(f"{where}: static columns {diff} differ from earlier rows of {pid}")
            fu_text = get("followup_day")
            labs = [get(f) for f in FEATURES]
            if not fu_text:
                if any(labs):
                    raise DataError(f"{where}: biomarkers given without followup_day")
                continue
            day = _parse_int(fu_text, "followup_day", where)
            if day < 0:
                raise DataError(f"{where}: followup_day must be >= 0, got {day}")
            if day in entry["fu"]:
                raise DataError(f"{where}: duplicate follow-up at day {day} for patient {pid}")
            values = [None if not s else _parse_float(s, f, where) for f, s in zip(FEATURES, labs)]
            try:
                panel = BiomarkerPanel.from_values(values)
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from None
            entry["fu"][day] = panel

    cohort = []
    for pid, entry in patients.items():
        region, tdate, age, tcount, ocount, etype, eday = entry["static"]
        fus = tuple(FollowUpRecord(d, entry["fu"][d]) for d in sorted(entry["fu"]))
        try:
            cohort.append(
                PatientRecord(
                    patient_id=pid,
                    region=region,
                    age_at_transplant=age,
                    transplant_count=tcount,
                    organ_count=ocount,
                    transplant_date=tdate,
                    follow_ups=fus,
                    outcome=Outcome(EventType(etype), eday),
                )
            )
        except DataError as exc:
            raise DataError(f"{entry['line']}: {exc}") from None
    return cohort


def cohort_to_csv(cohort: Sequence[PatientRecord]) -> str:
    """The long CSV format read by :func:`load_cohort`, as text."""

    def fmt(v):
        return "" if v is None else f"{v:.6g}"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in cohort:
        static = [
            p.patient_id,
            p.region,
            p.transplant_date.isoformat(),
            f"{p.age_at_transplant:g}",
            p.transplant_count,
            p.organ_count,
        ]
        tail = [int(p.outcome.event_type), p.outcome.event_time]
        if not p.follow_ups:
            w.writerow(static + [""] + [""] * len(FEATURES) + tail)
        for f in p.follow_ups:
            w.writerow(static + [f.time_since_transplant] + [fmt(v) for v in f.panel.values()] + tail)
    return buf.getvalue()


def write_cohort(cohort: Sequence[PatientRecord], path: str | Path) -> None:
    Path(path).write_text(cohort_to_csv(cohort))


# --------------------------------------------------------------------------- exclusions


@dataclass(frozen=True)
class Criterion:
    """A named inclusion predicate; patients for which ``keep`` is false are removed."""

    name: str
    keep: Callable[[PatientRecord], bool]


def min_age(years: float = 18.0) -> Criterion:
    return Criterion(f"min_age({years:g})", lambda p: p.age_at_transplant >= years)


def first_transplant_only() -> Criterion:
    return Criterion("first_transplant_only", lambda p: p.transplant_count == 1)


def single_organ_only() -> Criterion:
    return Criterion("single_organ_only", lambda p: p.organ_count == 1)


def date_window(start: dt.date, end: dt.date) -> Criterion:
    return Criterion(
        f"date_window({start.isoformat()},{end.isoformat()})",
        lambda p: start <= p.transplant_date <= end,
    )


def requires_follow_up() -> Criterion:
    return Criterion("requires_follow_up", lambda p: len(p.follow_ups) > 0)


SRTR_WINDOW = (dt.date(2002, 2, 27), dt.date(2021, 12, 1))


def default_criteria() -> list[Criterion]:
    """The SRTR exclusion sequence, in the order it was applied to the registry."""
    return [
        date_window(*SRTR_WINDOW),
        first_transplant_only(),
        single_organ_only(),
        min_age(18),
        requires_follow_up(),
    ]


def criteria_from_config(items: Sequence[Mapping]) -> list[Criterion]:
    """Build criteria from JSON-style dicts such as ``{"name": "min_age", "years": 18}``."""
    out = []
    for item in items:
        name = item.get("name")
        if name == "min_age":
            out.append(min_age(float(item.get("years", 18))))
        elif name == "first_transplant_only":
            out.append(first_transplant_only())
        elif name == "single_organ_only":
            out.append(single_organ_only())
        elif name == "requires_follow_up":
            out.append(requires_follow_up())
        elif name == "date_window":
            try:
                start = dt.date.fromisoformat(item["start"])
                end = dt.date.fromisoformat(item["end"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"date_window needs ISO 'start' and 'end': {exc}") from None
            out.append(date_window(start, end))
        else:
            raise ConfigError(f"unknown exclusion criterion {name!r}")
    return out


@dataclass
class ExclusionReport:
    initial_n: int
    steps: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def final_n(self) -> int:
        return self.steps[-1][2] if self.steps else self.initial_n

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "initial_n": self.initial_n,
            "steps": [
                {"criterion": c, "n_excluded": e, "n_remaining": r} for c, e, r in self.steps
            ],
            "final_n": self.final_n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def apply_exclusions(
    cohort: Sequence[PatientRecord], criteria: Sequence[Criterion]
) -> tuple[list[PatientRecord], ExclusionReport]:
    """Apply ``criteria`` in order; each patient is counted at the first criterion removing them."""
    if not criteria:
        raise ConfigError("at least one exclusion criterion is required")
    kept = list(cohort)
    report = ExclusionReport(initial_n=len(kept))
    for crit in criteria:
        survivors = [p for p in kept if crit.keep(p)]
        report.steps.append((crit.name, len(kept) - len(survivors), len(survivors)))
        kept = survivors
    return kept, report


# --------------------------------------------------------------------------- split


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    short = n - sum(sizes)
    # ties in the remainder go to the earlier split
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def split(
    cohort: Sequence[PatientRecord],
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> tuple[list[PatientRecord], list[PatientRecord], list[PatientRecord]]:
    """Patient-level train/validation/test partition.

    Split sizes follow the largest-remainder rule (remainder ties resolved in
    favour of the earlier split); patients are ordered by id and shuffled
    with ``numpy.random.default_rng(seed)`` before being dealt out.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    if len(cohort) < 3:
        raise DataError(f"need at least 3 patients to split, got {len(cohort)}")
    ordered = sorted(cohort, key=lambda p: p.patient_id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n_train, n_val, _ = _largest_remainder(len(ordered), fractions)
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


# --------------------------------------------------------------------------- normalization


@dataclass(frozen=True)
class NormalizationStats:
    """Per-feature training mean and population standard deviation.

    The mean doubles as the imputation value when a patient has no prior
    observation of a feature.
    """

    feature_names: tuple[str, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.feature_names) == len(self.mean) == len(self.std)):
            raise ValueError("feature_names, mean and std must have equal length")
        for name, s in zip(self.feature_names, self.std):
            if not s > 0:
                raise DataError(f"std for {name} must be > 0")

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float)

    @property
    def std_array(self) -> np.ndarray:
        return np.asarray(self.std, dtype=float)

    def subset(self, names: Sequence[str]) -> "NormalizationStats":
        idx = [self.feature_names.index(n) for n in names]
        return NormalizationStats(
            tuple(names), tuple(self.mean[i] for i in idx), tuple(self.std[i] for i in idx)
        )

    def transform(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean_array) / self.std_array

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std_array + self.mean_array

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": list(self.mean),
            "std": list(self.std),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationStats":
        return cls(tuple(d["feature_names"]), tuple(map(float, d["mean"])), tuple(map(float, d["std"])))


def fit_normalization(train: Sequence[PatientRecord]) -> NormalizationStats:
    """Mean and population std (denominator n) of every observed training value."""
    if not train:
        raise DataError("cannot fit normalization on an empty cohort")
    columns: list[list[float]] = [[] for _ in FEATURES]
    for p in train:
        for f in p.follow_ups:
            for col, v in zip(columns, f.panel.values()):
                if v is not None:
                    col.append(v)
    means, stds = [], []
    for name, col in zip(FEATURES, columns):
        if len(set(col)) < 2:
            raise DataError(f"feature {name!r} is constant or unobserved in the training cohort")
        arr = np.asarray(col)
        means.append(float(arr.mean()))
        stds.append(float(arr.std(ddof=0)))
    return NormalizationStats(FEATURES, tuple(means), tuple(stds))


def impute(cohort: Sequence[PatientRecord], stats: NormalizationStats) -> list[PatientRecord]:
    """Forward-fill each biomarker within a patient, falling back to the training mean."""
    fallback = dict(zip(stats.feature_names, stats.mean))
    out = []
    for p in cohort:
        last = {f: None for f in FEATURES}
        fus = []
        for f in p.follow_ups:
            vals = {}
            for name, v in zip(FEATURES, f.panel.values()):
                if v is None:
                    v = last[name] if last[name] is not None else fallback[name]
                else:
                    last[name] = v
                vals[name] = v
            fus.append(FollowUpRecord(f.time_since_transplant, BiomarkerPanel(**vals)))
        out.append(replace(p, follow_ups=tuple(fus)))
    return out


@dataclass(frozen=True)
class PatientSeries:
    """A patient's imputed follow-ups as arrays: raw values and their z-scores."""

    patient_id: str
    region: str
    followup_days: np.ndarray  # (k,) int
    raw: np.ndarray  # (k, p)
    z: np.ndarray  # (k, p)
    event_type: EventType
    event_day: int


def normalize(cohort: Sequence[PatientRecord], stats: NormalizationStats) -> list[PatientSeries]:
    """z-score every follow-up with fixed training ``stats`` (no clipping, no refit)."""
    out = []
    for p in cohort:
        raw = np.array([f.panel.values() for f in p.follow_ups], dtype=object).reshape(-1, len(FEATURES))
        if any(v is None for v in raw.ravel()):
            raise DataError(f"{p.patient_id}: normalize requires imputed (complete) panels")
        raw = raw.astype(float)
        out.append(
            PatientSeries(
                patient_id=p.patient_id,
                region=p.region,
                followup_days=np.array([f.time_since_transplant for f in p.follow_ups], dtype=np.int64),
                raw=raw,
                z=stats.transform(raw) if len(raw) else raw.copy(),
                event_type=p.outcome.event_type,
                event_day=p.outcome.event_time,
            )
        )
    return out


def denormalize(z, stats: NormalizationStats) -> np.ndarray:
    return stats.inverse(z)


# --------------------------------------------------------------------------- training layouts


@dataclass(frozen=True)
class IntervalRow:
    patient_id: str
    start: int
    stop: int
    event: EventType  # CENSORED stands for "no event in this interval"
    covariates: np.ndarray


@dataclass(frozen=True)
class AugmentedRow:
    patient_id: str
    time_to_event: int
    event: EventType
    covariates: np.ndarray


def augment(series: Sequence[PatientSeries]) -> list[AugmentedRow]:
    """One row per follow-up, re-based so the measurement time is time zero."""
    rows = []
    dropped = 0
    for s in series:
        for day, z in zip(s.followup_days, s.z):
            tte = int(s.event_day - day)
            if tte <= 0:
                dropped += 1
                continue
            rows.append(AugmentedRow(s.patient_id, tte, s.event_type, z))
    if dropped:
        warnings.warn(f"augment: dropped {dropped} follow-up(s) at or after the event time", stacklevel=2)
    return rows


def to_counting_process(series: Sequence[PatientSeries]) -> list[IntervalRow]:
    """(start, stop] intervals between consecutive follow-ups, closed by the outcome."""
    rows = []
    dropped = 0
    for s in series:
        # a visit on (or after) the event day opens no interval; the event
        # closes the interval from the previous visit
        days = [int(d) for d in s.followup_days if d < s.event_day]
        dropped += len(s.followup_days) - len(days)
        for k, start in enumerate(days):
            last = k == len(days) - 1
            stop = s.event_day if last else days[k + 1]
            event = s.event_type if last else EventType.CENSORED
            rows.append(IntervalRow(s.patient_id, start, stop, event, s.z[k]))
    if dropped:
        warnings.warn(f"to_counting_process: dropped {dropped} follow-up(s) at or after the event time", stacklevel=2)
    return rows
