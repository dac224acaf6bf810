"""Synthetic multi-region transplant cohorts with a known hazard.

Each patient's six z-scored biomarkers start at a region-shifted normal draw
and follow an AR(1) path across the follow-up schedule. The graft-failure
time is exponential given the time-averaged linear predictor over the
schedule, and independent exponential censoring and competing death compete
with it up to an administrative horizon. Raw lab values are ``mean + sd * z``
per biomarker, floored at a small positive value.

Every patient draws from its own generator seeded with ``[seed, index]``, so
generation is order-free and reproducible.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cohort import (
    DAYS_PER_YEAR,
    FEATURES,
    BiomarkerPanel,
    EventType,
    FollowUpRecord,
    NormalizationStats,
    Outcome,
    PatientRecord,
)
from .errors import ConfigError, DataError

# (mean, sd) in SRTR units; z = 0 sits at the mean
RAW_ANCHORS: Mapping[str, tuple[float, float]] = {
    "bilirubin": (1.2, 0.3),
    "creatinine": (1.2, 0.3),
    "albumin": (3.8, 0.5),
    "ast": (40.0, 10.0),
    "alt": (40.0, 10.0),
    "inr": (1.1, 0.15),
}
RAW_FLOOR_FRACTION = 0.05

DEFAULT_SCHEDULE = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)
# roughly the MAS weights divided by the bilirubin weight
DEFAULT_BETA = (1.0, 0.14, -0.28, 0.10, 0.25, 0.08)
HAZARD_FORMS = ("linear", "quadratic")

_DATE_LO = dt.date(2003, 1, 1)
_DATE_SPAN_DAYS = (dt.date(2020, 12, 31) - _DATE_LO).days


def _vec(v, name, default=0.0) -> tuple[float, ...]:
    if v is None:
        return (default,) * len(FEATURES)
    if isinstance(v, Mapping):
        unknown = set(v) - set(FEATURES)
        if unknown:
            raise ConfigError(f"{name}: unknown feature(s) {sorted(unknown)}")
        return tuple(float(v.get(f, default)) for f in FEATURES)
    out = tuple(float(x) for x in v)
    if len(out) != len(FEATURES):
        raise ConfigError(f"{name} must have {len(FEATURES)} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class RegionProfile:
    label: str
    n_patients: int
    mean_shift: tuple[float, ...] = (0.0,) * 6
    scale: tuple[float, ...] = (1.0,) * 6
    delta_beta: tuple[float, ...] = (0.0,) * 6
    # multiplies h0 for this region; shifts the event rate without changing rankings
    hazard_ratio: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mean_shift", _vec(self.mean_shift, "mean_shift"))
        object.__setattr__(self, "scale", _vec(self.scale, "scale", 1.0))
        object.__setattr__(self, "delta_beta", _vec(self.delta_beta, "delta_beta"))
        if not self.label:
            raise ConfigError("region label must be non-empty")
        if self.n_patients < 0:
            raise ConfigError(f"region {self.label}: n_patients must be >= 0")
        if any(not s > 0 for s in self.scale):
            raise ConfigError(f"region {self.label}: scale multipliers must be > 0")
        if not self.hazard_ratio > 0:
            raise ConfigError(f"region {self.label}: hazard_ratio must be > 0")

    @property
    def shifted(self) -> dict[str, bool]:
        return {
            "mean_shift": any(v != 0 for v in self.mean_shift),
            "scale_shift": any(v != 1 for v in self.scale),
            "concept_shift": any(v != 0 for v in self.delta_beta),
        }


@dataclass(frozen=True)
class SimConfig:
    """Generator settings. Rates are per year; ``horizon`` is in years."""

    regions: tuple[RegionProfile, ...]
    beta_true: tuple[float, ...] = DEFAULT_BETA
    h0: float = 0.05
    censoring_rate: float = 0.05
    competing_rate: float = 0.02
    schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    rho: float = 0.9
    horizon: float = 10.0
    hazard_form: str = "linear"
    missing_rate: float = 0.0
    ineligible_fraction: float = 0.0
    raw_anchors: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(RAW_ANCHORS))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta_true", _vec(self.beta_true, "beta_true"))
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "schedule", tuple(float(s) for s in self.schedule))
        if not (0.0 <= self.rho < 1.0):
            raise ConfigError(f"rho (biomarker autocorrelation) must lie in [0, 1), got {self.rho}")
        if not self.h0 > 0:
            raise ConfigError(f"h0 (baseline hazard) must be > 0, got {self.h0}")
        for name in ("censoring_rate", "competing_rate"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be > 0, got {self.horizon}")
        if not self.schedule or any(b <= a for a, b in zip(self.schedule, self.schedule[1:])) or self.schedule[0] < 0:
            raise ConfigError("schedule must be a non-empty, strictly increasing list of years >= 0")
        if self.hazard_form not in HAZARD_FORMS:
            raise ConfigError(f"hazard_form must be one of {HAZARD_FORMS}, got {self.hazard_form!r}")
        for name in ("missing_rate", "ineligible_fraction"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if set(self.raw_anchors) != set(FEATURES):
            raise ConfigError(f"raw_anchors must cover exactly {FEATURES}")
        if any(not (m > 0 and s > 0) for m, s in self.raw_anchors.values()):
            raise ConfigError("raw_anchors means and sds must be > 0")
        labels = [r.label for r in self.regions]
        if len(set(labels)) != len(labels):
            raise ConfigError("region labels must be unique")

    @property
    def n_patients(self) -> int:
        return sum(r.n_patients for r in self.regions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["raw_anchors"] = {k: list(v) for k, v in self.raw_anchors.items()}
        d["horizon"] = self.horizon if math.isfinite(self.horizon) else "inf"
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        d = dict(d)
        try:
            d["regions"] = tuple(RegionProfile(**r) for r in d.get("regions", ()))
            if "horizon" in d:
                d["horizon"] = float(d["horizon"])
            if "raw_anchors" in d:
                d["raw_anchors"] = {k: tuple(v) for k, v in d["raw_anchors"].items()}
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad simulation config: {exc}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


EXT_BILIRUBIN_SHIFT = 3.0


def default_scenario(seed: int = 1, n_per_region: int = 1000, hazard_form: str = "linear") -> SimConfig:
    """One in-distribution region and one external region with much higher bilirubin.

    The external region's baseline hazard is scaled down by the hazard ratio
    its shift implies, so both regions see similar event rates and the shift
    mostly moves patients outside the training range of the covariates.
    """
    shift = dict.fromkeys(FEATURES, 0.0)
    shift["bilirubin"] = EXT_BILIRUBIN_SHIFT
    beta = DEFAULT_BETA[FEATURES.index("bilirubin")]
    return SimConfig(
        regions=(
            RegionProfile("OPTN-1", n_per_region),
            RegionProfile("EXT", n_per_region, mean_shift=shift, hazard_ratio=math.exp(-beta * EXT_BILIRUBIN_SHIFT)),
        ),
        hazard_form=hazard_form,
        seed=seed,
    )


def single_region_scenario(
    n: int, beta_true=DEFAULT_BETA, hazard_form: str = "linear", seed: int = 1, **overrides
) -> SimConfig:
    """A single in-distribution region, used for model-recovery checks."""
    return SimConfig(regions=(RegionProfile("OPTN-1", n),), beta_true=beta_true, hazard_form=hazard_form, seed=seed, **overrides)


# Biomarkers that barely move between visits, so the value seen at a visit
# is close to the time average that drives the hazard.
NEAR_STATIC_RHO = 0.995
RECOVERY_BETA = (1.0, -0.5, 0.25, 0.0, 0.0, 0.0)


def recovery_scenario(seed: int = 0, n: int = 2000) -> SimConfig:
    """Near-static biomarkers and a high event rate, for checking coefficient recovery."""
    return single_region_scenario(n, RECOVERY_BETA, seed=seed, rho=NEAR_STATIC_RHO, h0=0.2)


def nonlinear_scenario(seed: int = 1, n: int = 3000, hazard_form: str = "quadratic") -> SimConfig:
    """Hazard proportional to exp(bilirubin^2) (or the linear default for contrast)."""
    beta = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0) if hazard_form == "quadratic" else DEFAULT_BETA
    return single_region_scenario(n, beta, hazard_form=hazard_form, seed=seed, rho=NEAR_STATIC_RHO)


@dataclass(frozen=True)
class TruthRow:
    patient_id: str
    true_lp: float
    region: str
    mean_shift: bool
    scale_shift: bool
    concept_shift: bool


TRUTH_COLUMNS = ("patient_id", "true_lp", "region", "mean_shift", "scale_shift", "concept_shift")


def _simulate_patient(config: SimConfig, region: RegionProfile, index: int) -> tuple[PatientRecord, TruthRow]:
    rng = np.random.default_rng([config.seed, index])
    p = len(FEATURES)
    m = np.asarray(region.mean_shift)
    s = np.asarray(region.scale)
    sched = np.asarray(config.schedule)
    window = sched[sched <= config.horizon]
    if window.size == 0:
        window = sched[:1]
    # AR(1) path over the whole schedule; stationary around the region shift
    z = np.empty((len(sched), p))
    z[0] = m + s * rng.standard_normal(p)
    innov = rng.standard_normal((len(sched) - 1, p))
    root = math.sqrt(1.0 - config.rho**2)
    for k in range(1, len(sched)):
        z[k] = m + config.rho * (z[k - 1] - m) + s * root * innov[k - 1]
    zbar = z[: len(window)].mean(axis=0)
    beta = np.asarray(config.beta_true) + np.asarray(region.delta_beta)
    g = zbar if config.hazard_form == "linear" else zbar**2
    lp = float(beta @ g)

    u = rng.random(3)
    t_fail = -math.log(u[0]) / (config.h0 * region.hazard_ratio * math.exp(lp))
    t_cens = -math.log(u[1]) / config.censoring_rate if config.censoring_rate > 0 else math.inf
    t_comp = -math.log(u[2]) / config.competing_rate if config.competing_rate > 0 else math.inf
    t_obs, kind = min(
        (t_fail, EventType.GRAFT_FAILURE), (t_comp, EventType.COMPETING_DEATH), (t_cens, EventType.CENSORED)
    )
    if t_obs > config.horizon:
        t_obs, kind = config.horizon, EventType.CENSORED
    event_day = max(1, math.ceil(t_obs * DAYS_PER_YEAR))

    missing = rng.random((len(sched), p)) < config.missing_rate
    anchors = np.array([config.raw_anchors[f] for f in FEATURES])
    raw = anchors[:, 0] + anchors[:, 1] * z
    raw = np.maximum(raw, RAW_FLOOR_FRACTION * anchors[:, 0])
    follow_ups = []
    for k, year in enumerate(sched):
        if year >= t_obs:
            break
        vals = [None if missing[k, j] else float(f"{raw[k, j]:.6g}") for j in range(p)]
        follow_ups.append(FollowUpRecord(math.floor(year * DAYS_PER_YEAR), BiomarkerPanel.from_values(vals)))

    age = float(rng.integers(18, 76))
    transplant_count, organ_count = 1, 1
    date = _DATE_LO + dt.timedelta(days=int(rng.integers(0, _DATE_SPAN_DAYS + 1)))
    if rng.random() < config.ineligible_fraction:
        which = int(rng.integers(0, 4))
        if which == 0:
            age = float(rng.integers(1, 18))
        elif which == 1:
            transplant_count = 2
        elif which == 2:
            organ_count = 2
        else:
            date = dt.date(2001, 6, 1) + dt.timedelta(days=int(rng.integers(0, 200)))

    pid = f"{region.label}-{index:05d}"
    record = PatientRecord(
        patient_id=pid,
        region=region.label,
        age_at_transplant=age,
        transplant_count=transplant_count,
        organ_count=organ_count,
        transplant_date=date,
        follow_ups=tuple(follow_ups),
        outcome=Outcome(kind, event_day),
    )
    flags = region.shifted
    return record, TruthRow(pid, lp, region.label, flags["mean_shift"], flags["scale_shift"], flags["concept_shift"])


def generate_cohort(config: SimConfig) -> tuple[list[PatientRecord], dict[str, TruthRow]]:
    """Simulate every region; returns the records and the truth table keyed by patient id."""
    if config.n_patients == 0:
        raise ConfigError("simulation has zero patients")
    records, truth = [], {}
    index = 0
    for region in config.regions:
        for _ in range(region.n_patients):
            rec, row = _simulate_patient(config, region, index)
            records.append(rec)
            truth[row.patient_id] = row
            index += 1
    return records, truth


def oracle_risk(truth: Mapping[str, TruthRow], patient_id: str) -> float:
    try:
        return truth[patient_id].true_lp
    except KeyError:
        raise DataError(f"patient {patient_id!r} is not in the truth table") from None


def truth_to_csv(truth: Mapping[str, TruthRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRUTH_COLUMNS)
    for row in truth.values():
        w.writerow([row.patient_id, repr(row.true_lp), row.region, int(row.mean_shift), int(row.scale_shift), int(row.concept_shift)])
    return buf.getvalue()


def write_truth(truth: Mapping[str, TruthRow], path: str | Path) -> None:
    Path(path).write_text(truth_to_csv(truth))


def load_truth(path: str | Path) -> dict[str, TruthRow]:
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRUTH_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: truth table lacks column(s) {sorted(missing)}")
        for r in reader:
            out[r["patient_id"]] = TruthRow(
                r["patient_id"], float(r["true_lp"]), r["region"],
                r["mean_shift"] == "1", r["scale_shift"] == "1", r["concept_shift"] == "1",
            )
    return out


def anchor_normalization(config: SimConfig) -> NormalizationStats:
    """Stats that map raw values back onto the generator's own z-scale."""
    means = tuple(float(config.raw_anchors[f][0]) for f in FEATURES)
    sds = tuple(float(config.raw_anchors[f][1]) for f in FEATURES)
    return NormalizationStats(FEATURES, means, sds)
