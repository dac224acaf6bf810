import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graftsurv.metrics import EvalDataset  # noqa: E402


def dataset_from_patients(patients) -> EvalDataset:
    """EvalDataset with one feature ``r`` from (event_day, failed, [(day, r), ...]) tuples."""
    days, rs, offsets = [], [], [0]
    for _, _, fus in patients:
        days.extend(d for d, _ in fus)
        rs.extend(r for _, r in fus)
        offsets.append(len(days))
    z = np.asarray(rs, dtype=float).reshape(-1, 1)
    return EvalDataset(
        patient_ids=tuple(f"p{i:03d}" for i in range(len(patients))),
        regions=("R",) * len(patients),
        event_day=np.array([p[0] for p in patients], dtype=np.int64),
        event=np.array([p[1] for p in patients], dtype=bool),
        offsets=np.array(offsets, dtype=np.int64),
        followup_day=np.array(days, dtype=np.int64),
        raw=z.copy(),
        z=z,
        feature_names=("r",),
    )


def random_patients(rng, n, risk_levels=None, horizon_days=4000):
    """Random longitudinal patients; small integer grids force ties in time and risk."""
    out = []
    for _ in range(n):
        day = int(rng.integers(1, horizon_days // 50)) * 50
        k = int(rng.integers(0, 5))
        fu_days = sorted(set(int(d) * 30 for d in rng.integers(0, max(day // 30, 1), k)))
        fu_days = [d for d in fu_days if d <= day]
        if risk_levels is None:
            risks = rng.normal(size=len(fu_days)).round(1)
        else:
            risks = rng.choice(risk_levels, size=len(fu_days))
        out.append((day, bool(rng.random() < 0.6), list(zip(fu_days, risks.tolist()))))
    return out


def first_col(snap, t, dt):
    return snap.z[:, 0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
