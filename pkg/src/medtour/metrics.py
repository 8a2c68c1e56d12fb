"""Response variables computed from a replication trace."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from medtour.agents import HOME_WAITING_STATES, PS
from medtour.casedata import N_SPECIALTIES
from medtour.simcore import MINUTES_PER_DAY

BED_QUEUE = "bed"
_HOME_WAITING = frozenset(s.value for s in HOME_WAITING_STATES)

METRIC_NAMES = (
    "early_dropout",
    "avg_system_wait",
    "avg_hospital_queue_wait",
    "avg_tourist_hospital_queue_wait",
    "emergency_before_appointment",
    "recovered",
    "utilisation_mean",
)
UTIL_NAMES = tuple(f"util_{s}" for s in range(1, N_SPECIALTIES + 1))
# response number -> field, in the order of the response table
RESPONSES = {
    1: "early_dropout",
    2: "avg_system_wait",
    3: "avg_tourist_hospital_queue_wait",
    4: "emergency_before_appointment",
    5: "recovered",
    6: "utilisation_mean",
}


@dataclass
class ResponseVector:
    early_dropout: int = 0
    avg_system_wait: float = 0.0
    avg_hospital_queue_wait: float = 0.0
    avg_tourist_hospital_queue_wait: float = 0.0
    emergency_before_appointment: int = 0
    recovered: int = 0
    utilisation: tuple[float | None, ...] = (None,) * N_SPECIALTIES
    arrivals: int = 0
    in_system: int = 0
    in_home: int = 0
    empty: dict[str, bool] = field(default_factory=dict)

    @property
    def utilisation_mean(self) -> float | None:
        vals = [u for u in self.utilisation if u is not None]
        return sum(vals) / len(vals) if vals else None

    def as_dict(self) -> dict[str, float | int | None]:
        out = {name: getattr(self, name) for name in METRIC_NAMES}
        out.update(zip(UTIL_NAMES, self.utilisation))
        return out

    def response(self, number: int) -> float:
        return getattr(self, RESPONSES[number])


def specialist_utilisation(doctor_time) -> tuple[float | None, ...]:
    """100 x worked / scheduled per specialty; None where nothing was scheduled.

    ``doctor_time`` holds (doctor id, specialty, worked, scheduled) rows.
    """
    worked = [0.0] * N_SPECIALTIES
    sched = [0.0] * N_SPECIALTIES
    for _, spec, w, s in doctor_time:
        worked[spec - 1] += w
        sched[spec - 1] += s
    return tuple(100.0 * w / s if s > 0 else None for w, s in zip(worked, sched))


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def compute_responses(trace, warmup_days: float | None = None) -> ResponseVector:
    """Recompute every response from ``trace``.

    Only patients arriving after the warm-up enter the counts, so the
    flow identity arrivals = recovered + dropouts + in system + in home
    treatment holds exactly.  Waits are in days.
    """
    warmup_end = trace.warmup_end if warmup_days is None else warmup_days * MINUTES_PER_DAY
    cohort = {p.file_number: p for p in trace.patients if p.arrival_time >= warmup_end}
    rv = ResponseVector()
    rv.arrivals = len(cohort)
    for p in cohort.values():
        if p.exit_kind == "recovered":
            rv.recovered += 1
        elif p.exit_kind == "dropout":
            rv.early_dropout += 1
        elif p.final_state == PS.HOME.value:
            rv.in_home += 1
        else:
            rv.in_system += 1

    total_wait = dict.fromkeys(cohort, 0.0)
    bed_all: list[float] = []
    bed_tourist: list[float] = []
    for fn, queue, start, end, tourist, _ in trace.spans:
        if fn not in cohort:
            continue
        length = (end - start) / MINUTES_PER_DAY
        total_wait[fn] += length
        if queue == BED_QUEUE:
            bed_all.append(length)
            if tourist:
                bed_tourist.append(length)

    rv.emergency_before_appointment = sum(
        1 for t, fn, src in trace.escalations if fn in cohort and src in _HOME_WAITING
    )
    for name, values in (
        ("avg_system_wait", list(total_wait.values())),
        ("avg_hospital_queue_wait", bed_all),
        ("avg_tourist_hospital_queue_wait", bed_tourist),
    ):
        m = _mean(values)
        rv.empty[name] = m is None
        setattr(rv, name, 0.0 if m is None else m)
    rv.utilisation = specialist_utilisation(trace.doctor_time)
    return rv


def csv_header() -> list[str]:
    return ["run_id", "replication", "seed", *"ABCDEFGHIJKLMNOP", *METRIC_NAMES, *UTIL_NAMES]


def csv_row(run_id: int, replication: int, seed: int, coded: dict[str, float], rv: ResponseVector) -> list[str]:
    """One results row; missing utilisations are written as empty cells."""
    cells = [str(run_id), str(replication), str(seed)]
    cells += [format_coded(coded[f]) for f in "ABCDEFGHIJKLMNOP"]
    d = rv.as_dict()
    cells += [format_value(d[k]) for k in METRIC_NAMES + UTIL_NAMES]
    return cells


def format_coded(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, bool)):
        return str(int(v))
    return repr(float(v))
