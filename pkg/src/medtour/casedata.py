"""Case-study constants: specialties, service times, slots and weekly schedules."""

from __future__ import annotations

from dataclasses import dataclass

from medtour.simcore import Activity, WeeklyBlock, block, validate_schedule

SPECIALTIES = (
    "Cardiology",
    "Internal medicine",
    "Cosmetic surgery",
    "Paediatrics",
    "Breast oncology",
)
N_SPECIALTIES = len(SPECIALTIES)
CARDIOLOGY = 1


@dataclass(frozen=True)
class ServiceProfile:
    """Two-parameter triangular (min, max) service times in minutes."""

    online: tuple[float, float]
    in_person: tuple[float, float]
    file_review: tuple[float, float]
    in_person_slots: int
    online_slots: int


SERVICE = {
    1: ServiceProfile((10, 15), (15, 25), (15, 20), 5, 5),
    2: ServiceProfile((10, 15), (10, 15), (10, 15), 3, 5),
    3: ServiceProfile((5, 7), (5, 10), (5, 10), 3, 5),
    4: ServiceProfile((5, 7), (10, 15), (20, 25), 5, 3),
    5: ServiceProfile((5, 10), (20, 25), (5, 10), 3, 4),
}

C, H, O = Activity.CLINIC, Activity.HOSPITAL, Activity.ONLINE

_ONLINE = (block(O, "*", "08:00", "10:00"), block(O, "*", "20:00", "22:00"))

WEEKLY_SCHEDULES: dict[int, tuple[WeeklyBlock, ...]] = {
    1: (
        block(C, "Sat,Sun", "10:00", "13:00"),
        block(H, "Sat,Sun", "13:30", "14:30"),
        block(H, "Mon-Fri", "13:00", "14:00"),
        *_ONLINE,
    ),
    2: (
        block(C, "Sat,Sun,Mon,Tue,Fri", "10:00", "15:00"),
        block(H, "Sat,Sun,Mon,Tue,Fri", "15:30", "17:00"),
        block(H, "Wed,Thu", "13:00", "14:00"),
        *_ONLINE,
    ),
    3: (
        block(C, "Sat,Sun,Wed", "10:00", "14:00"),
        block(H, "Sat,Sun,Wed", "14:30", "16:00"),
        block(H, "Mon,Tue,Thu,Fri", "13:00", "14:00"),
        *_ONLINE,
    ),
    4: (
        block(C, "Sat", "10:00", "11:00"),
        block(H, "Sat", "12:00", "13:30"),
        block(H, "Sun-Fri", "13:00", "14:00"),
        *_ONLINE,
    ),
    5: (
        block(C, "Sat,Sun,Wed,Thu,Fri", "10:00", "16:00"),
        block(H, "Sat,Sun,Wed,Thu,Fri", "16:30", "18:30"),
        block(H, "Mon,Tue", "13:00", "14:00"),
        *_ONLINE,
    ),
}

for _sched in WEEKLY_SCHEDULES.values():
    validate_schedule(_sched)

BASELINE_BEDS = (40, 50, 70, 20, 60)
BASELINE_SPECIALISTS = (1, 6, 2, 2, 3)
BASELINE_SLOT_MINUTES = 5.0
GP_COUNT = 3
