"""Event calendar, random-number streams, samplers and weekly schedules.

Time is measured in minutes since the start of the run.  Day 0 is a
Saturday, matching the Saturday-first hospital week of the case schedules.
"""

from __future__ import annotations

import enum
import heapq
import math
import zlib
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

MINUTES_PER_DAY = 1440.0
MINUTES_PER_HOUR = 60.0
WEEKDAY_NAMES = ("Sat", "Sun", "Mon", "Tue", "Wed", "Thu", "Fri")


def day_index(t: float) -> int:
    return int(t // MINUTES_PER_DAY)


def weekday_index(t: float) -> int:
    return day_index(t) % 7


def days(n: float) -> float:
    return n * MINUTES_PER_DAY


# ---------------------------------------------------------------------------
# event calendar


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class EventHandle:
    __slots__ = ("time", "seq", "payload", "cancelled")

    def __init__(self, time: float, seq: int, payload: Any):
        self.time = time
        self.seq = seq
        self.payload = payload
        self.cancelled = False

    def __lt__(self, other: "EventHandle") -> bool:
        if self.time != other.time:
            return self.time < other.time
        return self.seq < other.seq

    def __repr__(self) -> str:
        return f"EventHandle(t={self.time:g}, seq={self.seq}, payload={self.payload!r})"


class EventCalendar:
    """Future-event list ordered by (fire time, scheduling sequence).

    Ties in fire time are delivered in the order they were scheduled.
    Cancelled handles stay in the heap and are skipped lazily on pop.
    """

    def __init__(self, horizon: float = math.inf):
        self.now = 0.0
        self.horizon = horizon
        self._heap: list[EventHandle] = []
        self._seq = 0
        self.delivered = 0

    def __len__(self) -> int:
        return sum(1 for h in self._heap if not h.cancelled)

    def schedule(self, t: float, payload: Any) -> EventHandle:
        if t < self.now:
            raise SchedulingError(f"cannot schedule at t={t} before clock {self.now}")
        handle = EventHandle(t, self._seq, payload)
        self._seq += 1
        heapq.heappush(self._heap, handle)
        return handle

    def schedule_in(self, delay: float, payload: Any) -> EventHandle:
        return self.schedule(self.now + delay, payload)

    @staticmethod
    def cancel(handle: EventHandle | None) -> None:
        if handle is not None:
            handle.cancelled = True

    def peek_time(self) -> float | None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0].time if self._heap else None

    def pop(self) -> tuple[float, Any] | None:
        """Deliver the next live event, or None when exhausted.

        Events past the horizon are not delivered; the clock stops at the
        horizon in that case.
        """
        heap = self._heap
        while heap:
            handle = heapq.heappop(heap)
            if handle.cancelled:
                continue
            if handle.time > self.horizon:
                heapq.heappush(heap, handle)
                self.now = max(self.now, self.horizon)
                return None
            self.now = handle.time
            self.delivered += 1
            return handle.time, handle.payload
        return None


# ---------------------------------------------------------------------------
# random-number streams

_TAG_CACHE: dict[str, int] = {}


def tag_code(tag: str) -> int:
    # crc32 rather than hash(): str hashing is salted per process
    code = _TAG_CACHE.get(tag)
    if code is None:
        code = _TAG_CACHE[tag] = zlib.crc32(tag.encode("utf-8"))
    return code


class RngStream:
    """Addressable stream: (master_seed, replication, purpose, agent id).

    Backed by the counter-based Philox generator seeded through a
    SeedSequence spawn key, so the same address always reproduces the same
    draws and different addresses are independent.
    """

    __slots__ = ("master_seed", "key", "_gen", "_buf", "_pos")

    _BLOCK = 64

    def __init__(self, master_seed: int, replication: int = 0, purpose: str = "", agent_id: int = 0):
        if master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        self.master_seed = int(master_seed)
        self.key = (int(replication), purpose, int(agent_id))
        seq = np.random.SeedSequence(
            entropy=self.master_seed,
            spawn_key=(int(replication), tag_code(purpose), int(agent_id)),
        )
        self._gen = np.random.Generator(np.random.Philox(seq))
        self._buf: list[float] = []
        self._pos = 0

    def random(self) -> float:
        # uniforms are drawn in blocks; the sequence is identical to
        # drawing them one at a time from the same generator
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return low + min(int(self.random() * (high - low)), high - low - 1)

    def choice_index(self, weights: Sequence[float]) -> int:
        total = float(sum(weights))
        if total <= 0.0:
            raise ValueError("weights must have positive sum")
        u = self.random() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        return len(weights) - 1


def sample_triangular(stream: RngStream, low: float, high: float, mode: float | None = None) -> float:
    """Inverse-CDF triangular draw; ``mode`` defaults to the midpoint."""
    if mode is None:
        mode = 0.5 * (low + high)
    if not (low <= mode <= high):
        raise ValueError(f"triangular parameters out of order: min={low}, mode={mode}, max={high}")
    u = stream.random()
    span = high - low
    if span == 0.0:
        return float(low)
    c = (mode - low) / span
    if u < c:
        return low + math.sqrt(u * span * (mode - low))
    return high - math.sqrt((1.0 - u) * span * (high - mode))


def triangular_cdf(x: float, low: float, high: float, mode: float) -> float:
    if x <= low:
        return 0.0
    if x >= high:
        return 1.0
    if x <= mode:
        return (x - low) ** 2 / ((high - low) * (mode - low))
    return 1.0 - (high - x) ** 2 / ((high - low) * (high - mode))


def sample_interarrival(stream: RngStream, rate_per_day: float) -> float:
    """Exponential gap in minutes for a Poisson stream of ``rate_per_day``."""
    if not rate_per_day > 0:
        raise ValueError("arrival rate must be positive")
    mean = MINUTES_PER_DAY / rate_per_day
    return -mean * math.log1p(-stream.random())


# ---------------------------------------------------------------------------
# weekly schedules


class Activity(str, enum.Enum):
    CLINIC = "Clinic"
    HOSPITAL = "Hospital"
    ONLINE = "Online"


@dataclass(frozen=True)
class WeeklyBlock:
    activity: Activity
    weekdays: frozenset[int]
    start_minute: float
    end_minute: float

    def __post_init__(self):
        if not self.start_minute < self.end_minute:
            raise ValueError("block must start before it ends")
        if not 0 <= self.start_minute and self.end_minute <= MINUTES_PER_DAY:
            raise ValueError("block must lie within one day")
        if not self.weekdays or not set(self.weekdays) <= set(range(7)):
            raise ValueError("weekdays must be a non-empty subset of 0..6")

    @property
    def length(self) -> float:
        return self.end_minute - self.start_minute


def block(activity: Activity, weekdays: str, start: str, end: str) -> WeeklyBlock:
    """Build a block from text such as ``block(CLINIC, "Sat,Sun", "10:00", "13:00")``."""
    return WeeklyBlock(activity, parse_weekdays(weekdays), _hhmm(start), _hhmm(end))


def _hhmm(text: str) -> float:
    h, m = text.split(":")
    return int(h) * 60.0 + int(m)


def parse_weekdays(text: str) -> frozenset[int]:
    text = text.strip()
    if text in ("*", "Every day"):
        return frozenset(range(7))
    out: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = (WEEKDAY_NAMES.index(p.strip()) for p in part.split("-"))
            i = a
            while True:
                out.add(i)
                if i == b:
                    break
                i = (i + 1) % 7
        else:
            out.add(WEEKDAY_NAMES.index(part))
    return frozenset(out)


def validate_schedule(schedule: Iterable[WeeklyBlock]) -> None:
    blocks = list(schedule)
    for wd in range(7):
        spans = sorted((b.start_minute, b.end_minute) for b in blocks if wd in b.weekdays)
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValueError(f"overlapping blocks on {WEEKDAY_NAMES[wd]}: {s0}-{e0} and {s1}")


def blocks_on_day(schedule: Sequence[WeeklyBlock], day: int) -> list[WeeklyBlock]:
    wd = day % 7
    return sorted((b for b in schedule if wd in b.weekdays), key=lambda b: b.start_minute)


def next_block_start(schedule: Sequence[WeeklyBlock], now: float, activity: Activity) -> float | None:
    """Earliest time >= now at which a block of ``activity`` is running.

    Returns ``now`` itself when a matching block is already in progress and
    None when the schedule has no block of that activity.
    """
    relevant = [b for b in schedule if b.activity == activity]
    if not relevant:
        return None
    day = day_index(now)
    minute = now - day * MINUTES_PER_DAY
    for offset in range(8):
        d = day + offset
        wd = d % 7
        starts = []
        for b in relevant:
            if wd not in b.weekdays:
                continue
            if offset == 0:
                if b.start_minute <= minute < b.end_minute:
                    return now
                if b.start_minute < minute:
                    continue
            starts.append(b.start_minute)
        if starts:
            return d * MINUTES_PER_DAY + min(starts)
    return None  # unreachable for a valid weekly block
