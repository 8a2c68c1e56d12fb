"""Hospital case model: arrivals, triage, consultations, beds and discharge.

One :class:`HospitalModel` instance runs one replication.  Everything
random is drawn from streams addressed by (seed, replication, purpose,
agent), so a replication is a pure function of its config and index.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field

from medtour.agents import (
    ADHERENCE_STATES,
    LEAVE_STATES,
    PS,
    WAITING_STATES,
    AdherenceParams,
    Channel,
    ContractViolation,
    DoctorAgent,
    DS,
    Gender,
    Health,
    HEALTH_ORDER,
    Outcome,
    PatientAgent,
    PatientType,
    Phase,
    Recommendation,
    SectionAgent,
    Trait,
    capacity_rebalance,
    consultation_duration,
    disagreement_probability,
    doctor_change_probability,
    doctor_transition,
    drug_behavior_step,
    patient_transition,
    return_borrowed_beds,
    update_popularity,
)
from medtour.casedata import N_SPECIALTIES, SERVICE, WEEKLY_SCHEDULES
from medtour.config import ScenarioConfig
from medtour.simcore import (
    MINUTES_PER_DAY,
    Activity,
    EventCalendar,
    EventHandle,
    RngStream,
    blocks_on_day,
    day_index,
    sample_interarrival,
    sample_triangular,
)

GP_QUEUE = "gp"
CLINIC_QUEUE = "clinic"
VIDEO_QUEUE = "video"
EMERGENCY_QUEUE = "emergency"
BED_QUEUE = "bed"

_QUEUE_OF_STATE = {
    PS.WAIT_IN_CQUEUE: CLINIC_QUEUE,
    PS.WAIT_IN_VQUEUE: VIDEO_QUEUE,
    PS.EMERGENCY: EMERGENCY_QUEUE,
    PS.WAIT_FOR_EMPTY_BED: BED_QUEUE,
}


@dataclass
class PatientRecord:
    file_number: int
    patient_type: str
    disease: int
    arrival_time: float
    exit_time: float | None = None
    exit_kind: str | None = None
    final_state: str | None = None


@dataclass
class ReplicationTrace:
    """Append-only record of one replication.

    Holds enough to recompute every response offline: patient episodes,
    queue spans, escalations, bed-queue events and doctor time.
    """

    warmup_end: float
    end: float
    mode: str
    priority_policy: int
    patients: list[PatientRecord] = field(default_factory=list)
    # (file_number, queue, start, end, tourist, censored)
    spans: list[tuple[int, str, float, float, bool, bool]] = field(default_factory=list)
    # (time, file_number, state escalated from)
    escalations: list[tuple[float, int, str]] = field(default_factory=list)
    # (time, section, kind, file_number, tourist, request_time)
    bed_events: list[tuple[float, int, str, int, bool, float]] = field(default_factory=list)
    # (time, lender, borrower, beds) ; beds < 0 for returns
    transfers: list[tuple[float, int, int, int]] = field(default_factory=list)
    # per doctor: (doc_id, specialty, worked, scheduled) inside the stats window
    doctor_time: list[tuple[int, int, float, float]] = field(default_factory=list)
    # (time, kind, agent id, from, to, trigger); only filled when requested
    transitions: list[tuple[float, str, int, str, str, str]] = field(default_factory=list)
    adherence_steps: int = 0
    events: int = 0


class _DoctorRuntime:
    __slots__ = ("agent", "block", "pending", "busy", "clinic_queue", "video_queue",
                 "emergency_queue", "review_queue", "ward", "presence_start", "task")

    def __init__(self, agent: DoctorAgent):
        self.agent = agent
        self.block: tuple[Activity, float, float] | None = None
        self.pending: deque = deque()
        self.busy = False
        self.clinic_queue: list[tuple[float, int, int]] = []
        self.video_queue: list[tuple[float, int, int]] = []
        self.emergency_queue: deque[int] = deque()
        self.review_queue: deque[int] = deque()
        self.ward: deque[int] = deque()
        self.presence_start: float | None = None
        self.task: tuple | None = None


class HospitalModel:
    def __init__(self, config: ScenarioConfig, replication: int = 0, record_transitions: bool = False,
                 check_invariants: bool = False, adherence: AdherenceParams | None = None):
        if config.master_seed is None:
            raise ValueError("config.master_seed must be set")
        self.cfg = config
        self.rep = replication
        self.seed = config.master_seed
        self.hybrid = config.hybrid
        self.bp = config.behaviour
        self.pp = config.process
        self.adherence = adherence or (config.adherence() if self.hybrid else None)
        self.record = record_transitions
        self.check = check_invariants
        self.warmup_end = config.warmup_days * MINUTES_PER_DAY
        self.end = self.warmup_end + config.horizon_days * MINUTES_PER_DAY
        self.cal = EventCalendar(horizon=self.end)
        self.trace = ReplicationTrace(self.warmup_end, self.end, config.mode, config.O)
        self.arrival_stream = RngStream(self.seed, replication, "arrivals")
        self.ward_stream = RngStream(self.seed, replication, "ward")
        self.patients: dict[int, PatientAgent] = {}
        self.records: dict[int, PatientRecord] = {}
        self.next_file = 1
        self._seq = 0

        self.doctors: list[_DoctorRuntime] = []
        self.by_specialty: dict[int, list[_DoctorRuntime]] = {s: [] for s in range(1, N_SPECIALTIES + 1)}
        for spec in range(1, N_SPECIALTIES + 1):
            prof = SERVICE[spec]
            for _ in range(config.specialists[spec - 1]):
                d = DoctorAgent(len(self.doctors), spec, prof.in_person_slots, prof.online_slots,
                                WEEKLY_SCHEDULES[spec])
                rt = _DoctorRuntime(d)
                self.doctors.append(rt)
                self.by_specialty[spec].append(rt)
        self.worked = [0.0] * len(self.doctors)
        self.scheduled = [0.0] * len(self.doctors)
        self.slots: list[dict[Channel, dict[tuple[int, float, int], int]]] = [
            {Channel.IN_PERSON: {}, Channel.ONLINE: {}} for _ in self.doctors
        ]
        self.first_open: list[dict[Channel, int]] = [
            {Channel.IN_PERSON: 0, Channel.ONLINE: 0} for _ in self.doctors
        ]
        self.sections = {s: SectionAgent(s, config.beds[s - 1]) for s in range(1, N_SPECIALTIES + 1)}
        self.total_baseline_beds = sum(config.beds)
        self.gp_free = self.pp.gp_count
        self.gp_queue: deque[int] = deque()
        self.queue_entry: dict[int, float] = {}
        self.handlers = {
            "arrival": self._on_arrival,
            "triage_done": self._on_triage_done,
            "day_start": self._on_day_start,
            "block_start": self._on_block_start,
            "block_end": self._on_block_end,
            "task_done": self._on_task_done,
            "confirm": self._on_confirm,
            "confirm_disagree": self._on_confirm_disagree,
            "appointment": self._on_appointment,
            "worry": self._on_worry,
            "review3": self._on_review3,
            "leave5": self._on_leave5,
            "home_course_end": self._on_home_course_end,
            "bed_slot_date": self._on_bed_slot_date,
        }

    # ------------------------------------------------------------------ run

    def run(self) -> ReplicationTrace:
        cal = self.cal
        if self.end > 0:
            cal.schedule(0.0, ("day_start", 0))
            cal.schedule(sample_interarrival(self.arrival_stream, self.cfg.arrival_rate_per_day), ("arrival",))
        handlers = self.handlers
        n = 0
        while True:
            item = cal.pop()
            if item is None:
                break
            _, payload = item
            n += 1
            try:
                handlers[payload[0]](*payload[1:])
            except ContractViolation as exc:
                raise ContractViolation(f"{exc} [event #{n} {payload[0]} at t={cal.now:.3f}]") from None
            if self.check:
                self._check_invariants()
        self.trace.events = n
        self._finish()
        return self.trace

    def _finish(self) -> None:
        end = self.end
        for fn, entry in self.queue_entry.items():
            p = self.patients[fn]
            q = _QUEUE_OF_STATE.get(p.state, GP_QUEUE)
            self.trace.spans.append((fn, q, entry, end, p.is_tourist, True))
        for rt in self.doctors:
            if rt.presence_start is not None:
                self._accrue(self.worked, rt.agent.doc_id, rt.presence_start, end)
        for fn, rec in self.records.items():
            p = self.patients[fn]
            rec.final_state = p.state.value
            self.trace.patients.append(rec)
        for rt in self.doctors:
            d = rt.agent
            d.worked_minutes = self.worked[d.doc_id]
            d.scheduled_minutes = self.scheduled[d.doc_id]
            self.trace.doctor_time.append((d.doc_id, d.specialization, d.worked_minutes, d.scheduled_minutes))

    # ----------------------------------------------------------- utilities

    def _accrue(self, acc: list[float], doc_id: int, t0: float, t1: float) -> None:
        lo = max(t0, self.warmup_end)
        hi = min(t1, self.end)
        if hi > lo:
            acc[doc_id] += hi - lo

    def _p_move(self, p: PatientAgent, trigger: str) -> PS:
        now = self.cal.now
        old = p.state
        if old in _QUEUE_OF_STATE or p.file_number in self.queue_entry:
            self._close_queue(p, now)
        new, _ = patient_transition(p, trigger, now)
        if self.record:
            self.trace.transitions.append((now, "patient", p.file_number, old.value, new.value, trigger))
        if new in _QUEUE_OF_STATE:
            self.queue_entry[p.file_number] = now
        if old in WAITING_STATES and new not in WAITING_STATES:
            self._cancel(p, "worry")
        elif new in WAITING_STATES and old not in WAITING_STATES:
            p.wait_since_service = now
        if new is PS.WAIT_FOR_VISIT:
            self._arm_worry(p)
        return new

    def _close_queue(self, p: PatientAgent, now: float) -> None:
        start = self.queue_entry.pop(p.file_number, None)
        if start is None:
            return
        q = _QUEUE_OF_STATE.get(p.state, GP_QUEUE)
        self.trace.spans.append((p.file_number, q, start, now, p.is_tourist, False))

    def _d_move(self, rt: _DoctorRuntime, trigger: str) -> None:
        old = rt.agent.state
        doctor_transition(rt.agent, trigger, self.cal.now)
        if self.record:
            self.trace.transitions.append(
                (self.cal.now, "doctor", rt.agent.doc_id, old.value, rt.agent.state.value, trigger))

    def _s_record(self, section: SectionAgent, old, trigger: str) -> None:
        if self.record:
            self.trace.transitions.append(
                (self.cal.now, "section", section.spec, old.value, section.state.value, trigger))

    def _cancel(self, p: PatientAgent, name: str) -> None:
        h = p.handles.pop(name, None)
        if isinstance(h, EventHandle):
            self.cal.cancel(h)

    def _service_received(self, p: PatientAgent) -> None:
        p.worry_counter = 0
        p.wait_since_service = self.cal.now

    def _exit(self, p: PatientAgent, kind: str) -> None:
        rec = self.records[p.file_number]
        rec.exit_time = self.cal.now
        rec.exit_kind = kind
        for name in [k for k, h in p.handles.items() if isinstance(h, EventHandle)]:
            self._cancel(p, name)

    # --------------------------------------------------------- arrivals/GP

    def spawn_patient(self) -> PatientAgent:
        fn = self.next_file
        self.next_file += 1
        p = spawn_patient(RngStream(self.seed, self.rep, "patient", fn), self.cfg, fn, self.cal.now)
        self.patients[fn] = p
        self.records[fn] = PatientRecord(fn, p.patient_type.value, p.disease, p.arrival_time)
        return p

    def _on_arrival(self) -> None:
        p = self.spawn_patient()
        now = self.cal.now
        self.cal.schedule_in(sample_interarrival(self.arrival_stream, self.cfg.arrival_rate_per_day), ("arrival",))
        p.request_time = now
        p.wait_since_service = now
        if self.hybrid:
            p.handles["review3"] = self.cal.schedule_in(self.bp.review_period_days * MINUTES_PER_DAY,
                                                        ("review3", p.file_number))
            if self.bp.leave_timer_enabled:
                p.handles["leave5"] = self.cal.schedule_in(self.bp.leave_period_days * MINUTES_PER_DAY,
                                                           ("leave5", p.file_number))
        self.queue_entry[p.file_number] = now
        if self.gp_free > 0:
            self._start_triage(p)
        else:
            self.gp_queue.append(p.file_number)

    def _start_triage(self, p: PatientAgent) -> None:
        self.gp_free -= 1
        self._close_queue(p, self.cal.now)
        lo, hi = self.pp.triage_minutes
        self.cal.schedule_in(sample_triangular(p.stream, lo, hi), ("triage_done", p.file_number))

    def _on_triage_done(self, fn: int) -> None:
        self.gp_free += 1
        if self.gp_queue:
            self._start_triage(self.patients[self.gp_queue.popleft()])
        p = self.patients[fn]
        if p.state is not PS.NEED_SERVICE:
            return  # escalated or left while queueing for a GP
        channel, rt = choose_channel_and_doctor(p.stream, p, self.cfg, self.by_specialty[p.disease])
        p.channel = channel
        self._refer(p, rt)

    def _refer(self, p: PatientAgent, rt: _DoctorRuntime) -> None:
        p.doctor = rt.agent.doc_id
        rt.review_queue.append(p.file_number)
        self._doctor_poke(rt)

    # ------------------------------------------------------ doctor schedule

    def _on_day_start(self, day: int) -> None:
        t0 = day * MINUTES_PER_DAY
        if t0 + MINUTES_PER_DAY < self.end:
            self.cal.schedule(t0 + MINUTES_PER_DAY, ("day_start", day + 1))
        for rt in self.doctors:
            for b in blocks_on_day(rt.agent.weekly_schedule, day):
                self.cal.schedule(t0 + b.start_minute, ("block_start", rt.agent.doc_id, b.activity,
                                                        t0 + b.end_minute))

    def _on_block_start(self, doc_id: int, activity: Activity, end: float) -> None:
        rt = self.doctors[doc_id]
        self._accrue(self.scheduled, doc_id, self.cal.now, end)
        self.cal.schedule(end, ("block_end", doc_id))
        rt.pending.append((activity, self.cal.now, end))
        if not rt.busy and rt.block is None:
            self._enter_next_block(rt)

    def _enter_next_block(self, rt: _DoctorRuntime) -> None:
        now = self.cal.now
        while rt.pending:
            activity, start, end = rt.pending.popleft()
            if end <= now and activity is not Activity.HOSPITAL:
                # block lost entirely to overtime elsewhere
                continue
            rt.block = (activity, start, end)
            if activity is Activity.CLINIC:
                self._d_move(rt, "goto_clinic")
                rt.presence_start = now
            elif activity is Activity.HOSPITAL:
                self._d_move(rt, "goto_hospital")
                self._build_ward_round(rt)
            else:
                self._d_move(rt, "check")
            self._doctor_next(rt)
            return

    def _on_block_end(self, doc_id: int) -> None:
        rt = self.doctors[doc_id]
        if not rt.busy and rt.block is not None and rt.block[2] <= self.cal.now:
            self._doctor_next(rt)

    def _leave_block(self, rt: _DoctorRuntime) -> None:
        activity = rt.block[0]
        now = self.cal.now
        if activity is Activity.CLINIC:
            self._accrue(self.worked, rt.agent.doc_id, rt.presence_start, now)
            rt.presence_start = None
            nxt = rt.pending[0] if rt.pending else None
            if nxt is not None and nxt[0] is Activity.HOSPITAL:
                rt.pending.popleft()
                rt.block = nxt
                self._d_move(rt, "goto_hospital")
                self._build_ward_round(rt)
                self._doctor_next(rt)
                return
            self._d_move(rt, "leave")
        elif activity is Activity.HOSPITAL:
            self._d_move(rt, "leave")
        else:
            self._d_move(rt, "finish")
        rt.block = None
        self._enter_next_block(rt)

    def _doctor_poke(self, rt: _DoctorRuntime) -> None:
        if not rt.busy and rt.block is not None:
            self._doctor_next(rt)

    def _doctor_next(self, rt: _DoctorRuntime) -> None:
        """Pick the doctor's next task inside the current block, or leave."""
        if rt.busy or rt.block is None:
            return
        activity, _, end = rt.block
        now = self.cal.now
        open_block = now < end
        if activity is Activity.CLINIC:
            if rt.clinic_queue:
                _, _, fn = rt.clinic_queue.pop(0)
                self._start_visit(rt, self.patients[fn], Channel.IN_PERSON)
                return
        elif activity is Activity.ONLINE:
            if rt.emergency_queue:
                self._start_visit(rt, self.patients[rt.emergency_queue.popleft()], Channel.ONLINE)
                return
            if rt.video_queue:
                _, _, fn = rt.video_queue.pop(0)
                self._start_visit(rt, self.patients[fn], Channel.ONLINE)
                return
            if open_block and rt.review_queue:
                self._start_file_review(rt, self.patients[rt.review_queue.popleft()])
                return
        else:
            while rt.ward:
                fn = rt.ward.popleft()
                p = self.patients[fn]
                if p.state is PS.HOSPITALIZATION:
                    self._start_ward_service(rt, p)
                    return
        if not open_block:
            self._leave_block(rt)

    def _busy_for(self, rt: _DoctorRuntime, minutes: float, task: tuple, count_work: bool = True) -> None:
        rt.busy = True
        rt.task = task
        now = self.cal.now
        if count_work:
            self._accrue(self.worked, rt.agent.doc_id, now, now + minutes)
        self.cal.schedule(now + minutes, ("task_done", rt.agent.doc_id))

    def _on_task_done(self, doc_id: int) -> None:
        rt = self.doctors[doc_id]
        task = rt.task
        rt.busy = False
        rt.task = None
        kind = task[0]
        if kind == "review":
            self._finish_file_review(rt, self.patients[task[1]])
        elif kind == "visit":
            self._visit_pass_done(rt, self.patients[task[1]], task[2])
        elif kind == "ward":
            self._finish_ward_service(rt, self.patients[task[1]])
        self._doctor_next(rt)

    # ---------------------------------------------------------- file review

    def _start_file_review(self, rt: _DoctorRuntime, p: PatientAgent) -> None:
        if p.state is not PS.NEED_SERVICE or p.doctor != rt.agent.doc_id:
            self._doctor_next(rt)
            return
        minutes = consultation_duration(p.stream, rt.agent, p, p.channel, Phase.FILE_REVIEW,
                                        self.bp, self.hybrid)
        self._busy_for(rt, minutes, ("review", p.file_number))

    def _finish_file_review(self, rt: _DoctorRuntime, p: PatientAgent) -> None:
        if p.state is not PS.NEED_SERVICE:
            return
        self._service_received(p)
        self._p_move(p, "file_reviewed")
        window = self.bp.confirmation_window_minutes
        if self.hybrid and p.stream.bernoulli(disagreement_probability(p, self.bp, channel=p.channel)):
            p.handles["confirm"] = self.cal.schedule_in(p.stream.uniform(0.0, window),
                                                        ("confirm_disagree", p.file_number))
        else:
            p.handles["confirm"] = self.cal.schedule_in(window, ("confirm", p.file_number))

    def _on_confirm(self, fn: int) -> None:
        p = self.patients[fn]
        p.handles.pop("confirm", None)
        if p.state is not PS.CONFIRMATION:
            return
        self._p_move(p, "confirm")
        self._book(p)

    def _on_confirm_disagree(self, fn: int) -> None:
        p = self.patients[fn]
        p.handles.pop("confirm", None)
        if p.state is not PS.CONFIRMATION:
            return
        p.channel = Channel.IN_PERSON if p.channel is Channel.ONLINE else Channel.ONLINE
        self._p_move(p, "disagree")
        self._book(p)

    # -------------------------------------------------------------- booking

    def _book(self, p: PatientAgent) -> None:
        rt = self.doctors[p.doctor]
        t, key = self._find_slot(rt.agent, p.channel, self.cal.now)
        self.slots[rt.agent.doc_id][p.channel][key] = p.file_number
        p.appointment_time = t
        p.handles["slot"] = key
        rt.agent.add_patient(p.file_number, p.channel)
        p.handles["appointment"] = self.cal.schedule(t, ("appointment", p.file_number))

    def _find_slot(self, doctor: DoctorAgent, channel: Channel, now: float) -> tuple[float, tuple]:
        taken = self.slots[doctor.doc_id][channel]
        day = max(day_index(now), self.first_open[doctor.doc_id][channel])
        activity = Activity.CLINIC if channel is Channel.IN_PERSON else Activity.ONLINE
        n_slots = doctor.clinic_slots if channel is Channel.IN_PERSON else doctor.video_slots
        t, key, day_found = find_free_slot(doctor.weekly_schedule, activity, n_slots,
                                           self.cfg.P if channel is Channel.IN_PERSON else None,
                                           now, day, taken)
        # days before day_found are full or already past
        self.first_open[doctor.doc_id][channel] = day_found
        return t, key

    def _release_booking(self, p: PatientAgent, abandoned: bool) -> None:
        self._cancel(p, "appointment")
        key = p.handles.pop("slot", None)
        if key is not None and p.doctor is not None:
            doc = self.doctors[p.doctor].agent
            self.slots[doc.doc_id][p.channel].pop(key, None)
            fo = self.first_open[doc.doc_id]
            fo[p.channel] = min(fo[p.channel], key[0])
            if p.file_number in doc.patient_list:
                doc.remove_patient(p.file_number)
            if abandoned and self.hybrid:
                doc.popularity = update_popularity(doc.popularity, Outcome.ABANDONED, self.bp)
        p.appointment_time = None

    def _on_appointment(self, fn: int) -> None:
        p = self.patients[fn]
        p.handles.pop("appointment", None)
        p.handles.pop("slot", None)
        if p.state is not PS.WAIT_FOR_VISIT:
            return
        rt = self.doctors[p.doctor]
        self._seq += 1
        if p.channel is Channel.IN_PERSON:
            self._p_move(p, "appointment_clinic")
            bisect.insort(rt.clinic_queue, (self.cal.now, self._seq, fn))
        else:
            self._p_move(p, "appointment_online")
            bisect.insort(rt.video_queue, (self.cal.now, self._seq, fn))
        self._doctor_poke(rt)

    # --------------------------------------------------------------- visits

    def _start_visit(self, rt: _DoctorRuntime, p: PatientAgent, channel: Channel) -> None:
        if channel is Channel.IN_PERSON:
            self._d_move(rt, "start_visit")
        else:
            self._d_move(rt, "start_online")
        self._p_move(p, "called")
        p.recheck_done = False
        minutes = consultation_duration(p.stream, rt.agent, p, channel, p.phase, self.bp, self.hybrid)
        # clinic presence already counts as work; online visits accrue here
        self._busy_for(rt, minutes, ("visit", p.file_number, channel),
                       count_work=channel is Channel.ONLINE)

    def _visit_pass_done(self, rt: _DoctorRuntime, p: PatientAgent, channel: Channel) -> None:
        self._d_move(rt, "decide")
        self._p_move(p, "recommend")
        if not p.recheck_done:
            p.handles["rec"] = self._recommend(p)
        rec = p.handles["rec"]
        if self.hybrid and not p.recheck_done and p.stream.bernoulli(
                disagreement_probability(p, self.bp, recommendation=rec)):
            p.recheck_done = True
            self._d_move(rt, "contested")
            self._p_move(p, "disagree")
            if p.stream.bernoulli(self.pp.revise_after_recheck):
                p.handles["rec"] = Recommendation.HOSPITALIZE if p.hosp_pref else Recommendation.HOME
            minutes = consultation_duration(p.stream, rt.agent, p, channel, p.phase, self.bp, self.hybrid)
            self._busy_for(rt, minutes, ("visit", p.file_number, channel),
                           count_work=channel is Channel.ONLINE)
            return
        del p.handles["rec"]
        self._d_move(rt, "visit_end")
        doc = rt.agent
        if p.file_number in doc.patient_list:
            doc.remove_patient(p.file_number)
        if self.hybrid:
            outcome = Outcome.CONTESTED if p.recheck_done else Outcome.COMPLETED
            doc.popularity = update_popularity(doc.popularity, outcome, self.bp)
        self._service_received(p)
        p.emergency_flag = False
        p.phase = Phase.REVISIT
        self._act_on(p, rec, channel)

    def _recommend(self, p: PatientAgent) -> Recommendation:
        pp = self.pp
        if p.state is PS.ACCEPT_OR_NOT and p.handles.get("emergency_visit"):
            probs = pp.emergency_outcome
        elif p.phase is Phase.INITIAL:
            probs = pp.initial_outcome
        else:
            probs = pp.revisit_outcome
        if p.health_status is Health.CRITICAL and p.stream.bernoulli(pp.critical_hospitalise):
            return Recommendation.HOSPITALIZE
        return (Recommendation.DISCHARGE, Recommendation.HOME, Recommendation.HOSPITALIZE)[
            p.stream.choice_index(probs)]

    def _act_on(self, p: PatientAgent, rec: Recommendation, channel: Channel) -> None:
        p.handles.pop("emergency_visit", None)
        if rec is Recommendation.DISCHARGE:
            self._p_move(p, "discharge")
            self._exit(p, "recovered")
        elif rec is Recommendation.HOME:
            self._p_move(p, "home")
            lo, mode, hi = self.pp.home_course_days
            p.handles["home"] = self.cal.schedule_in(
                sample_triangular(p.stream, lo, hi, mode) * MINUTES_PER_DAY, ("home_course_end", p.file_number))
        else:
            self.enqueue_for_bed(p, channel)

    def _on_home_course_end(self, fn: int) -> None:
        p = self.patients[fn]
        p.handles.pop("home", None)
        if p.state is not PS.HOME:
            return
        self._p_move(p, "request_again")
        p.request_time = self.cal.now
        self._refer(p, self.doctors[p.doctor])

    # ----------------------------------------------------------------- beds

    def enqueue_for_bed(self, p: PatientAgent, channel: Channel) -> str:
        """Route a patient recommended for admission; returns the outcome.

        Outcomes: ``admit`` (bed free and nobody ahead), ``home`` (a future
        slot booked under the scheduled policy) or ``queue``.
        """
        section = self.sections[p.disease]
        now = self.cal.now
        p.bed_request_time = now
        p.bed_section = section.spec
        scheduled_policy = (self.cfg.M if channel is Channel.ONLINE else self.cfg.N) == 1
        if section.free > 0 and not section.waiting_list or not scheduled_policy:
            self._p_move(p, "queue_bed")
            self._join_bed_queue(section, p)
            return "admit" if p.state is PS.HOSPITALIZATION else "queue"
        t = self._projected_bed_time(section)
        self._p_move(p, "book_bed")
        section.bed_schedule.append(p.file_number)
        section.request_times.append(now)
        p.handles["bed_slot"] = self.cal.schedule(max(t, now), ("bed_slot_date", p.file_number))
        return "home"

    def _projected_bed_time(self, section: SectionAgent) -> float:
        """Earliest day a bed is expected free for a newly booked patient."""
        ahead = len(section.waiting_list) + len(section.bed_schedule)
        planned = sorted(self.patients[fn].planned_discharge for fn in section.occupants)
        now = self.cal.now
        if not planned:
            t = now
        else:
            lo, mode, hi = self.pp.los_days
            mean_los = (lo + mode + hi) / 3.0 * MINUTES_PER_DAY
            k = max(0, ahead - section.free)
            n = len(planned)
            t = planned[k % n] + (k // n) * mean_los
        day = day_index(max(t, now))
        call = day * MINUTES_PER_DAY + self.pp.bed_call_minute
        if call < max(t, now):
            call += MINUTES_PER_DAY
        return call

    def _on_bed_slot_date(self, fn: int) -> None:
        p = self.patients[fn]
        p.handles.pop("bed_slot", None)
        if p.state is not PS.WAIT_IN_HOME:
            return
        section = self.sections[p.bed_section]
        self._drop_booking(section, p)
        self._p_move(p, "slot_date")
        self._join_bed_queue(section, p)

    def _drop_booking(self, section: SectionAgent, p: PatientAgent) -> None:
        i = section.bed_schedule.index(p.file_number)
        del section.bed_schedule[i]
        del section.request_times[i]

    def _queue_key(self, p: PatientAgent) -> tuple:
        cls = 0 if (self.cfg.O == 1 and p.is_tourist) else 1
        return (cls, p.bed_request_time, p.file_number)

    def _join_bed_queue(self, section: SectionAgent, p: PatientAgent) -> None:
        keys = [self._queue_key(self.patients[fn]) for fn in section.waiting_list]
        i = bisect.bisect_right(keys, self._queue_key(p))
        section.waiting_list.insert(i, p.file_number)
        self.trace.bed_events.append((self.cal.now, section.spec, "join", p.file_number, p.is_tourist,
                                      p.bed_request_time))
        self._fill_beds(section)

    def _leave_bed_queue(self, section: SectionAgent, p: PatientAgent) -> None:
        section.waiting_list.remove(p.file_number)
        self.trace.bed_events.append((self.cal.now, section.spec, "leave", p.file_number, p.is_tourist,
                                      p.bed_request_time))
        self._after_bed_change(section)

    def _fill_beds(self, section: SectionAgent) -> None:
        while section.waiting_list:
            if section.free <= 0:
                if not self._try_borrow(section):
                    return
                continue
            fn = section.waiting_list.pop(0)
            self._admit(section, self.patients[fn])
        self._after_bed_change(section)

    def _try_borrow(self, section: SectionAgent) -> bool:
        if not self.hybrid:
            return False
        olds = {s.spec: s.state for s in self.sections.values()}
        rec = capacity_rebalance(section, self.sections.values(), self.bp.shortage_threshold)
        if rec is None:
            return False
        for spec in (rec.lender, rec.borrower):
            s = self.sections[spec]
            self._s_record(s, olds[spec], "lend" if spec == rec.lender else "take")
        self.trace.transfers.append((self.cal.now, rec.lender, rec.borrower, rec.beds))
        return True

    def _after_bed_change(self, section: SectionAgent) -> None:
        if not self.hybrid or section.state.value != "TakeOthers":
            return
        lender = self.sections[section.from_where]
        old_b, old_l = section.state, lender.state
        k = return_borrowed_beds(section, self.sections)
        if k:
            trig = "returned" if section.how_many == 0 else "partial_return"
            self._s_record(section, old_b, trig)
            self._s_record(lender, old_l, trig)
            self.trace.transfers.append((self.cal.now, lender.spec, section.spec, -k))
            self._fill_beds(lender)

    def _admit(self, section: SectionAgent, p: PatientAgent) -> None:
        now = self.cal.now
        self.trace.bed_events.append((now, section.spec, "admit", p.file_number, p.is_tourist,
                                      p.bed_request_time))
        self._p_move(p, "admit")
        self._service_received(p)
        section.occupants.append(p.file_number)
        lo, mode, hi = self.pp.los_days
        p.admission_time = now
        p.planned_discharge = now + sample_triangular(p.stream, lo, hi, mode) * MINUTES_PER_DAY

    def _discharge_bed(self, p: PatientAgent) -> None:
        section = self.sections[p.bed_section]
        section.occupants.remove(p.file_number)
        self._fill_beds(section)

    def _build_ward_round(self, rt: _DoctorRuntime) -> None:
        section = self.sections[rt.agent.specialization]
        doc_id = rt.agent.doc_id
        rt.ward = deque(fn for fn in section.occupants if self.patients[fn].doctor == doc_id)

    def _start_ward_service(self, rt: _DoctorRuntime, p: PatientAgent) -> None:
        self._d_move(rt, "serve")
        lo, hi = self.pp.ward_review_minutes
        self._busy_for(rt, sample_triangular(self.ward_stream, lo, hi), ("ward", p.file_number))

    def _finish_ward_service(self, rt: _DoctorRuntime, p: PatientAgent) -> None:
        self._d_move(rt, "served")
        if p.state is PS.HOSPITALIZATION and self.cal.now >= p.planned_discharge:
            self._p_move(p, "discharge")
            self._exit(p, "recovered")
            self._discharge_bed(p)

    # ---------------------------------------------------- agent timers

    def _arm_worry(self, p: PatientAgent) -> None:
        if not self.hybrid:
            return
        self._cancel(p, "worry")
        fire = p.wait_since_service + self.bp.worry_delay_minutes()
        p.handles["worry"] = self.cal.schedule(max(fire, self.cal.now), ("worry", p.file_number))

    def _on_worry(self, fn: int) -> None:
        p = self.patients[fn]
        p.handles.pop("worry", None)
        if p.state is not PS.WAIT_FOR_VISIT:
            return
        p.worry_counter = int((self.cal.now - p.wait_since_service) // self.bp.worry_increment_minutes)
        self._release_booking(p, abandoned=True)
        self._p_move(p, "worry")
        p.request_time = self.cal.now
        # re-enter with whichever doctor and channel offers the earliest visit
        rt = choose_doctor(p.stream, self.by_specialty[p.disease])
        p.channel = min(
            (Channel.ONLINE, Channel.IN_PERSON),
            key=lambda ch: self._find_slot_peek(rt.agent, ch),
        )
        self._refer(p, rt)

    def _find_slot_peek(self, doctor: DoctorAgent, channel: Channel) -> float:
        taken = self.slots[doctor.doc_id][channel]
        day = max(day_index(self.cal.now), self.first_open[doctor.doc_id][channel])
        activity = Activity.CLINIC if channel is Channel.IN_PERSON else Activity.ONLINE
        n_slots = doctor.clinic_slots if channel is Channel.IN_PERSON else doctor.video_slots
        t, _, _ = find_free_slot(doctor.weekly_schedule, activity, n_slots,
                                 self.cfg.P if channel is Channel.IN_PERSON else None,
                                 self.cal.now, day, taken)
        return t

    def _on_review3(self, fn: int) -> None:
        p = self.patients[fn]
        if not p.active:
            return
        p.handles["review3"] = self.cal.schedule_in(self.bp.review_period_days * MINUTES_PER_DAY,
                                                    ("review3", fn))
        if p.leave_flag:
            if p.state is PS.HOSPITALIZATION:
                self._p_move(p, "self_discharge")
                self._exit(p, "dropout")
                self._discharge_bed(p)
                return
            if p.state in LEAVE_STATES:
                self._leave_system(p)
                return
        if p.state in ADHERENCE_STATES:
            drug_behavior_step(self.adherence_stream(p), p, self.adherence)
            self.trace.adherence_steps += 1
            if p.emergency_flag:
                self._escalate(p)
                return
        if p.state is PS.WAIT_FOR_VISIT and self.bp.doctor_change_enabled:
            self._maybe_change_doctor(p)

    def adherence_stream(self, p: PatientAgent) -> RngStream:
        s = p.handles.get("adherence_stream")
        if s is None:
            s = p.handles["adherence_stream"] = RngStream(self.seed, self.rep, "adherence", p.file_number)
        return s

    def _on_leave5(self, fn: int) -> None:
        p = self.patients[fn]
        if not p.active:
            return
        p.handles["leave5"] = self.cal.schedule_in(self.bp.leave_period_days * MINUTES_PER_DAY, ("leave5", fn))
        if p.state in WAITING_STATES and \
                self.cal.now - p.wait_since_service > self.bp.leave_wait_days * MINUTES_PER_DAY:
            p.leave_flag = True

    def _leave_system(self, p: PatientAgent) -> None:
        state = p.state
        if state is PS.NEED_SERVICE and p.doctor is not None:
            rt = self.doctors[p.doctor]
            if p.file_number in rt.review_queue:
                rt.review_queue.remove(p.file_number)
        elif state is PS.NEED_SERVICE and p.file_number in self.gp_queue:
            self.gp_queue.remove(p.file_number)
        elif state is PS.CONFIRMATION:
            self._cancel(p, "confirm")
        elif state is PS.WAIT_FOR_VISIT:
            self._release_booking(p, abandoned=True)
        elif state is PS.WAIT_IN_HOME:
            self._cancel(p, "bed_slot")
            self._drop_booking(self.sections[p.bed_section], p)
        section = self.sections[p.bed_section] if state is PS.WAIT_FOR_EMPTY_BED else None
        self._p_move(p, "leave")
        self._exit(p, "dropout")
        if section is not None:
            self._leave_bed_queue(section, p)

    def _escalate(self, p: PatientAgent) -> None:
        state = p.state
        now = self.cal.now
        if state is PS.NEED_SERVICE:
            if p.file_number in self.gp_queue:
                self.gp_queue.remove(p.file_number)
            elif p.doctor is not None and p.file_number in self.doctors[p.doctor].review_queue:
                self.doctors[p.doctor].review_queue.remove(p.file_number)
        elif state is PS.CONFIRMATION:
            self._cancel(p, "confirm")
        elif state is PS.WAIT_FOR_VISIT:
            self._release_booking(p, abandoned=False)
        elif state is PS.WAIT_IN_HOME:
            self._cancel(p, "bed_slot")
            self._drop_booking(self.sections[p.bed_section], p)
        elif state is PS.HOME:
            self._cancel(p, "home")
        self.trace.escalations.append((now, p.file_number, state.value))
        if state is PS.NEED_SERVICE and p.file_number in self.queue_entry:
            self._close_queue(p, now)
        self._p_move(p, "emergency")
        p.emergency_flag = False
        p.handles["emergency_visit"] = True
        p.channel = Channel.ONLINE
        if p.doctor is None:
            rt = choose_doctor(p.stream, self.by_specialty[p.disease])
            p.doctor = rt.agent.doc_id
        rt = self.doctors[p.doctor]
        rt.emergency_queue.append(p.file_number)
        self._doctor_poke(rt)

    def _maybe_change_doctor(self, p: PatientAgent) -> None:
        peers = self.by_specialty[p.disease]
        if len(peers) < 2:
            return
        cur = self.doctors[p.doctor]
        best = min(peers, key=lambda rt: (rt.agent.load, -rt.agent.popularity, rt.agent.doc_id))
        if best is cur:
            return
        if not p.stream.bernoulli(doctor_change_probability(cur.agent, best.agent)):
            return
        t_new = self._find_slot_peek(best.agent, p.channel)
        if t_new >= p.appointment_time:
            return
        self._release_booking(p, abandoned=True)
        self._p_move(p, "change_doctor")
        p.doctor = best.agent.doc_id
        self._book(p)

    # ------------------------------------------------------------ checks

    def _check_invariants(self) -> None:
        total = 0
        for s in self.sections.values():
            if s.occupied > s.total_beds:
                raise ContractViolation(f"section {s.spec} holds {s.occupied} patients in {s.total_beds} beds")
            if (s.how_many > 0) != (s.state.value != "NormalCapacity"):
                raise ContractViolation(f"section {s.spec}: how_many={s.how_many} in state {s.state.value}")
            if s.spec == 1 and s.state.value != "NormalCapacity":
                raise ContractViolation("cardiology took part in bed sharing")
            total += s.total_beds
        if total != self.total_baseline_beds:
            raise ContractViolation(f"bed total {total} differs from baseline {self.total_baseline_beds}")
        for rt in self.doctors:
            d = rt.agent
            if len(d.patient_list) != len(d.visit_mode_flags):
                raise ContractViolation(f"doctor {d.doc_id}: patient list and flags misaligned")


# ---------------------------------------------------------------------------
# free functions exposed for direct testing


def spawn_patient(stream: RngStream, config: ScenarioConfig, file_number: int, now: float = 0.0) -> PatientAgent:
    """Sample a new patient's attributes from its own stream."""
    pp = config.process
    tourist = stream.random() < config.tourist_probability
    disease = 1 + stream.integers(0, N_SPECIALTIES)
    lo, hi = pp.child_age if disease == 4 else pp.adult_age
    age = int(lo) + stream.integers(0, int(hi) - int(lo) + 1)
    gender = Gender.F if stream.random() < pp.female_share else Gender.M
    trait = (Trait.RELAXED, Trait.NORMAL, Trait.ANXIOUS)[stream.choice_index(pp.trait_mix)]
    online_pref = stream.random() < pp.online_pref_true
    hosp_pref = stream.random() < pp.hosp_pref_true
    health = HEALTH_ORDER[stream.choice_index(pp.initial_health)]
    return PatientAgent(
        file_number=file_number,
        disease=disease,
        patient_type=PatientType.TOURIST if tourist else PatientType.LOCAL,
        online_pref=online_pref,
        hosp_pref=hosp_pref,
        age=age,
        gender=gender,
        trait=trait,
        arrival_time=now,
        health_status=health,
        stream=stream,
        state_since=now,
    )


def online_probability(patient: PatientAgent, config: ScenarioConfig) -> float:
    base = (config.K if patient.is_tourist else config.L) / 100.0
    shift = config.process.online_pref_shift
    if patient.online_pref is True:
        base += shift
    elif patient.online_pref is False:
        base -= shift
    return min(1.0, max(0.0, base))


def choose_doctor(stream: RngStream, doctors):
    """Pick a doctor with weight popularity / (1 + pending load)."""
    if not doctors:
        raise ValueError("no doctor available for this specialty")
    if len(doctors) == 1:
        return doctors[0]
    agents = [getattr(d, "agent", d) for d in doctors]
    weights = [a.popularity / (1.0 + a.load) for a in agents]
    return doctors[stream.choice_index(weights)]


def choose_channel_and_doctor(stream: RngStream, patient: PatientAgent, config: ScenarioConfig, doctors):
    channel = Channel.ONLINE if stream.random() < online_probability(patient, config) else Channel.IN_PERSON
    return channel, choose_doctor(stream, doctors)


def find_free_slot(schedule, activity: Activity, n_slots: int, interval: float | None, now: float,
                   start_day: int, taken) -> tuple[float, tuple, int]:
    """Earliest untaken slot at or after ``now``.

    Slots sit at block start + k * interval for k < n_slots; for online
    blocks (``interval`` None) they divide the block evenly.  Returns the
    slot time, its key and the day it falls on.
    """
    day = start_day
    while True:
        for b in blocks_on_day(schedule, day):
            if b.activity is not activity:
                continue
            step = interval if interval is not None else b.length / n_slots
            base = day * MINUTES_PER_DAY + b.start_minute
            for k in range(n_slots):
                t = base + k * step
                if t < now:
                    continue
                key = (day, b.start_minute, k)
                if key not in taken:
                    return t, key, day
        day += 1


def book_appointment(doctor: DoctorAgent, channel: Channel, slot_minutes: float, now: float,
                     taken: dict | None = None, patient_id: int | None = None) -> float:
    """Book the earliest free slot for ``doctor`` and record the patient."""
    taken = {} if taken is None else taken
    activity = Activity.CLINIC if channel is Channel.IN_PERSON else Activity.ONLINE
    n_slots = doctor.clinic_slots if channel is Channel.IN_PERSON else doctor.video_slots
    t, key, _ = find_free_slot(doctor.weekly_schedule, activity, n_slots,
                               slot_minutes if channel is Channel.IN_PERSON else None,
                               now, day_index(now), taken)
    taken[key] = patient_id
    if patient_id is not None:
        doctor.add_patient(patient_id, channel)
    return t


def run_replication(config: ScenarioConfig, replication: int = 0, record_transitions: bool = False,
                    check_invariants: bool = False):
    """Run one replication; returns (ResponseVector, ReplicationTrace)."""
    from medtour.metrics import compute_responses

    model = HospitalModel(config, replication, record_transitions=record_transitions,
                          check_invariants=check_invariants)
    trace = model.run()
    return compute_responses(trace), trace
