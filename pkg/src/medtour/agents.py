"""Patient, doctor and hospital-section agents.

Each agent is a plain record mutated by the event loop of one replication.
The state-charts are kept as explicit edge tables so that any replication
trace can be checked edge by edge after the fact.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

import numpy as np

from medtour.casedata import CARDIOLOGY, SERVICE
from medtour.simcore import RngStream, WeeklyBlock, sample_triangular


class ContractViolation(RuntimeError):
    """A transition or call that the state-charts do not allow."""


class PatientType(str, enum.Enum):
    LOCAL = "Local"
    TOURIST = "Tourist"


class Gender(str, enum.Enum):
    F = "F"
    M = "M"


class Trait(str, enum.Enum):
    RELAXED = "Relaxed"
    NORMAL = "Normal"
    ANXIOUS = "Anxious"


class Adherence(str, enum.Enum):
    GOOD = "Good"
    PARTIAL = "Partial"
    POOR = "Poor"


class Health(str, enum.Enum):
    STABLE = "Stable"
    WORSENING = "Worsening"
    CRITICAL = "Critical"


class Channel(str, enum.Enum):
    ONLINE = "Online"
    IN_PERSON = "InPerson"


class Phase(str, enum.Enum):
    INITIAL = "Initial"
    REVISIT = "Revisit"
    FILE_REVIEW = "FileReview"


class Outcome(str, enum.Enum):
    COMPLETED = "Completed"
    CONTESTED = "Contested"
    ABANDONED = "Abandoned"


class Recommendation(str, enum.Enum):
    DISCHARGE = "Discharge"
    HOME = "Home"
    HOSPITALIZE = "Hospitalize"


ADHERENCE_ORDER = (Adherence.GOOD, Adherence.PARTIAL, Adherence.POOR)
HEALTH_ORDER = (Health.STABLE, Health.WORSENING, Health.CRITICAL)


# ---------------------------------------------------------------------------
# state-charts


class PS(str, enum.Enum):
    """Patient treatment states, with the visit substates flattened."""

    NEED_SERVICE = "needService"
    CONFIRMATION = "Confirmation"
    WAIT_FOR_VISIT = "WaitForVisit"
    WAIT_IN_CQUEUE = "Clinic.WaitInCQueue"
    BEING_CHECKUP = "Clinic.BeingCheckup"
    AGREE_OR_DISAGREE = "Clinic.AgreeOrDisagree"
    WAIT_IN_VQUEUE = "VideoConference.WaitInVQueue"
    ANSWERING_QUESTIONS = "VideoConference.AnsweringQuestions"
    ACCEPT_OR_NOT = "VideoConference.AcceptOrNot"
    WAIT_FOR_EMPTY_BED = "WaitForEmptyBed"
    WAIT_IN_HOME = "WaitInHome"
    HOSPITALIZATION = "Hospitalization"
    EMERGENCY = "emergency"
    HOME = "Home"
    RECOVERED = "Recovered"
    DROPOUT = "Dropout"


TERMINAL_STATES = frozenset({PS.RECOVERED, PS.DROPOUT})
# states in which the patient is waiting at home for something to happen
HOME_WAITING_STATES = frozenset({PS.NEED_SERVICE, PS.CONFIRMATION, PS.WAIT_FOR_VISIT, PS.WAIT_IN_HOME})
# states in which medication behaviour evolves (outside hospital)
ADHERENCE_STATES = HOME_WAITING_STATES | {PS.HOME}
# physical queues at the hospital
QUEUE_STATES = frozenset({PS.WAIT_IN_CQUEUE, PS.WAIT_IN_VQUEUE, PS.WAIT_FOR_EMPTY_BED, PS.EMERGENCY})
# states that count toward the patient's perceived wait since last service
WAITING_STATES = HOME_WAITING_STATES | QUEUE_STATES
LEAVE_STATES = frozenset(
    {PS.NEED_SERVICE, PS.CONFIRMATION, PS.WAIT_FOR_VISIT, PS.WAIT_IN_HOME, PS.WAIT_FOR_EMPTY_BED}
)


def _patient_chart() -> dict[tuple[PS, str], PS]:
    chart = {
        (PS.NEED_SERVICE, "file_reviewed"): PS.CONFIRMATION,
        (PS.CONFIRMATION, "confirm"): PS.WAIT_FOR_VISIT,
        (PS.CONFIRMATION, "disagree"): PS.WAIT_FOR_VISIT,
        (PS.WAIT_FOR_VISIT, "appointment_clinic"): PS.WAIT_IN_CQUEUE,
        (PS.WAIT_FOR_VISIT, "appointment_online"): PS.WAIT_IN_VQUEUE,
        (PS.WAIT_FOR_VISIT, "change_doctor"): PS.WAIT_FOR_VISIT,
        (PS.WAIT_FOR_VISIT, "worry"): PS.NEED_SERVICE,
        (PS.WAIT_IN_CQUEUE, "called"): PS.BEING_CHECKUP,
        (PS.BEING_CHECKUP, "recommend"): PS.AGREE_OR_DISAGREE,
        (PS.AGREE_OR_DISAGREE, "disagree"): PS.BEING_CHECKUP,
        (PS.WAIT_IN_VQUEUE, "called"): PS.ANSWERING_QUESTIONS,
        (PS.ANSWERING_QUESTIONS, "recommend"): PS.ACCEPT_OR_NOT,
        (PS.ACCEPT_OR_NOT, "disagree"): PS.ANSWERING_QUESTIONS,
        (PS.EMERGENCY, "called"): PS.ANSWERING_QUESTIONS,
        (PS.WAIT_IN_HOME, "slot_date"): PS.WAIT_FOR_EMPTY_BED,
        (PS.WAIT_FOR_EMPTY_BED, "admit"): PS.HOSPITALIZATION,
        (PS.HOSPITALIZATION, "discharge"): PS.RECOVERED,
        (PS.HOSPITALIZATION, "self_discharge"): PS.DROPOUT,
        (PS.HOME, "request_again"): PS.NEED_SERVICE,
    }
    for decided in (PS.AGREE_OR_DISAGREE, PS.ACCEPT_OR_NOT):
        chart[(decided, "discharge")] = PS.RECOVERED
        chart[(decided, "home")] = PS.HOME
        chart[(decided, "queue_bed")] = PS.WAIT_FOR_EMPTY_BED
        chart[(decided, "book_bed")] = PS.WAIT_IN_HOME
    for s in (PS.NEED_SERVICE, PS.CONFIRMATION, PS.WAIT_FOR_VISIT, PS.WAIT_IN_HOME, PS.HOME):
        chart[(s, "emergency")] = PS.EMERGENCY
    for s in LEAVE_STATES:
        chart[(s, "leave")] = PS.DROPOUT
    return chart


PATIENT_CHART = _patient_chart()

# timers implied by entering a state; delays are filled in by the model
PATIENT_EMITS = {
    PS.CONFIRMATION: ("confirmation_window",),
    PS.EMERGENCY: ("emergency_visit_request",),
    PS.HOME: ("home_course_end",),
    PS.WAIT_IN_HOME: ("bed_slot_date",),
}


class DS(str, enum.Enum):
    HOME = "Home"
    CHECKING = "Checking"
    CLINIC = "Clinic"
    HOSPITAL = "Hospital"
    CHECKUP = "InPersonVisit.Checkup"
    MAKE_DECISION = "InPersonVisit.MakeDecision"
    RECHECK = "InPersonVisit.ReCheck"
    ASK_QUESTIONS = "OnlineVisit.AskQuestions"
    MAKE_DECISION_ONLINE = "OnlineVisit.MakeDecisionOnline"
    EVALUATION = "OnlineVisit.Evaluation"
    SERVICE = "Service"


DOCTOR_CHART: dict[tuple[DS, str], DS] = {
    (DS.HOME, "goto_clinic"): DS.CLINIC,
    (DS.HOME, "goto_hospital"): DS.HOSPITAL,
    (DS.HOME, "check"): DS.CHECKING,
    (DS.CHECKING, "finish"): DS.HOME,
    (DS.CHECKING, "start_online"): DS.ASK_QUESTIONS,
    (DS.ASK_QUESTIONS, "decide"): DS.MAKE_DECISION_ONLINE,
    (DS.MAKE_DECISION_ONLINE, "contested"): DS.EVALUATION,
    (DS.EVALUATION, "decide"): DS.MAKE_DECISION_ONLINE,
    (DS.MAKE_DECISION_ONLINE, "visit_end"): DS.CHECKING,
    (DS.CLINIC, "start_visit"): DS.CHECKUP,
    (DS.CHECKUP, "decide"): DS.MAKE_DECISION,
    (DS.MAKE_DECISION, "contested"): DS.RECHECK,
    (DS.RECHECK, "decide"): DS.MAKE_DECISION,
    (DS.MAKE_DECISION, "visit_end"): DS.CLINIC,
    (DS.CLINIC, "goto_hospital"): DS.HOSPITAL,
    (DS.CLINIC, "leave"): DS.HOME,
    (DS.HOSPITAL, "serve"): DS.SERVICE,
    (DS.SERVICE, "served"): DS.HOSPITAL,
    (DS.HOSPITAL, "leave"): DS.HOME,
}

DOCTOR_VISIT_STATES = frozenset(
    {DS.CHECKUP, DS.MAKE_DECISION, DS.RECHECK, DS.ASK_QUESTIONS, DS.MAKE_DECISION_ONLINE, DS.EVALUATION}
)


class SS(str, enum.Enum):
    NORMAL = "NormalCapacity"
    BORROW = "Borrow"
    TAKE_OTHERS = "TakeOthers"


SECTION_CHART: dict[tuple[SS, str], SS] = {
    (SS.NORMAL, "lend"): SS.BORROW,
    (SS.NORMAL, "take"): SS.TAKE_OTHERS,
    (SS.BORROW, "returned"): SS.NORMAL,
    (SS.TAKE_OTHERS, "returned"): SS.NORMAL,
    (SS.BORROW, "partial_return"): SS.BORROW,
    (SS.TAKE_OTHERS, "partial_return"): SS.TAKE_OTHERS,
}

CHARTS = {"patient": PATIENT_CHART, "doctor": DOCTOR_CHART, "section": SECTION_CHART}


# ---------------------------------------------------------------------------
# behaviour constants


@dataclass
class BehaviourParams:
    """Behavioural constants of the agent layer (all overridable)."""

    anxious_factor: float = 1.25
    disagree_if_mismatch: float = 0.5
    disagree_if_match: float = 0.05
    confirmation_window_minutes: float = 60.0
    worry_threshold: int = 100
    worry_increment_minutes: float = 60.0
    popularity_completed: float = 1.02
    popularity_contested: float = 0.99
    popularity_abandoned: float = 0.95
    popularity_floor: float = 0.1
    popularity_ceiling: float = 10.0
    shortage_threshold: int = 3
    leave_wait_days: float = 7.0
    review_period_days: float = 3.0
    leave_period_days: float = 5.0
    doctor_change_enabled: bool = True
    leave_timer_enabled: bool = True

    def worry_delay_minutes(self, counter: int = 0) -> float:
        """Minutes until the counter first exceeds the threshold."""
        return (self.worry_threshold + 1 - counter) * self.worry_increment_minutes


# ---------------------------------------------------------------------------
# agent records


@dataclass(eq=False)
class PatientAgent:
    file_number: int
    disease: int
    patient_type: PatientType
    online_pref: bool | None
    hosp_pref: bool
    age: int
    gender: Gender
    trait: Trait
    arrival_time: float = 0.0
    worry_counter: int = 0
    adherence_state: Adherence = Adherence.GOOD
    health_status: Health = Health.STABLE
    med_available: bool = True
    leave_flag: bool = False
    emergency_flag: bool = False
    state: PS = PS.NEED_SERVICE
    stream: RngStream | None = None
    # bookkeeping maintained by the model
    doctor: int | None = None
    channel: Channel | None = None
    phase: Phase = Phase.INITIAL
    request_time: float = 0.0
    appointment_time: float | None = None
    state_since: float = 0.0
    wait_since_service: float = 0.0
    bed_request_time: float | None = None
    section: int | None = None
    bed_section: int | None = None
    admission_time: float | None = None
    planned_discharge: float | None = None
    recheck_done: bool = False
    handles: dict = field(default_factory=dict)

    @property
    def is_tourist(self) -> bool:
        return self.patient_type is PatientType.TOURIST

    @property
    def active(self) -> bool:
        return self.state not in TERMINAL_STATES


@dataclass(eq=False)
class DoctorAgent:
    doc_id: int
    specialization: int
    clinic_slots: int
    video_slots: int
    weekly_schedule: tuple[WeeklyBlock, ...]
    patient_list: list[int] = field(default_factory=list)
    visit_mode_flags: list[int] = field(default_factory=list)
    popularity: float = 1.0
    state: DS = DS.HOME
    worked_minutes: float = 0.0
    scheduled_minutes: float = 0.0

    def add_patient(self, file_number: int, channel: Channel) -> None:
        self.patient_list.append(file_number)
        self.visit_mode_flags.append(1 if channel is Channel.IN_PERSON else 0)

    def remove_patient(self, file_number: int) -> None:
        i = self.patient_list.index(file_number)
        del self.patient_list[i]
        del self.visit_mode_flags[i]

    @property
    def load(self) -> int:
        return len(self.patient_list)


@dataclass(eq=False)
class SectionAgent:
    spec: int
    beds: int
    total_beds: int = -1
    occupants: list[int] = field(default_factory=list)
    bed_schedule: list[int] = field(default_factory=list)
    request_times: list[float] = field(default_factory=list)
    waiting_list: list[int] = field(default_factory=list)
    need_capacity: bool = False
    have_capacity: bool = False
    can_borrow: bool = False
    borrow_to: bool = False
    from_where: int | None = None
    how_many: int = 0
    state: SS = SS.NORMAL

    def __post_init__(self):
        if self.beds < 0:
            raise ValueError("bed count must be non-negative")
        if self.total_beds < 0:
            self.total_beds = self.beds

    @property
    def occupied(self) -> int:
        return len(self.occupants)

    @property
    def free(self) -> int:
        return self.total_beds - len(self.occupants)

    @property
    def shares_beds(self) -> bool:
        return self.spec != CARDIOLOGY

    def refresh_flags(self, shortage_threshold: int) -> None:
        self.need_capacity = len(self.waiting_list) >= shortage_threshold and self.free <= 0
        self.have_capacity = self.free > self.total_beds / 2


# ---------------------------------------------------------------------------
# state transitions


def patient_transition(patient: PatientAgent, trigger: str, now: float) -> tuple[PS, tuple[str, ...]]:
    """Move ``patient`` along the chart edge labelled ``trigger``.

    Returns the new state and the timer names implied by entering it.
    """
    new = PATIENT_CHART.get((patient.state, trigger))
    if new is None:
        raise ContractViolation(
            f"patient {patient.file_number}: no edge {patient.state.value} --{trigger}-->"
            f" at t={now:.3f}"
        )
    patient.state = new
    patient.state_since = now
    return new, PATIENT_EMITS.get(new, ())


def doctor_transition(doctor: DoctorAgent, trigger: str, now: float) -> DS:
    new = DOCTOR_CHART.get((doctor.state, trigger))
    if new is None:
        raise ContractViolation(
            f"doctor {doctor.doc_id}: no edge {doctor.state.value} --{trigger}--> at t={now:.3f}"
        )
    doctor.state = new
    return new


def section_transition(section: SectionAgent, trigger: str) -> SS:
    new = SECTION_CHART.get((section.state, trigger))
    if new is None:
        raise ContractViolation(f"section {section.spec}: no edge {section.state.value} --{trigger}-->")
    section.state = new
    return new


def validate_transitions(entries: Iterable[tuple]) -> int:
    """Check (kind, from, to, trigger) tuples against the charts.

    Returns the number of transitions checked; raises ContractViolation on
    the first edge that is not in the relevant chart.
    """
    n = 0
    for kind, src, dst, trigger in entries:
        chart = CHARTS[kind]
        enum_cls = {"patient": PS, "doctor": DS, "section": SS}[kind]
        got = chart.get((enum_cls(src), trigger))
        if got is None or got.value != dst:
            raise ContractViolation(f"{kind} transition {src} --{trigger}--> {dst} is not in the chart")
        n += 1
    return n


# ---------------------------------------------------------------------------
# behaviour functions


def consultation_duration(
    stream: RngStream,
    doctor: DoctorAgent,
    patient: PatientAgent,
    channel: Channel,
    phase: Phase,
    behaviour: BehaviourParams | None = None,
    behavioural: bool = True,
) -> float:
    """Service minutes for one consultation pass.

    Initial visits are scaled by the patient's trait; re-visits and file
    reviews are specialty-conditioned only.  With ``behavioural`` off the
    base distribution is returned unscaled.
    """
    if doctor.specialization != patient.disease:
        raise ContractViolation(
            f"doctor specialty {doctor.specialization} cannot see disease {patient.disease}"
        )
    profile = SERVICE[doctor.specialization]
    if phase is Phase.FILE_REVIEW:
        low, high = profile.file_review
    elif channel is Channel.ONLINE:
        low, high = profile.online
    else:
        low, high = profile.in_person
    base = sample_triangular(stream, low, high)
    if behavioural and phase is Phase.INITIAL and patient.trait is Trait.ANXIOUS:
        factor = (behaviour or BehaviourParams()).anxious_factor
        return base * factor
    return base


def disagreement_probability(patient: PatientAgent, behaviour: BehaviourParams,
                             recommendation: Recommendation | None = None,
                             channel: Channel | None = None) -> float:
    """Chance the patient contests a proposed channel or a recommendation.

    A preference that contradicts the proposal raises the chance from the
    baseline to the mismatch level.
    """
    if channel is not None:
        mismatch = patient.online_pref is not None and patient.online_pref != (channel is Channel.ONLINE)
    elif recommendation is not None:
        mismatch = (recommendation is Recommendation.HOSPITALIZE) != patient.hosp_pref
    else:
        raise ValueError("need a channel or a recommendation")
    return behaviour.disagree_if_mismatch if mismatch else behaviour.disagree_if_match


def update_popularity(popularity: float, outcome: Outcome, behaviour: BehaviourParams | None = None) -> float:
    b = behaviour or BehaviourParams()
    factor = {
        Outcome.COMPLETED: b.popularity_completed,
        Outcome.CONTESTED: b.popularity_contested,
        Outcome.ABANDONED: b.popularity_abandoned,
    }[outcome]
    return min(b.popularity_ceiling, max(b.popularity_floor, popularity * factor))


def doctor_change_probability(current: DoctorAgent, best: DoctorAgent) -> float:
    """Switch chance toward ``best``: its relative attractiveness gap.

    Attractiveness is popularity / (1 + load), the same weight used when
    a doctor is first chosen.
    """
    w_cur = current.popularity / (1 + current.load)
    w_best = best.popularity / (1 + best.load)
    if w_best <= w_cur:
        return 0.0
    return (w_best - w_cur) / w_best


# ---------------------------------------------------------------------------
# medication adherence


AGE_BANDS = (("young", 0, 40), ("middle", 40, 65), ("senior", 65, 200))


def age_band(age: int) -> str:
    for name, lo, hi in AGE_BANDS:
        if lo <= age < hi:
            return name
    raise ValueError(f"age {age} outside supported bands")


class AdherenceConfigError(ValueError):
    pass


def _check_rows(name: str, matrix: np.ndarray) -> None:
    if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-12):
        raise AdherenceConfigError(f"{name}: rows must be probability vectors")


@dataclass
class AdherenceParams:
    """Expanded transition tables for medication behaviour.

    ``risk`` maps (age band, gender, trait, health, medication available)
    to a 3x3 adherence matrix over (Good, Partial, Poor); ``health`` maps
    the new adherence level to a 3x3 matrix over (Stable, Worsening,
    Critical); ``availability`` is the 2x2 matrix over (available,
    unavailable).
    """

    risk: dict[tuple[str, str, str, str, bool], np.ndarray]
    health: dict[str, np.ndarray]
    availability: np.ndarray

    def __post_init__(self):
        for key, m in self.risk.items():
            _check_rows(f"risk{key}", m)
        for key, m in self.health.items():
            _check_rows(f"health[{key}]", m)
        _check_rows("availability", self.availability)

    @classmethod
    def from_spec(cls, spec: dict) -> "AdherenceParams":
        """Expand the compact base-plus-tilt description into full tables.

        A tilt t moves a fraction t of each row's mass onto Poor, so every
        expanded row stays a probability vector.
        """
        try:
            base = {h: np.asarray(spec["base_adherence"][h], dtype=float) for h in (x.value for x in HEALTH_ORDER)}
            tilt = spec["poor_tilt"]
            health = {a: np.asarray(spec["health"][a], dtype=float) for a in (x.value for x in ADHERENCE_ORDER)}
            availability = np.asarray(spec["availability"], dtype=float)
        except KeyError as exc:
            raise AdherenceConfigError(f"missing adherence table entry {exc}") from None
        for h, m in base.items():
            _check_rows(f"base_adherence[{h}]", m)
        poor = np.array([0.0, 0.0, 1.0])
        risk = {}
        for band, _, _ in AGE_BANDS:
            for g in Gender:
                for tr in Trait:
                    for h in HEALTH_ORDER:
                        for avail in (True, False):
                            t = tilt["age"][band] + tilt["gender"][g.value] + tilt["trait"][tr.value]
                            if not avail:
                                t += tilt["unavailable"]
                            if not 0.0 <= t < 1.0:
                                raise AdherenceConfigError(f"tilt {t} out of [0, 1) for {band}/{g}/{tr}")
                            m = (1.0 - t) * base[h.value] + t * poor
                            m = m / m.sum(axis=1, keepdims=True)
                            risk[(band, g.value, tr.value, h.value, avail)] = m
        return cls(risk=risk, health=health, availability=availability)

    @classmethod
    def default(cls) -> "AdherenceParams":
        text = resources.files("medtour.data").joinpath("adherence_default.json").read_text()
        return cls.from_spec(json.loads(text))

    @classmethod
    def load(cls, path: str) -> "AdherenceParams":
        with open(path) as fh:
            return cls.from_spec(json.load(fh))

    def risk_matrix(self, patient: PatientAgent, health: Health, available: bool) -> np.ndarray:
        return self.risk[(age_band(patient.age), patient.gender.value, patient.trait.value, health.value, available)]


def _draw(stream: RngStream, row) -> int:
    u = stream.random()
    acc = 0.0
    for i, p in enumerate(row):
        acc += p
        if u < acc:
            return i
    return len(row) - 1


def drug_behavior_step(stream: RngStream, patient: PatientAgent, params: AdherenceParams) -> tuple[Adherence, Health]:
    """One Markov step of medication availability, adherence and health.

    Sets ``patient.emergency_flag`` when adherence is Poor and health has
    deteriorated to Worsening or Critical.
    """
    if patient.state not in ADHERENCE_STATES:
        raise ContractViolation(f"adherence cannot evolve in state {patient.state.value}")
    avail_row = params.availability[0 if patient.med_available else 1]
    patient.med_available = _draw(stream, avail_row) == 0
    row = params.risk_matrix(patient, patient.health_status, patient.med_available)[
        ADHERENCE_ORDER.index(patient.adherence_state)
    ]
    patient.adherence_state = ADHERENCE_ORDER[_draw(stream, row)]
    hrow = params.health[patient.adherence_state.value][HEALTH_ORDER.index(patient.health_status)]
    patient.health_status = HEALTH_ORDER[_draw(stream, hrow)]
    if patient.adherence_state is Adherence.POOR and patient.health_status is not Health.STABLE:
        patient.emergency_flag = True
    return patient.adherence_state, patient.health_status


def joint_transition_matrix(params: AdherenceParams, patient: PatientAgent) -> tuple[np.ndarray, list]:
    """Transition matrix of the (availability, adherence, health) chain.

    Used as an analytic reference for the long-run behaviour of
    :func:`drug_behavior_step` at fixed demographics.
    """
    states = [(a, ad, h) for a in (True, False) for ad in ADHERENCE_ORDER for h in HEALTH_ORDER]
    index = {s: i for i, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for (a, ad, h), i in index.items():
        for a2_i, pa in enumerate(params.availability[0 if a else 1]):
            a2 = a2_i == 0
            risk = params.risk_matrix(patient, h, a2)[ADHERENCE_ORDER.index(ad)]
            for ad2_i, pad in enumerate(risk):
                ad2 = ADHERENCE_ORDER[ad2_i]
                hrow = params.health[ad2.value][HEALTH_ORDER.index(h)]
                for h2_i, ph in enumerate(hrow):
                    P[i, index[(a2, ad2, HEALTH_ORDER[h2_i])]] += pa * pad * ph
    return P, states


# ---------------------------------------------------------------------------
# bed sharing


@dataclass(frozen=True)
class TransferRecord:
    lender: int
    borrower: int
    beds: int


def capacity_rebalance(requesting: SectionAgent, sections: Iterable[SectionAgent],
                       shortage_threshold: int = 3) -> TransferRecord | None:
    """Borrow half of the free beds of the most-free compatible section.

    Cardiology never takes part.  A section already lending or borrowing
    does not enter a second transfer.
    """
    sections = list(sections)
    for s in sections:
        s.refresh_flags(shortage_threshold)
    if not requesting.shares_beds or requesting.state is not SS.NORMAL or not requesting.need_capacity:
        return None
    lenders = [
        s for s in sections
        if s is not requesting and s.shares_beds and s.state is SS.NORMAL and s.have_capacity
    ]
    if not lenders:
        return None
    lender = max(lenders, key=lambda s: (s.free, -s.spec))
    k = lender.free // 2
    if k <= 0:
        return None
    lender.total_beds -= k
    requesting.total_beds += k
    lender.how_many = requesting.how_many = k
    lender.from_where, requesting.from_where = requesting.spec, lender.spec
    lender.borrow_to, requesting.can_borrow = True, True
    section_transition(lender, "lend")
    section_transition(requesting, "take")
    for s in (lender, requesting):
        s.refresh_flags(shortage_threshold)
    return TransferRecord(lender=lender.spec, borrower=requesting.spec, beds=k)


def return_borrowed_beds(borrower: SectionAgent, sections_by_spec: dict[int, SectionAgent]) -> int:
    """Give back free borrowed beds once the borrower's queue has cleared.

    Occupied borrowed beds come back as their patients leave.  Returns
    the number of beds handed back.
    """
    if borrower.state is not SS.TAKE_OTHERS or borrower.waiting_list:
        return 0
    k = min(borrower.how_many, borrower.free)
    if k <= 0:
        return 0
    lender = sections_by_spec[borrower.from_where]
    borrower.total_beds -= k
    lender.total_beds += k
    borrower.how_many -= k
    lender.how_many -= k
    if borrower.how_many == 0:
        for s in (borrower, lender):
            section_transition(s, "returned")
            s.from_where = None
            s.can_borrow = s.borrow_to = False
    else:
        section_transition(borrower, "partial_return")
        section_transition(lender, "partial_return")
    return k
