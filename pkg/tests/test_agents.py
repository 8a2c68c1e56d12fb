import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from medtour.agents import (
    ADHERENCE_ORDER,
    PS,
    Adherence,
    AdherenceConfigError,
    AdherenceParams,
    BehaviourParams,
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
    SS,
    SectionAgent,
    Trait,
    capacity_rebalance,
    consultation_duration,
    disagreement_probability,
    doctor_change_probability,
    doctor_transition,
    drug_behavior_step,
    joint_transition_matrix,
    patient_transition,
    return_borrowed_beds,
    update_popularity,
    validate_transitions,
)
from medtour.casedata import WEEKLY_SCHEDULES
from medtour.simcore import RngStream


def patient(disease=1, trait=Trait.NORMAL, state=PS.NEED_SERVICE, age=30, **kw):
    return PatientAgent(file_number=1, disease=disease, patient_type=PatientType.LOCAL, online_pref=None,
                        hosp_pref=False, age=age, gender=Gender.F, trait=trait, state=state, **kw)


def doctor(spec=1, doc_id=0, popularity=1.0):
    return DoctorAgent(doc_id, spec, 5, 5, WEEKLY_SCHEDULES[spec], popularity=popularity)


class TestConsultation:
    def test_cardiology_online_range(self):
        s = RngStream(1)
        for _ in range(500):
            v = consultation_duration(s, doctor(1), patient(1), Channel.ONLINE, Phase.INITIAL)
            assert 10 <= v <= 15

    def test_breast_oncology_in_person_range(self):
        s = RngStream(2)
        for _ in range(500):
            v = consultation_duration(s, doctor(5), patient(5), Channel.IN_PERSON, Phase.INITIAL)
            assert 20 <= v <= 25

    def test_anxious_factor_on_identical_draw(self):
        normal = consultation_duration(RngStream(3, 0, "d"), doctor(2), patient(2), Channel.IN_PERSON, Phase.INITIAL)
        anxious = consultation_duration(RngStream(3, 0, "d"), doctor(2), patient(2, Trait.ANXIOUS),
                                        Channel.IN_PERSON, Phase.INITIAL)
        assert anxious == pytest.approx(1.25 * normal, rel=1e-15)

    def test_factor_off_for_revisits_and_procedural_mode(self):
        p = patient(2, Trait.ANXIOUS)
        base = consultation_duration(RngStream(4), doctor(2), patient(2), Channel.ONLINE, Phase.REVISIT)
        assert consultation_duration(RngStream(4), doctor(2), p, Channel.ONLINE, Phase.REVISIT) == base
        first = consultation_duration(RngStream(4), doctor(2), patient(2), Channel.ONLINE, Phase.INITIAL)
        assert consultation_duration(RngStream(4), doctor(2), p, Channel.ONLINE, Phase.INITIAL,
                                     behavioural=False) == first

    def test_file_review_column(self):
        s = RngStream(5)
        vals = [consultation_duration(s, doctor(4), patient(4), Channel.ONLINE, Phase.FILE_REVIEW) for _ in range(300)]
        assert min(vals) >= 20 and max(vals) <= 25

    def test_specialty_mismatch(self):
        with pytest.raises(ContractViolation):
            consultation_duration(RngStream(1), doctor(1), patient(2), Channel.ONLINE, Phase.INITIAL)


class TestCharts:
    def test_confirmation_to_wait_for_visit(self):
        p = patient(state=PS.CONFIRMATION)
        new, _ = patient_transition(p, "confirm", 60.0)
        assert new is PS.WAIT_FOR_VISIT and p.state is PS.WAIT_FOR_VISIT

    def test_emergency_from_home_requests_visit(self):
        p = patient(state=PS.HOME)
        new, emits = patient_transition(p, "emergency", 0.0)
        assert new is PS.EMERGENCY
        assert "emergency_visit_request" in emits

    def test_invalid_edge_raises(self):
        with pytest.raises(ContractViolation):
            patient_transition(patient(state=PS.HOSPITALIZATION), "confirm", 0.0)

    def test_recheck_only_once(self):
        d = doctor()
        for trig in ("goto_clinic", "start_visit", "decide", "contested", "decide"):
            doctor_transition(d, trig, 0.0)
        assert d.state is DS.MAKE_DECISION
        doctor_transition(d, "contested", 0.0)
        assert d.state is DS.RECHECK
        with pytest.raises(ContractViolation):
            doctor_transition(d, "contested", 0.0)

    def test_validator_rejects_unknown_edge(self):
        assert validate_transitions([("patient", "needService", "Confirmation", "file_reviewed")]) == 1
        with pytest.raises(ContractViolation):
            validate_transitions([("patient", "needService", "Recovered", "discharge")])


class TestBehaviour:
    def test_popularity_rule(self):
        assert update_popularity(1.0, Outcome.COMPLETED) == pytest.approx(1.02)

    def test_popularity_floor(self):
        p = 1.0
        for _ in range(200):
            p = update_popularity(p, Outcome.ABANDONED)
        assert p == 0.1

    @given(st.lists(st.sampled_from(list(Outcome)), max_size=400), st.floats(0.1, 10))
    def test_popularity_stays_clamped(self, outcomes, start):
        p = start
        for o in outcomes:
            p = update_popularity(p, o)
            assert 0.1 <= p <= 10

    def test_disagreement_levels(self):
        b = BehaviourParams()
        p = patient()
        p.online_pref = True
        assert disagreement_probability(p, b, channel=Channel.IN_PERSON) == 0.5
        assert disagreement_probability(p, b, channel=Channel.ONLINE) == 0.05
        p.hosp_pref = True
        assert disagreement_probability(p, b, recommendation=Recommendation.HOME) == 0.5
        assert disagreement_probability(p, b, recommendation=Recommendation.HOSPITALIZE) == 0.05

    def test_doctor_change_toward_better_only(self):
        busy, idle = doctor(2, 0), doctor(2, 1)
        for i in range(4):
            busy.add_patient(i, Channel.ONLINE)
        assert doctor_change_probability(busy, idle) == pytest.approx(0.8)
        assert doctor_change_probability(idle, busy) == 0.0

    def test_worry_delay(self):
        assert BehaviourParams().worry_delay_minutes() == 101 * 60


def identity_params():
    eye = np.eye(3)
    base = {h.value: eye.tolist() for h in HEALTH_ORDER}
    spec = {
        "base_adherence": base,
        "poor_tilt": {"age": {"young": 0, "middle": 0, "senior": 0}, "gender": {"F": 0, "M": 0},
                      "trait": {"Relaxed": 0, "Normal": 0, "Anxious": 0}, "unavailable": 0},
        "health": {a.value: eye.tolist() for a in ADHERENCE_ORDER},
        "availability": np.eye(2).tolist(),
    }
    return AdherenceParams.from_spec(spec)


class TestAdherence:
    def test_identity_rows_keep_state(self):
        p = patient(state=PS.WAIT_FOR_VISIT)
        p.adherence_state, p.health_status = Adherence.PARTIAL, Health.WORSENING
        s = RngStream(1)
        for _ in range(20):
            assert drug_behavior_step(s, p, identity_params()) == (Adherence.PARTIAL, Health.WORSENING)
        assert not p.emergency_flag

    def test_forced_poor_critical_sets_flag(self):
        params = identity_params()
        to_poor = np.array([[0, 0, 1.0]] * 3)
        to_critical = np.array([[0, 0, 1.0]] * 3)
        for key in params.risk:
            params.risk[key] = to_poor
        for key in params.health:
            params.health[key] = to_critical
        p = patient(state=PS.HOME)
        drug_behavior_step(RngStream(2), p, params)
        assert p.adherence_state is Adherence.POOR and p.health_status is Health.CRITICAL
        assert p.emergency_flag

    def test_only_outside_hospital(self):
        with pytest.raises(ContractViolation):
            drug_behavior_step(RngStream(1), patient(state=PS.HOSPITALIZATION), AdherenceParams.default())

    def test_rows_validated(self):
        with pytest.raises(AdherenceConfigError):
            AdherenceParams(risk={}, health={"Good": np.array([[0.5, 0.6, 0.0]] * 3)}, availability=np.eye(2))

    @pytest.mark.parametrize("age", [30, 70])
    def test_long_run_poor_fraction_matches_stationary_law(self, age):
        params = AdherenceParams.default()
        p = patient(state=PS.HOME, age=age)
        P, states = joint_transition_matrix(params, p)
        vals, vecs = np.linalg.eig(P.T)
        pi = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
        pi /= pi.sum()
        poor = sum(w for w, s in zip(pi, states) if s[1] is Adherence.POOR)
        s = RngStream(321, 0, "adh", age)
        hits = 0
        n = 100_000
        for _ in range(n):
            drug_behavior_step(s, p, params)
            hits += p.adherence_state is Adherence.POOR
        assert abs(hits / n - poor) < 0.01
        assert 0.1 < poor < 0.25

    def test_default_matrix_rows_are_stochastic(self):
        params = AdherenceParams.default()
        p = patient(age=50)
        P, _ = joint_transition_matrix(params, p)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def sections():
    out = {}
    for spec, beds in zip(range(1, 6), (40, 50, 70, 20, 60)):
        out[spec] = SectionAgent(spec, beds)
    return out


def fill(section, n):
    section.occupants.extend(range(1000 * section.spec, 1000 * section.spec + n))


class TestBedSharing:
    def test_half_of_free_beds_lent(self):
        secs = sections()
        req = secs[2]
        fill(req, 50)
        req.waiting_list.extend([1, 2, 3])
        fill(secs[3], 70)
        fill(secs[5], 60)
        fill(secs[4], 9)  # 11 of 20 free
        rec = capacity_rebalance(req, secs.values())
        assert rec is not None and rec.lender == 4 and rec.beds == 5
        assert req.total_beds == 55 and secs[4].total_beds == 15
        assert req.state is SS.TAKE_OTHERS and secs[4].state is SS.BORROW

    def test_lender_needs_more_than_half_free(self):
        secs = sections()
        fill(secs[2], 50)
        secs[2].waiting_list.extend([1, 2, 3])
        fill(secs[3], 70)
        fill(secs[5], 60)
        fill(secs[4], 10)  # exactly half free
        assert capacity_rebalance(secs[2], secs.values()) is None

    def test_cardiology_never_borrows(self):
        secs = sections()
        fill(secs[1], 40)
        secs[1].waiting_list.extend(range(10))
        assert capacity_rebalance(secs[1], secs.values()) is None

    def test_below_threshold_no_transfer(self):
        secs = sections()
        fill(secs[4], 20)
        secs[4].waiting_list.extend([1, 2])
        assert capacity_rebalance(secs[4], secs.values()) is None

    def test_return_restores_baseline(self):
        secs = sections()
        req = secs[4]
        fill(req, 20)
        req.waiting_list.extend([1, 2, 3])
        total = sum(s.total_beds for s in secs.values())
        rec = capacity_rebalance(req, secs.values())
        assert sum(s.total_beds for s in secs.values()) == total
        req.waiting_list.clear()
        assert return_borrowed_beds(req, secs) == rec.beds
        assert [s.total_beds for s in secs.values()] == [40, 50, 70, 20, 60]
        assert all(s.state is SS.NORMAL for s in secs.values())

    def test_partial_return_while_beds_occupied(self):
        secs = sections()
        req = secs[4]
        fill(req, 20)
        req.waiting_list.extend([1, 2, 3])
        rec = capacity_rebalance(req, secs.values())
        req.occupants.extend([7001, 7002])  # two borrowed beds now in use
        req.waiting_list.clear()
        k = return_borrowed_beds(req, secs)
        assert k == rec.beds - 2
        assert req.state is SS.TAKE_OTHERS and req.how_many == 2
