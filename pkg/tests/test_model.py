import dataclasses

import numpy as np
import pytest

from medtour.agents import PS, BehaviourParams, Channel, DoctorAgent, PatientType
from medtour.casedata import WEEKLY_SCHEDULES
from medtour.config import DES_ONLY, ScenarioConfig, preset
from medtour.model import (
    HospitalModel,
    book_appointment,
    choose_doctor,
    online_probability,
    run_replication,
    spawn_patient,
)
from medtour.simcore import MINUTES_PER_DAY, RngStream

SAT_10 = 600.0


def short(cfg=None, days=30, **kw):
    cfg = cfg or ScenarioConfig()
    return dataclasses.replace(cfg, horizon_days=days, warmup_days=kw.pop("warmup_days", 2),
                               master_seed=kw.pop("seed", 7), **kw)


class TestSpawning:
    def test_tourist_and_disease_fractions(self):
        cfg = ScenarioConfig()
        n = 100_000
        tourists = 0
        diseases = np.zeros(6, int)
        for i in range(n):
            p = spawn_patient(RngStream(3, 0, "patient", i), cfg, i)
            tourists += p.is_tourist
            diseases[p.disease] += 1
        assert abs(tourists / n - 1 / 11) < 0.005
        assert np.all(np.abs(diseases[1:] / n - 0.2) < 0.01)

    def test_paediatric_ages(self):
        cfg = ScenarioConfig()
        for i in range(2000):
            p = spawn_patient(RngStream(4, 0, "patient", i), cfg, i)
            if p.disease == 4:
                assert 1 <= p.age <= 17
            else:
                assert p.age >= 18

    def test_online_share_for_tourists(self):
        cfg = ScenarioConfig(K=60)
        s = RngStream(5, 0, "channel")
        p = spawn_patient(RngStream(5, 0, "p"), cfg, 1)
        p.patient_type, p.online_pref = PatientType.TOURIST, None
        assert online_probability(p, cfg) == pytest.approx(0.6)
        hits = sum(s.random() < online_probability(p, cfg) for _ in range(100_000))
        assert abs(hits / 100_000 - 0.60) < 0.01

    def test_preference_shifts_share(self):
        cfg = ScenarioConfig(L=10)
        p = spawn_patient(RngStream(6), cfg, 1)
        p.patient_type = PatientType.LOCAL
        p.online_pref = True
        assert online_probability(p, cfg) == pytest.approx(0.2)
        p.online_pref = False
        assert online_probability(p, cfg) == pytest.approx(0.0)

    def test_doctor_choice_follows_popularity(self):
        docs = [DoctorAgent(0, 2, 3, 5, WEEKLY_SCHEDULES[2], popularity=10.0),
                DoctorAgent(1, 2, 3, 5, WEEKLY_SCHEDULES[2], popularity=1.0)]
        s = RngStream(8, 0, "doctor")
        picks = [choose_doctor(s, docs).doc_id for _ in range(50_000)]
        share = 1 - np.mean(picks)
        assert abs(share - 10 / 11) < 0.02


class TestBooking:
    def cardiologist(self):
        return DoctorAgent(0, 1, 5, 5, WEEKLY_SCHEDULES[1])

    def test_first_two_saturday_slots(self):
        d = self.cardiologist()
        taken = {}
        assert book_appointment(d, Channel.IN_PERSON, 5, 0.0, taken, 1) == SAT_10
        assert book_appointment(d, Channel.IN_PERSON, 5, 0.0, taken, 2) == SAT_10 + 5
        assert d.patient_list == [1, 2]

    def test_full_saturday_rolls_to_sunday(self):
        d = self.cardiologist()
        taken = {}
        times = [book_appointment(d, Channel.IN_PERSON, 5, 0.0, taken, i) for i in range(6)]
        assert times[4] == SAT_10 + 20
        assert times[5] == MINUTES_PER_DAY + SAT_10

    @pytest.mark.parametrize("interval,span", [(2, 8), (5, 20)])
    def test_slot_interval_sets_span(self, interval, span):
        d = self.cardiologist()
        taken = {}
        times = [book_appointment(d, Channel.IN_PERSON, interval, 0.0, taken) for _ in range(5)]
        assert times[-1] - times[0] == span

    def test_online_slots_divide_block(self):
        d = self.cardiologist()
        taken = {}
        times = [book_appointment(d, Channel.ONLINE, 5, 0.0, taken) for _ in range(5)]
        assert times == [480.0, 504.0, 528.0, 552.0, 576.0]

    def test_past_slots_skipped(self):
        d = self.cardiologist()
        assert book_appointment(d, Channel.IN_PERSON, 5, SAT_10 + 1) == SAT_10 + 5


def bed_model(**kw):
    cfg = ScenarioConfig(master_seed=1, mode=DES_ONLY, beds=(40, 1, 70, 20, 60), **kw)
    return HospitalModel(cfg)


def decided_patient(model, tourist, t):
    model.cal.now = t
    p = model.spawn_patient()
    p.disease = 2
    p.patient_type = PatientType.TOURIST if tourist else PatientType.LOCAL
    p.state = PS.AGREE_OR_DISAGREE
    return p


class TestBedQueue:
    def test_tourists_first_under_priority(self):
        m = bed_model(O=1)
        first = decided_patient(m, False, 0.0)
        assert m.enqueue_for_bed(first, Channel.IN_PERSON) == "admit"
        local = decided_patient(m, False, 10.0)
        tourist = decided_patient(m, True, 20.0)
        m.enqueue_for_bed(local, Channel.IN_PERSON)
        m.enqueue_for_bed(tourist, Channel.IN_PERSON)
        assert m.sections[2].waiting_list == [tourist.file_number, local.file_number]

    def test_request_time_order_without_priority(self):
        m = bed_model(O=0)
        m.enqueue_for_bed(decided_patient(m, False, 0.0), Channel.IN_PERSON)
        local = decided_patient(m, False, 10.0)
        tourist = decided_patient(m, True, 20.0)
        m.enqueue_for_bed(local, Channel.IN_PERSON)
        m.enqueue_for_bed(tourist, Channel.IN_PERSON)
        assert m.sections[2].waiting_list == [local.file_number, tourist.file_number]

    def test_scheduled_policy_books_a_date(self):
        m = bed_model(M=1)
        first = decided_patient(m, False, 0.0)
        m.enqueue_for_bed(first, Channel.ONLINE)
        second = decided_patient(m, False, 30.0)
        assert m.enqueue_for_bed(second, Channel.ONLINE) == "home"
        assert second.state is PS.WAIT_IN_HOME
        slot = second.handles["bed_slot"].time
        assert first.planned_discharge <= slot < first.planned_discharge + MINUTES_PER_DAY
        assert (slot % MINUTES_PER_DAY) == 8 * 60

    def test_in_person_follows_its_own_policy_bit(self):
        m = bed_model(M=1, N=0)
        m.enqueue_for_bed(decided_patient(m, False, 0.0), Channel.IN_PERSON)
        p = decided_patient(m, False, 30.0)
        assert m.enqueue_for_bed(p, Channel.IN_PERSON) == "queue"
        assert p.state is PS.WAIT_FOR_EMPTY_BED


class TestReplication:
    def test_zero_horizon_is_empty(self):
        rv, trace = run_replication(short(days=0, warmup_days=0))
        assert trace.events == 0 and rv.arrivals == 0
        assert rv.recovered == 0

    def test_same_seed_same_result(self):
        a, _ = run_replication(short())
        b, _ = run_replication(short())
        assert a.as_dict() == b.as_dict()

    def test_replications_differ(self):
        a, _ = run_replication(short(), replication=0)
        b, _ = run_replication(short(), replication=1)
        assert a.as_dict() != b.as_dict()

    @pytest.mark.parametrize("name", ["baseline", "final", "low", "high"])
    @pytest.mark.parametrize("mode", ["hybrid", DES_ONLY])
    def test_invariants_and_charts_hold(self, name, mode):
        cfg = short(preset(name), days=40, mode=mode)
        _, trace = run_replication(cfg, record_transitions=True, check_invariants=True)
        assert trace.transitions
        exits = {r.exit_kind for r in trace.patients}
        assert exits <= {None, "recovered", "dropout"}

    def test_patients_conserved(self):
        _, trace = run_replication(short(days=60))
        done = sum(r.exit_kind is not None for r in trace.patients)
        live = sum(r.exit_kind is None for r in trace.patients)
        assert done + live == len(trace.patients)
        for r in trace.patients:
            if r.exit_kind == "recovered":
                assert r.final_state == PS.RECOVERED.value
            if r.exit_kind == "dropout":
                assert r.final_state == PS.DROPOUT.value

    def test_no_leave_timer_means_no_dropouts(self):
        cfg = short(days=60, behaviour=BehaviourParams(leave_timer_enabled=False))
        rv, _ = run_replication(cfg)
        assert rv.early_dropout == 0

    def test_procedural_mode_has_no_behaviour(self):
        rv, trace = run_replication(short(days=60, mode=DES_ONLY))
        assert trace.adherence_steps == 0
        assert trace.escalations == [] and trace.transfers == []
        assert rv.early_dropout == 0 and rv.emergency_before_appointment == 0

    def test_hybrid_mode_has_behaviour(self):
        rv, trace = run_replication(short(days=60))
        assert trace.adherence_steps > 0
        assert rv.emergency_before_appointment > 0

    def test_doctor_time_inside_window(self):
        _, trace = run_replication(short(days=21))
        window = trace.end - trace.warmup_end
        for _, _, worked, scheduled in trace.doctor_time:
            assert 0 < scheduled < window
            assert 0 <= worked < window
