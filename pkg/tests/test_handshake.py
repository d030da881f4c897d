import random

import pytest

from cuckoo_rpm import crypto
from cuckoo_rpm.crypto import DhGroup
from cuckoo_rpm.filter_core import FilterParams
from cuckoo_rpm.handshake import (
    Envelope,
    Kind,
    MpSession,
    MpState,
    PatientSession,
    PatientState,
    Rejected,
    RejectReason,
    ReplayCache,
    build_ack,
    build_login,
    issue_m1,
    mp_handle_ack,
    mp_handle_m2,
    pack_fields,
    patient_handle_m1,
    patient_handle_m3,
    patient_login,
    ra_handle_login,
    receive_vitals,
    retry_pending,
    send_vitals,
)
from cuckoo_rpm.registry import PairReceiver, RaDirectory, Role, Verdict

MP, P = Role.MEDICAL_PROFESSIONAL, Role.PATIENT


class World:
    """One RA, one MP, one patient, and verifiers holding the latest pairs."""

    def __init__(self, seed=0, dh_bits=16):
        self.rng = random.Random(seed)
        params = FilterParams(64)
        self.ra = RaDirectory(random.Random(seed), params={r: params for r in Role},
                              kdf_iterations=50)
        self.mp_pid, self.mp_keys = self.ra.register(MP, "Dr Real Name", "mp-pw", username="doc")
        self.p_pid, self.p_keys = self.ra.register(P, "Patient Real Name", "p-pw", username="pat")
        self.p_filters = PairReceiver(self.ra.public_key)
        self.mp_filters = PairReceiver(self.ra.public_key)
        self.publish()
        self.patient = PatientSession(self.p_pid, self.p_keys, ra_public=self.ra.public_key,
                                      dh_bits=dh_bits)
        self.mp = MpSession(self.mp_pid, self.mp_keys)

    def publish(self):
        for role in Role:
            pair = self.ra.publish_pair(role)
            self.p_filters.accept(pair)
            self.mp_filters.accept(pair)

    def m1(self, now=100):
        return patient_login(self.ra, self.patient, "pat", "p-pw", now, self.rng)

    def m2(self, now=101, **kw):
        return patient_handle_m1(self.patient, self.m1(now - 1), self.p_filters, now, self.rng, **kw)

    def m3(self, now=102, **kw):
        return mp_handle_m2(self.mp, self.m2(now - 1), self.mp_filters, now, self.rng, **kw)

    def establish(self, now=103):
        patient_handle_m3(self.patient, self.m3(now - 1), now)
        mp_handle_ack(self.mp, build_ack(self.patient, now, self.rng), now + 1)


def test_honest_handshake_agrees_on_key():
    w = World()
    w.establish()
    assert w.patient.state is PatientState.ESTABLISHED
    assert w.mp.state is MpState.ESTABLISHED
    assert w.patient.shared_key == w.mp.shared_key is not None
    assert w.mp.confirmed


def test_worked_example_values_in_m3():
    w = World()
    group = DhGroup(23, 5)
    m2 = w.m2(group=group, secret=6)
    m3 = mp_handle_m2(w.mp, m2, w.mp_filters, 101, w.rng, secret=15)
    assert w.mp.shared_key == 2
    patient_handle_m3(w.patient, m3, 102)
    assert w.patient.shared_key == 2


def test_state_history_records_fresh_and_valid_before_established():
    w = World()
    w.establish()
    for s in (w.patient, w.mp):
        est = next(i for i, h in enumerate(s.history) if h.endswith("->Established"))
        assert any(h.startswith("fresh:") for h in s.history[:est])
        assert "verdict:Valid" in s.history[:est]


def test_login_with_bad_password_denied():
    w = World()
    with pytest.raises(Rejected) as exc:
        patient_login(w.ra, w.patient, "pat", "nope", 10, w.rng)
    assert exc.value.reason is RejectReason.DENIED
    assert w.patient.state is PatientState.FAILED


def test_revoked_patient_login_denied():
    w = World()
    w.ra.revoke(w.p_pid)
    with pytest.raises(Rejected) as exc:
        w.m1()
    assert exc.value.reason is RejectReason.DENIED


def test_m1_only_opens_with_patient_key():
    w = World()
    m1 = w.m1()
    with pytest.raises(Exception):
        crypto.decrypt(w.mp_keys.private, m1.ciphertext)


def test_stale_m1_rejected():
    w = World()
    m1 = w.m1(now=0)
    with pytest.raises(Rejected) as exc:
        patient_handle_m1(w.patient, m1, w.p_filters, 5000, w.rng)
    assert exc.value.reason is RejectReason.STALE_TIMESTAMP
    assert w.patient.state is PatientState.LOGGED_IN


def test_revoked_mp_between_epochs_aborts():
    w = World()
    m1 = w.m1()
    w.ra.revoke(w.mp_pid)
    w.publish()
    with pytest.raises(Rejected) as exc:
        patient_handle_m1(w.patient, m1, w.p_filters, 101, w.rng)
    assert exc.value.verdict is Verdict.MALICIOUS
    assert w.patient.state is PatientState.FAILED


def test_revoked_patient_at_mp_rejected():
    w = World()
    m2 = w.m2()
    w.ra.revoke(w.p_pid)
    w.publish()
    with pytest.raises(Rejected) as exc:
        mp_handle_m2(w.mp, m2, w.mp_filters, 102, w.rng)
    assert exc.value.reason is RejectReason.PEER_NOT_VALID
    assert exc.value.verdict is Verdict.MALICIOUS


def test_await_update_retries_once_then_aborts():
    w = World()
    stale_view = PairReceiver(w.ra.public_key)  # no pairs yet -> AwaitUpdate
    m1 = w.m1()
    with pytest.raises(Rejected) as exc:
        patient_handle_m1(w.patient, m1, stale_view, 101, w.rng)
    assert exc.value.verdict is Verdict.AWAIT_UPDATE
    assert w.patient.pending is not None
    with pytest.raises(Rejected):
        retry_pending(w.patient, stale_view, 102, w.rng)
    assert w.patient.state is PatientState.FAILED


def test_await_update_then_success_after_broadcast():
    w = World()
    empty = PairReceiver(w.ra.public_key)
    m1 = w.m1()
    with pytest.raises(Rejected):
        patient_handle_m1(w.patient, m1, empty, 101, w.rng)
    m2 = retry_pending(w.patient, w.p_filters, 150, w.rng)
    assert m2.kind is Kind.M2
    assert w.patient.state is PatientState.AWAITING_M3


def test_mp_validates_group():
    w = World()
    w.m1()
    w.patient.peer_pid, w.patient.peer_public = w.mp_pid, w.mp_keys.public
    ts = w.patient.next_ts(100)
    body = pack_fields(5, 21, 2, w.p_keys.public.to_bytes(), ts, w.p_pid.id_bytes)
    env = Envelope(Kind.M2, w.p_pid.id_bytes + w.mp_pid.id_bytes,
                   crypto.encrypt(w.mp_keys.public, body, w.rng))
    with pytest.raises(Rejected) as exc:
        mp_handle_m2(w.mp, env, w.mp_filters, 100, w.rng)
    assert exc.value.reason is RejectReason.BAD_GROUP_PARAMS
    assert w.mp.state is MpState.FAILED


def test_mp_rejects_zero_a():
    w = World()
    body = pack_fields(0, 23, 5, w.p_keys.public.to_bytes(), 100, w.p_pid.id_bytes)
    env = Envelope(Kind.M2, w.p_pid.id_bytes + w.mp_pid.id_bytes,
                   crypto.encrypt(w.mp_keys.public, body, w.rng))
    with pytest.raises(Rejected) as exc:
        mp_handle_m2(w.mp, env, w.mp_filters, 100, w.rng)
    assert exc.value.reason is RejectReason.PEER_VALUE_OUT_OF_RANGE


def test_m2_header_must_match_sealed_pid():
    w = World()
    m2 = w.m2()
    forged = Envelope(Kind.M2, bytes(16) + m2.header[16:], m2.ciphertext)
    with pytest.raises(Rejected) as exc:
        mp_handle_m2(w.mp, forged, w.mp_filters, 102, w.rng)
    assert exc.value.reason is RejectReason.IDENTITY_MISMATCH


def test_wrong_ks_detected_as_modification():
    w = World()
    w.m2(group=DhGroup(23, 5), secret=6)
    ts = 102
    body = pack_fields(19, 3, ts, w.mp_pid.id_bytes)  # correct B, wrong Ks
    env = Envelope(Kind.M3, w.mp_pid.id_bytes + w.p_pid.id_bytes,
                   crypto.encrypt(w.p_keys.public, body, w.rng))
    with pytest.raises(Rejected) as exc:
        patient_handle_m3(w.patient, env, 102)
    assert exc.value.reason is RejectReason.MODIFICATION_DETECTED
    assert w.patient.state is PatientState.FAILED
    assert w.patient.shared_key is None


@pytest.mark.parametrize("kind", ["M1", "M2", "M3"])
def test_every_flipped_ciphertext_byte_rejected(kind):
    w = World(seed=3)
    env = {"M1": w.m1, "M2": w.m2, "M3": w.m3}[kind]()
    for pos in range(0, len(env.ciphertext), 7):
        ct = bytearray(env.ciphertext)
        ct[pos] ^= 0x01
        bad = env.with_ciphertext(bytes(ct))
        target = PatientSession(w.p_pid, w.p_keys) if kind != "M2" else MpSession(w.mp_pid, w.mp_keys)
        with pytest.raises(Rejected) as exc:
            if kind == "M1":
                patient_handle_m1(target, bad, w.p_filters, 100, w.rng)
            elif kind == "M2":
                mp_handle_m2(target, bad, w.mp_filters, 101, w.rng)
            else:
                patient_handle_m3(w.patient, bad, 102)
        assert exc.value.reason in (RejectReason.AUTH_FAILURE, RejectReason.MODIFICATION_DETECTED)
    assert w.patient.shared_key is None


def test_replayed_m2_after_window_is_stale_and_state_unchanged():
    w = World()
    m2 = w.m2(now=101)
    mp_handle_m2(w.mp, m2, w.mp_filters, 102, w.rng)
    fresh_mp = MpSession(w.mp_pid, w.mp_keys)
    with pytest.raises(Rejected) as exc:
        mp_handle_m2(fresh_mp, m2, w.mp_filters, 101 + 2 * 2000, w.rng)
    assert exc.value.reason is RejectReason.STALE_TIMESTAMP
    assert fresh_mp.state is MpState.IDLE


def test_replayed_m2_within_window_detected_by_actor_cache():
    w = World()
    seen = ReplayCache(2000)
    m2 = w.m2()
    mp_handle_m2(w.mp, m2, w.mp_filters, 102, w.rng, seen=seen)
    with pytest.raises(Rejected) as exc:
        mp_handle_m2(MpSession(w.mp_pid, w.mp_keys), m2, w.mp_filters, 103, w.rng, seen=seen)
    assert exc.value.reason is RejectReason.REPLAY_DETECTED


def test_old_session_m3_replayed_later_is_stale():
    w = World()
    old_m3 = w.m3(now=102)
    w2 = World()
    w2.m2(now=6000)
    with pytest.raises(Rejected) as exc:
        patient_handle_m3(w2.patient, old_m3, 6001)
    assert exc.value.reason in (RejectReason.STALE_TIMESTAMP, RejectReason.AUTH_FAILURE)


# -- vitals -------------------------------------------------------------------


def test_vitals_round_trip_and_duplicate():
    w = World()
    w.establish()
    readings = [{"metric": "heart_rate", "value": 71}]
    env = send_vitals(w.patient, readings, 200, w.rng)
    assert receive_vitals(w.mp, env, 201) == readings
    with pytest.raises(Rejected) as exc:
        receive_vitals(w.mp, env, 202)
    assert exc.value.reason is RejectReason.REPLAY_DETECTED


def test_vitals_from_other_session_fail_auth():
    a, b = World(seed=1), World(seed=2)
    a.establish()
    b.establish()
    env = send_vitals(a.patient, [1, 2, 3], 200, a.rng)
    with pytest.raises(Rejected) as exc:
        receive_vitals(b.mp, env, 201)
    assert exc.value.reason is RejectReason.AUTH_FAILURE


def test_vitals_require_established():
    w = World()
    with pytest.raises(Rejected):
        send_vitals(w.patient, [], 10, w.rng)


def test_login_replay_detected_at_ra():
    w = World()
    cache = ReplayCache(2000)
    login = build_login(w.patient, "pat", "p-pw", 50, w.rng)
    ra_handle_login(w.ra, login, 51, w.rng, replay=cache)
    with pytest.raises(Rejected) as exc:
        ra_handle_login(w.ra, login, 52, w.rng, replay=cache)
    assert exc.value.reason is RejectReason.REPLAY_DETECTED


def test_wire_never_contains_real_identity():
    w = World()
    wire = b""
    m1 = w.m1()
    m2 = patient_handle_m1(w.patient, m1, w.p_filters, 101, w.rng)
    m3 = mp_handle_m2(w.mp, m2, w.mp_filters, 102, w.rng)
    patient_handle_m3(w.patient, m3, 103)
    for env in (m1, m2, m3, build_ack(w.patient, 104, w.rng), issue_m1(w.ra, w.p_pid, w.mp_pid, 1, w.rng)):
        wire += env.to_bytes()
    assert b"Real Name" not in wire


def test_envelope_round_trip():
    env = Envelope(Kind.M2, b"h" * 32, b"ciphertext")
    assert Envelope.from_bytes(env.to_bytes()) == env
