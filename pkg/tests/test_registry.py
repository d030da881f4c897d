import itertools
import random

import pytest

from cuckoo_rpm import crypto
from cuckoo_rpm.errors import (
    AlreadyRevoked,
    Denied,
    DuplicateRegistration,
    MalformedSnapshot,
    UnknownPid,
)
from cuckoo_rpm.filter_core import FilterParams
from cuckoo_rpm.registry import (
    EXPECTED_VERDICT,
    FilterPair,
    PairReceiver,
    PseudoId,
    RaDirectory,
    Role,
    Status,
    Verdict,
    classify,
    verdict_for,
    verify_pair,
)

MP, P = Role.MEDICAL_PROFESSIONAL, Role.PATIENT


def directory(seed=0, m=64, f=16, key_bits=512):
    params = FilterParams(m, 4, f)
    return RaDirectory(random.Random(seed), params={r: params for r in Role},
                       key_bits=key_bits, kdf_iterations=50)


@pytest.fixture
def ra():
    return directory()


@pytest.mark.parametrize("pcf,ncf,expected", [
    (True, False, Verdict.VALID),
    (False, True, Verdict.MALICIOUS),
    (False, False, Verdict.AWAIT_UPDATE),
    (True, True, Verdict.ESCALATE_TO_RA),
])
def test_verdict_table(pcf, ncf, expected):
    assert verdict_for(pcf, ncf) is expected


def test_verdict_map_total_and_injective():
    verdicts = [verdict_for(a, b) for a, b in itertools.product([False, True], repeat=2)]
    assert sorted(v.value for v in verdicts) == sorted(v.value for v in Verdict)


def test_register_hundred_patients_all_valid(ra):
    pids = [ra.register(P, f"patient {i}", "pw")[0] for i in range(100)]
    pair = ra.publish_pair(P)
    assert len(set(pids)) == 100
    assert all(classify(pid, pair) is Verdict.VALID for pid in pids)


def test_duplicate_registration(ra):
    ra.register(P, "Ann", "pw")
    with pytest.raises(DuplicateRegistration):
        ra.register(P, "Ann", "pw2", username="ann2")


def test_revoked_identity_cannot_reregister(ra):
    pid, _ = ra.register(MP, "Dr Who", "pw")
    ra.revoke(pid)
    with pytest.raises(DuplicateRegistration):
        ra.register(MP, "Dr Who", "pw", username="who-again")


def test_reregister_after_departure_gets_new_pid(ra):
    pid, _ = ra.register(P, "Bo", "pw")
    ra.deregister(pid)
    pid2, _ = ra.register(P, "Bo", "pw")
    assert pid2 != pid
    assert ra.classify(pid2) is Verdict.VALID


def test_full_filter_rebuilds_doubled():
    ra = directory(m=8)
    pids = [ra.register(P, f"p{i}", "pw")[0] for i in range(60)]
    assert ra.pcf[P].params.bucket_count > 8
    assert all(ra.classify(pid) is Verdict.VALID for pid in pids)
    assert not ra.mismatches(P)


def test_pseudo_ids_never_contain_real_identity(ra):
    pid, _ = ra.register(P, "Zed", "pw")
    assert b"Zed" not in pid.id_bytes
    assert ra.real_identity_of(pid) == "Zed"


def test_revoke_flow(ra):
    pid, _ = ra.register(MP, "Dr A", "pw")
    old = ra.publish_pair(MP)
    ra.revoke(pid)
    new = ra.publish_pair(MP)
    assert classify(pid, old) is Verdict.VALID
    assert classify(pid, new) is Verdict.MALICIOUS
    assert ra.audit_log[-2]["event"] == "revoke"
    with pytest.raises(AlreadyRevoked):
        ra.revoke(pid)


def test_revoke_unknown_pid(ra):
    with pytest.raises(UnknownPid):
        ra.revoke(PseudoId(MP, bytes(16)))
    with pytest.raises(UnknownPid):
        ra.deregister(PseudoId(MP, bytes(16)))


def test_deregister_gives_await_update(ra):
    pid, _ = ra.register(P, "Cy", "pw")
    ra.deregister(pid)
    assert classify(pid, ra.publish_pair(P)) is Verdict.AWAIT_UPDATE
    with pytest.raises(UnknownPid):
        ra.deregister(pid)


def test_deregister_revoked_leaves_both_filters(ra):
    pid, _ = ra.register(MP, "Dr B", "pw")
    ra.revoke(pid)
    ra.deregister(pid)
    assert ra.classify(pid) is Verdict.AWAIT_UPDATE


def test_departing_mp_releases_patients(ra):
    mp1, _ = ra.register(MP, "Dr 1", "pw")
    mp2, _ = ra.register(MP, "Dr 2", "pw")
    patients = [ra.register(P, f"p{i}", "pw")[0] for i in range(4)]
    for p in patients:
        ra.assign_mp(p, exclude={mp2})
    released = ra.deregister(mp1)
    assert set(released) == set(patients)
    assert all(ra.assign_mp(p, exclude={mp1}) == mp2 for p in released)


def test_assign_without_active_mp_denied(ra):
    p, _ = ra.register(P, "p", "pw")
    with pytest.raises(Denied):
        ra.assign_mp(p)


# -- pairs and signatures -----------------------------------------------------


def test_publish_verify_and_tamper(ra):
    ra.register(MP, "Dr", "pw")
    pair = ra.publish_pair(MP)
    assert verify_pair(pair, ra.public_key)
    raw = bytearray(pair.to_bytes())
    raw[30] ^= 0x01  # inside the pcf snapshot
    try:
        bad = FilterPair.from_bytes(bytes(raw))
    except MalformedSnapshot:
        return
    assert not verify_pair(bad, ra.public_key)


def test_pair_wire_round_trip(ra):
    for i in range(5):
        ra.register(P, f"p{i}", "pw")
    pair = ra.publish_pair(P)
    back = FilterPair.from_bytes(pair.to_bytes())
    assert back.pcf == pair.pcf and back.ncf == pair.ncf and back.epoch == pair.epoch
    assert verify_pair(back, ra.public_key)


def test_signature_transplant_across_epochs_fails(ra):
    ra.register(MP, "Dr", "pw")
    one = ra.publish_pair(MP)
    two = ra.publish_pair(MP)
    forged = FilterPair(MP, two.pcf, two.ncf, two.epoch, one.signature)
    assert not verify_pair(forged, ra.public_key)


def test_receiver_rejects_epoch_regression(ra):
    rx = PairReceiver(ra.public_key)
    pairs = [ra.publish_pair(MP) for _ in range(5)]
    for p in pairs:
        assert rx.accept(p)
    assert not rx.accept(pairs[2])
    assert not rx.accept(pairs[4])
    assert rx.epoch(MP) == 5


def test_receiver_rejects_foreign_signature(ra):
    other = directory(seed=99)
    rx = PairReceiver(ra.public_key)
    assert not rx.accept(other.publish_pair(MP))


# -- escalation ---------------------------------------------------------------


def find_collision(role, want_status, seeds=400):
    """Seed sweep with 4-bit fingerprints until some principal hits both filters."""
    for s in range(seeds):
        ra = directory(seed=s, m=4, f=4, key_bits=256)
        pids = [ra.register(role, f"x{i}", "pw")[0] for i in range(12)]
        for pid in pids[:6]:
            ra.revoke(pid)
        for pid in pids:
            if ra.status_of(pid) is want_status and ra.classify(pid) is Verdict.ESCALATE_TO_RA:
                return ra, pid
    pytest.fail("no double hit found")


@pytest.mark.parametrize("status", [Status.ACTIVE, Status.REVOKED])
def test_escalation_resolves_to_status_without_collateral(status):
    ra, pid = find_collision(MP, status)
    before = {p: ra.classify(p) for p in ra.members(MP, Status.ACTIVE) + ra.members(MP, Status.REVOKED)}
    epoch = ra.epoch[MP]
    pair = ra.resolve_escalation(pid)
    assert classify(pid, pair) is EXPECTED_VERDICT[status]
    assert pair.epoch == epoch + 1
    for other, verdict in before.items():
        if other != pid and verdict is EXPECTED_VERDICT[ra.status_of(other)]:
            assert ra.classify(other) is verdict


def test_case4_reachable_with_small_fingerprints():
    hits = 0
    for s in range(30):
        ra = directory(seed=s, m=16, f=4, key_bits=256)
        pids = [ra.register(MP, f"x{i}", "pw")[0] for i in range(60)]
        for pid in pids[10:]:
            ra.revoke(pid)
        hits += any(ra.classify(p) is Verdict.ESCALATE_TO_RA for p in pids[:10])
    assert hits > 0


def test_departed_collisions_are_purged():
    for s in range(200):
        ra = directory(seed=s, m=4, f=4, key_bits=256)
        pids = [ra.register(P, f"x{i}", "pw")[0] for i in range(12)]
        for pid in pids[:4]:
            ra.revoke(pid)
        for pid in pids[::3]:
            ra.deregister(pid)
        for pid in pids[::3]:
            assert ra.classify(pid) is Verdict.AWAIT_UPDATE


# -- credentials --------------------------------------------------------------


def test_check_credential(ra):
    pid, _ = ra.register(P, "Dee", "s3cret", username="dee")
    assert ra.check_credential("dee", "s3cret") == pid
    with pytest.raises(Denied):
        ra.check_credential("dee", "wrong")
    with pytest.raises(Denied):
        ra.check_credential("nobody", "s3cret")
    ra.revoke(pid)
    with pytest.raises(Denied):
        ra.check_credential("dee", "s3cret")


def test_departed_credential_denied(ra):
    pid, _ = ra.register(P, "Eve", "pw", username="eve")
    ra.deregister(pid)
    with pytest.raises(Denied):
        ra.check_credential("eve", "pw")


def test_key_pairs_are_distinct(ra):
    keys = {ra.register(P, f"p{i}", "pw")[1].public.n for i in range(10)}
    assert len(keys) == 10
    assert ra.public_key.n not in keys


# -- lifecycle soundness (randomized) -----------------------------------------


def random_lifecycle(seed, steps=40, f=8, m=8):
    rng = random.Random(seed)
    ra = directory(seed=seed, m=m, f=f, key_bits=128)
    names = itertools.count()
    for _ in range(steps):
        role = rng.choice(list(Role))
        live = [p for p in ra.principals_of(role) if p.status is not Status.DEPARTED]
        op = rng.random()
        if op < 0.5 or not live:
            ra.register(role, f"id{next(names)}", "pw")
        elif op < 0.75:
            pr = rng.choice(live)
            if pr.status is Status.ACTIVE:
                ra.revoke(pr.pid)
        else:
            ra.deregister(rng.choice(live).pid)
        yield ra


def settle(ra):
    """Resolve every double hit, as a verifier escalation would."""
    for role in Role:
        for pr in ra.principals_of(role):
            if ra.classify(pr.pid) is Verdict.ESCALATE_TO_RA:
                ra.resolve_escalation(pr.pid)


@pytest.mark.parametrize("seed", range(25))
def test_lifecycle_soundness(seed):
    for ra in random_lifecycle(seed):
        settle(ra)
        for role in Role:
            for pr in ra.principals_of(role):
                assert ra.classify(pr.pid) is EXPECTED_VERDICT[pr.status], (pr.status, seed)
