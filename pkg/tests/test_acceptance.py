"""Acceptance gate: nine criteria, each printed as one PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary lines
also appear at the end of a full ``pytest`` run.
"""

import random
import subprocess
import sys
import time
from pathlib import Path

import pytest

from cuckoo_rpm import crypto
from cuckoo_rpm.anomaly import (
    DEFAULT_RULES,
    CorrelationRule,
    MisbehaviorReport,
    analyze,
)
from cuckoo_rpm.crypto import DhGroup
from cuckoo_rpm.filter_core import CuckooFilter, FilterParams
from cuckoo_rpm.handshake import (
    Envelope,
    MpSession,
    PatientSession,
    build_ack,
    mp_handle_ack,
    mp_handle_m2,
    patient_handle_m1,
    patient_handle_m3,
    patient_login,
)
from cuckoo_rpm.registry import (
    EXPECTED_VERDICT,
    FilterPair,
    PairReceiver,
    RaDirectory,
    Role,
    Verdict,
    classify,
    verdict_for,
)
from cuckoo_rpm.simnet import MITM_SEQUENCE, SimConfig, assert_sequence, run_scenario

from oracles import (
    ScriptedRng,
    brute_force_findings,
    power_by_repeated_multiplication,
    power_by_squaring,
)
from test_anomaly import HYPER, random_stream, stream
from test_filter_core import worked_chain_filter
from test_registry import random_lifecycle, settle

ROOT = Path(__file__).resolve().parent.parent
RESULTS: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Time the test body, enforce its budget and record a PASS/FAIL line."""
    state = {}

    def start(number, title, budget=None):
        state.update(number=number, title=title, budget=budget, t0=time.perf_counter())

    yield start
    elapsed = time.perf_counter() - state["t0"]
    rep = getattr(request.node, "rep_call", None)
    passed = rep is not None and rep.passed
    budget = state["budget"]
    over = budget is not None and elapsed > budget
    verdict = "PASS" if passed and not over else "FAIL"
    limit = f" / {budget:g}s" if budget else ""
    note = " (over time budget)" if passed and over else ""
    line = f"criterion {state['number']}: {verdict}  {state['title']}  [{elapsed:.2f}s{limit}]{note}"
    RESULTS[state["number"]] = line
    print("\n" + line)
    if over:
        pytest.fail(f"criterion {state['number']} took {elapsed:.2f}s, budget {budget}s")


def test_1_verdict_table(criterion):
    criterion(1, "four-way verdict table", budget=1)
    expected = {
        (True, False): Verdict.VALID,
        (False, True): Verdict.MALICIOUS,
        (False, False): Verdict.AWAIT_UPDATE,
        (True, True): Verdict.ESCALATE_TO_RA,
    }
    for (pcf, ncf), verdict in expected.items():
        assert verdict_for(pcf, ncf) is verdict
    # End to end through real filters as well.
    ra = RaDirectory(random.Random(0), params={r: FilterParams(64) for r in Role}, key_bits=128,
                     kdf_iterations=10)
    pid, _ = ra.register(Role.PATIENT, "t", "pw")
    empty = CuckooFilter(FilterParams(64))
    holding = CuckooFilter(FilterParams(64))
    holding.insert(pid.id_bytes)
    for (pcf, ncf), verdict in expected.items():
        pair = FilterPair(Role.PATIENT, holding if pcf else empty, holding if ncf else empty, 1, b"")
        assert classify(pid, pair) is verdict


def test_2_no_false_negatives(criterion):
    criterion(2, "no false negatives over 10^5 rounds, 50 seeds", budget=30)
    rounds, seeds = 100_000, 50
    per_seed = rounds // seeds
    misses = 0
    for seed in range(seeds):
        rng = random.Random(seed)
        params = FilterParams(512, 4, 16, hash_seed=rng.getrandbits(64))
        cf = CuckooFilter(params, rng=random.Random(seed))
        members = []
        for _ in range(per_seed):
            if members and rng.random() < 0.5:
                misses += not cf.lookup(rng.choice(members))
            elif cf.item_count < 0.9 * params.capacity:
                x = rng.randbytes(12)
                cf.insert(x)
                members.append(x)
        misses += sum(not cf.lookup(x) for x in members)
    assert misses == 0


def test_3_false_positive_bound(criterion):
    criterion(3, "FP rate at load 0.7 within 3x bound", budget=30)
    rng = random.Random(3)
    params = FilterParams(4096, 4, 16, hash_seed=rng.getrandbits(64))
    cf = CuckooFilter(params, rng=random.Random(3))
    for _ in range(int(0.7 * params.capacity)):
        cf.insert(b"\x00" + rng.randbytes(15))
    assert abs(cf.load_factor - 0.7) < 0.001
    queries = 100_000
    fp = sum(cf.lookup(b"\x01" + rng.randbytes(15)) for _ in range(queries))
    bound = 3 * (2 * 4 / 2 ** 16)
    print(f"fp rate {fp / queries:.2e}, bound {bound:.2e}")
    assert fp / queries <= bound


def test_4_eviction_chain(criterion):
    criterion(4, "worked eviction chain x->6, a->4, c->1")
    cf = worked_chain_filter()
    fx, fa, fc = (cf.fingerprint_of(k) for k in (b"x", b"a", b"c"))
    cf.rng = ScriptedRng([1, 0, 0])
    cf.insert(b"x")
    assert cf.bucket(6)[0] == fx
    assert cf.bucket(4)[0] == fa
    assert fc in cf.bucket(1)
    assert all(k in cf for k in (b"x", b"a", b"c"))


def test_5_key_agreement(criterion):
    criterion(5, "1000 honest handshakes agree; small-group example", budget=10)
    group = DhGroup(23, 5)
    assert crypto.dh_public(group, 6) == power_by_squaring(5, 6, 23) == 8
    assert crypto.dh_public(group, 15) == power_by_squaring(5, 15, 23) == 19
    assert crypto.dh_shared(group, 19, 6) == crypto.dh_shared(group, 8, 15) == 2
    assert power_by_repeated_multiplication(8, 15, 23) == 2

    rng = random.Random(5)
    ra = RaDirectory(rng, params={r: FilterParams(64) for r in Role}, kdf_iterations=10)
    mps = [ra.register(Role.MEDICAL_PROFESSIONAL, f"mp{i}", "pw", username=f"mp{i}") for i in range(4)]
    pats = [ra.register(Role.PATIENT, f"p{i}", "pw", username=f"p{i}") for i in range(8)]
    view = PairReceiver(ra.public_key)
    for role in Role:
        view.accept(ra.publish_pair(role))
    agreed = 0
    for seed in range(1000):
        srng = random.Random(seed)
        i = seed % len(pats)
        p_pid, p_keys = pats[i]
        patient = PatientSession(p_pid, p_keys, ra_public=ra.public_key)
        now = 10 * seed
        m1 = patient_login(ra, patient, f"p{i}", "pw", now, srng)
        m2 = patient_handle_m1(patient, m1, view, now + 1, srng)
        mp_keys = next(k for p, k in mps if p == patient.peer_pid)
        mp = MpSession(patient.peer_pid, mp_keys)
        m3 = mp_handle_m2(mp, m2, view, now + 2, srng)
        patient_handle_m3(patient, m3, now + 3)
        mp_handle_ack(mp, build_ack(patient, now + 4, srng), now + 5)
        assert patient.shared_key is not None and patient.shared_key == mp.shared_key
        agreed += 1
    assert agreed == 1000


def test_6_attack_suite(criterion):
    criterion(6, "replay, every-offset modification and MITM detected or harmless", budget=60)
    base_cfg = SimConfig(seed=6, duration_ticks=1500)
    honest = run_scenario(base_cfg)
    assert honest.summary["sessions_established"] == 1

    for kind in ("M1", "M2", "M3"):
        stale = run_scenario(SimConfig(seed=6, intruder_policy={"type": "Replay", "kind": kind,
                                                               "delay": 3000}))
        assert stale.detections()["StaleTimestamp"] >= 1, kind
        assert stale.summary["one_sided_sessions"] == 0

    lengths = {}
    for e in honest.events:
        if e["event"] == "send" and e["kind"] in ("M1", "M2", "M3"):
            lengths[e["kind"]] = len(Envelope.from_bytes(bytes.fromhex(e["wire"])).ciphertext)
    runs = 0
    for kind, size in sorted(lengths.items()):
        for pos in range(size):
            cfg = base_cfg.replace(intruder_policy={"type": "ModifyByte", "kind": kind, "position": pos})
            t = run_scenario(cfg)
            detected = t.detections()
            assert detected["AuthFailure"] + detected["ModificationDetected"] >= 1, (kind, pos)
            assert t.summary["one_sided_sessions"] == 0 or detected, (kind, pos)
            runs += 1
    print(f"{runs} single-byte modifications, all detected")

    mitm = run_scenario(base_cfg.replace(intruder_policy="MitmForward"))
    assert_sequence(mitm, MITM_SEQUENCE)
    assert mitm.final_states == honest.final_states
    assert mitm.summary["intruder_decrypts"] == 0


def test_7_lifecycle_soundness(criterion):
    criterion(7, "1000 randomized lifecycles keep classify == status", budget=60)
    for seed in range(1000):
        for ra in random_lifecycle(seed):
            settle(ra)
            for role in Role:
                for pr in ra.principals_of(role):
                    assert ra.classify(pr.pid) is EXPECTED_VERDICT[pr.status], (seed, pr.status)


def test_8_anomaly_oracle(criterion):
    criterion(8, "rule engine equals brute force on 500 streams", budget=10)
    findings = analyze(stream(150, True), [HYPER])
    assert [type(f) for f in findings] == [MisbehaviorReport]
    assert not [f for f in analyze(stream(150, False), [HYPER]) if isinstance(f, MisbehaviorReport)]
    for seed in range(500):
        rng = random.Random(seed)
        rs = random_stream(rng, n=rng.randrange(1, 60))
        window = rng.choice([20_000, 60_000, 100_000])
        rules = [CorrelationRule.from_dict({**r.to_dict(), "window": window}) for r in DEFAULT_RULES]
        got = sorted((f.ts, f.rule_id, f.node_id, type(f).__name__) for f in analyze(rs, rules))
        want = []
        for rule in rules:
            want += brute_force_findings([r.to_dict() for r in rs], rule.to_dict(), window)
        assert got == sorted(want), seed


def test_9_determinism(criterion, tmp_path):
    criterion(9, "scenario-run byte-identical for every shipped scenario")
    files = sorted((ROOT / "scenarios").glob("*.json"))
    assert files
    for path in files:
        outs = []
        for run in ("a", "b"):
            out = tmp_path / path.stem / run
            proc = subprocess.run([sys.executable, "-m", "cuckoo_rpm", "scenario-run", str(path),
                                   "--out", str(out)], capture_output=True)
            assert proc.returncode == 0, (path.name, proc.stderr.decode())
            outs.append((proc.stdout, (out / "transcript.ndjson").read_bytes(),
                         (out / "final_states.json").read_bytes()))
        assert outs[0] == outs[1], path.name
