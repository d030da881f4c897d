"""Walk one patient and one medical professional through login, M1-M3 and vitals.

Prints each message's size and the state transitions on both sides.
Run: python3 demos/handshake_walkthrough.py
"""

import random

from cuckoo_rpm.filter_core import FilterParams
from cuckoo_rpm.handshake import (
    MpSession,
    PatientSession,
    build_ack,
    mp_handle_ack,
    mp_handle_m2,
    patient_handle_m1,
    patient_handle_m3,
    patient_login,
    receive_vitals,
    send_vitals,
)
from cuckoo_rpm.registry import PairReceiver, RaDirectory, Role


def main(seed=7):
    rng = random.Random(seed)
    ra = RaDirectory(rng, params={r: FilterParams(64) for r in Role})
    mp_pid, mp_keys = ra.register(Role.MEDICAL_PROFESSIONAL, "Dr Example", "mp-pw", username="doc")
    p_pid, p_keys = ra.register(Role.PATIENT, "Example Patient", "p-pw", username="pat")
    view = PairReceiver(ra.public_key)
    for role in Role:
        view.accept(ra.publish_pair(role))

    patient = PatientSession(p_pid, p_keys, ra_public=ra.public_key)
    mp = MpSession(mp_pid, mp_keys)

    m1 = patient_login(ra, patient, "pat", "p-pw", 100, rng)
    print(f"M1  RA -> patient   {len(m1.to_bytes())} bytes")
    m2 = patient_handle_m1(patient, m1, view, 101, rng)
    print(f"M2  patient -> MP   {len(m2.to_bytes())} bytes")
    m3 = mp_handle_m2(mp, m2, view, 102, rng)
    print(f"M3  MP -> patient   {len(m3.to_bytes())} bytes")
    patient_handle_m3(patient, m3, 103)
    mp_handle_ack(mp, build_ack(patient, 104, rng), 105)

    print("patient history:", " | ".join(patient.history))
    print("MP history:     ", " | ".join(mp.history))
    assert patient.shared_key == mp.shared_key
    print("shared key agreed:", hex(patient.shared_key))

    env = send_vitals(patient, [{"metric": "heart_rate", "value": 72}], 200, rng)
    print("vitals received:", receive_vitals(mp, env, 201))


if __name__ == "__main__":
    main()
