"""Register, revoke and deregister principals and watch the four verdicts.

Run: python3 demos/revocation_walkthrough.py
"""

import random

from cuckoo_rpm.filter_core import FilterParams
from cuckoo_rpm.registry import RaDirectory, Role, Verdict


def main(seed=11):
    # Four-bit fingerprints make a double hit likely enough to show escalation.
    ra = RaDirectory(random.Random(seed), params={r: FilterParams(4, 4, 4) for r in Role}, key_bits=256)
    pids = [ra.register(Role.MEDICAL_PROFESSIONAL, f"doctor {i}", "pw")[0] for i in range(12)]
    for pid in pids[:6]:
        ra.revoke(pid)
    ra.deregister(pids[-1])

    for pid in pids:
        verdict = ra.classify(pid)
        line = f"{pid.id_bytes.hex()[:12]}  {ra.status_of(pid).value:<8}  {verdict.value}"
        if verdict is Verdict.ESCALATE_TO_RA:
            ra.resolve_escalation(pid)
            line += f"  -> after RA reseed: {ra.classify(pid).value}"
        print(line)


if __name__ == "__main__":
    main()
