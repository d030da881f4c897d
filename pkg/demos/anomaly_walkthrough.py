"""A high blood-pressure reading with and without corroborating home sensors.

Run: python3 demos/anomaly_walkthrough.py
"""

from cuckoo_rpm.anomaly import DEFAULT_RULES, SensorReading, analyze


def stream(motion):
    rs = [SensorReading("motion-1", "motion", motion, t) for t in range(0, 120_000, 10_000)]
    rs += [SensorReading("bp-cuff-1", "systolic_bp", 118, t + 5) for t in range(0, 120_000, 20_000)]
    rs.append(SensorReading("bp-cuff-1", "systolic_bp", 150, 90_000))
    return rs


def main():
    for label, motion in (("patient moving normally", True), ("patient motionless", False)):
        print(f"-- {label}")
        for finding in analyze(stream(motion), DEFAULT_RULES):
            print(f"   {type(finding).__name__} from {finding.node_id} at t={finding.ts} ({finding.rule_id})")


if __name__ == "__main__":
    main()
