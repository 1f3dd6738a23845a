"""Regenerate the packaged engine fuel map (Willans-line model).

    python scripts/make_engine_map.py > src/hevtl/data/engine_map_v1.csv

The output is committed; the package only ever reads the file, so
changing constants here requires bumping the version tag.
"""
import numpy as np

LHV = 42600.0  # J/g, gasoline
TORQUES = np.arange(0.0, 115.0 + 1e-9, 5.0)
SPEEDS = np.arange(1000.0, 4500.0 + 1e-9, 250.0)
LINE = [(0.0, 1000.0), (115.0, 4200.0)]


def indicated_efficiency(rpm):
    return 0.38 - 0.08 * ((rpm - 3000.0) / 2500.0) ** 2


def friction_torque(rpm):
    return 7.0 + 0.9 * (rpm / 1000.0) ** 2


def fuel_gps(torque, rpm):
    if torque == 0.0:
        return 0.0
    w = rpm * 2.0 * np.pi / 60.0
    return (torque * w / indicated_efficiency(rpm) + friction_torque(rpm) * w) / LHV


def main():
    print("# hevtl engine fuel map")
    print("# version: 1")
    print("# units: torque Nm (rows), speed rpm (columns), fuel g/s")
    print("# optimal_line: " + " ".join(f"{t:g}:{w:g}" for t, w in LINE))
    print("torque_nm," + ",".join(f"{w:g}" for w in SPEEDS))
    for t in TORQUES:
        row = [f"{fuel_gps(t, w):.6f}" for w in SPEEDS]
        print(f"{t:g}," + ",".join(row))


if __name__ == "__main__":
    main()
