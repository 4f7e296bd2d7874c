"""Monte-Carlo pairwise oracle agreement for the synthetic space model.

Item vectors are normalize(sqrt(rho) z + sqrt(1 - rho) u_f). Draws a target
and two candidates per sample and counts how often two spaces pick the same
candidate. Writes the curve into calibration.json.
"""
import json

import numpy as np

DIM = 64
SAMPLES = 200_000
GRID = [0.0, 0.3, 0.5, 0.7, 0.9, 1.0]


def agreement(rng, rho):
    z = rng.standard_normal((SAMPLES, 3, DIM))
    u = rng.standard_normal((SAMPLES, 3, 2, DIM))
    v = np.sqrt(rho) * z[:, :, None, :] + np.sqrt(1 - rho) * u
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    t, x, y = v[:, 0], v[:, 1], v[:, 2]
    pick = np.sum(y * t, -1) > np.sum(x * t, -1)
    return float(np.mean(pick[:, 0] == pick[:, 1]))


def main():
    rng = np.random.default_rng(123)
    with open("calibration.json") as f:
        fixture = json.load(f)
    fixture["agreement_curve"] = [[rho, round(agreement(rng, rho), 4)] for rho in GRID]
    with open("calibration.json", "w") as f:
        json.dump(fixture, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
