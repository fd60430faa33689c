"""Robbins-Monro root finding from noisy reconstructions.

We never see H(x) = 2x directly, only 2x plus Gaussian noise.  Stepping
against the residual with weights 1/k still lands on the root of H(x) = 1,
and averaging several reconstructions per step shrinks the wobble.
"""

import numpy as np

from dkgm.sa import Schedule, bounded_second_moment_probe, sa_solve, validate_schedule_a1


def oracle(x, rng):
    return 2.0 * x + rng.normal(0.0, 0.1, size=np.shape(x))


def main():
    print("root of H(x) = 1 is 0.5")
    for n_steps in (10, 100, 1000, 10_000):
        ends = [sa_solve(oracle, 1.0, 0.0, n_steps=n_steps, rng=seed)[0][0] for seed in range(20)]
        print(f"{n_steps:>6} steps: mean {np.mean(ends):.5f}, spread {np.std(ends):.5f}")

    ends = [sa_solve(oracle, 1.0, 0.0, n_steps=100, m=8, rng=seed)[0][0] for seed in range(20)]
    print(f"   100 steps, 8 draws per step: spread {np.std(ends):.5f}")

    for name, schedule in [("harmonic", Schedule.harmonic()),
                           ("k^-0.7", Schedule.custom(np.arange(1, 100_001) ** -0.7)),
                           ("k^-0.3", Schedule.custom(np.arange(1, 100_001) ** -0.3))]:
        diag = validate_schedule_a1(schedule, 100_000)
        print(f"schedule {name:>8}: decay exponent {diag.decay_exponent:.3f}, "
              f"step conditions {'hold' if diag.verdict else 'fail'}")

    grid = np.linspace(-2, 2, 9)[:, None]
    print(f"largest E|x_tilde - target|^2 on [-2, 2]: "
          f"{bounded_second_moment_probe(oracle, 1.0, grid, 500, 0):.3f}")


if __name__ == "__main__":
    main()
