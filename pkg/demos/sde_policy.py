"""When should the learning rate start to decay?

The averaged iteration behaves like an Ornstein-Uhlenbeck process whose
drift and noise are both scaled by the control u_t.  Running at full speed
until the phase-change point and annealing like 1/t afterwards beats both a
constant rate and 1/(1+t) annealing from the start.
"""

import numpy as np

from dkgm.sde import Policy, SdeParams, optimal_policy, phase_change_point, simulate_sde


def main():
    params = SdeParams(a=1.0, sigma=1.0, eta=0.1, x0=0.0, m0=1.0)
    t_star = phase_change_point(params)
    print(f"phase change at t* = {t_star:.6f} (0.5 ln 39 = {0.5 * np.log(39):.6f})")
    for t in (0.0, 1.0, t_star, 3.0, 10.0):
        print(f"  u({t:5.2f}) = {float(optimal_policy(params, t)):.4f}")

    policies = {
        "optimal": Policy.optimal(params),
        "constant": Policy.constant(1.0),
        "inverse_time": Policy("inverse_time"),
    }
    for name, policy in policies.items():
        res = simulate_sde(params, policy, 10.0, 1e-3, 4000, rng=0)
        print(f"{name:>12}: m_T = {res.m_T:.5f} +/- {res.stderr:.5f}")


if __name__ == "__main__":
    main()
