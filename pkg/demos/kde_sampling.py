"""Sampling a kernel density estimate, and the likelihood bound it implies.

Drawing a KDE sample is "pick a data point, add Gaussian noise of width b".
The first two moments follow from the law of total variance.
"""

import numpy as np

from dkgm.kde import KdeModel, kde_density, kde_sample, likelihood_lower_bound


def main():
    rng = np.random.default_rng(0)
    data = np.concatenate([rng.normal(-2, 0.3, 40), rng.normal(1.5, 0.5, 60)])
    for b in (0.05, 0.3, 1.0):
        model = KdeModel(data, b)
        draws = kde_sample(model, rng, 50_000).ravel()
        grid = np.linspace(-6, 6, 4001)
        mass = np.trapezoid(kde_density(model, grid), grid)
        print(f"b={b:4.2f}: mass {mass:.5f}, var {draws.var():.4f} "
              f"(predicted {data.var() + b * b:.4f})")

    for b in (0.3, 0.01):
        bound = likelihood_lower_bound(data[0], data, b)
        print(f"b={b}: log p(x) = {bound.log_density:.3f}, sum of log terms = {bound.bound:.1f}, "
              f"every term <= 1: {bound.inequality_applies}")


if __name__ == "__main__":
    main()
