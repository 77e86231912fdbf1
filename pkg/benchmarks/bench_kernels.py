"""Benchmark the compiled derivative kernel against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Times the fused (dotd, ddotd) algebra from precomputed means, which is the
work every minibatch iteration repeats, plus the end-to-end block_derivs
call (mean inversion included) on block sizes matching the optimizer's
working set. Family at its conventional link.
"""
import argparse
import time

import numpy as np

from gmfkit import kernels
from gmfkit.families import canonical_link, family
from gmfkit.kernels import _ref

BLOCKS = [(100, 20), (500, 100), (2000, 200)]
FAMILIES = ["gaussian", "poisson", "bernoulli", "neg_binomial"]


def _instance(fam, lnk, shape, rng):
    if fam.kind == "bernoulli":
        mu = rng.uniform(0.1, 0.9, shape)
    else:
        mu = rng.uniform(0.5, 6.0, shape)
    y = fam.sample(mu, rng=rng)
    return y, mu, lnk.eval(mu), rng.uniform(0.5, 2.0, shape)


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    if kernels.IMPL != "compiled":
        print("compiled kernels unavailable; timing the numpy path against itself")
    print(f"active implementation: {kernels.IMPL}")
    header = (f"{'family':<14}{'block':<12}{'algebra C':>10}{'algebra py':>12}"
              f"{'speedup':>9}{'end-to-end':>12}")
    print(header)
    print("-" * len(header))
    for fam_name in FAMILIES:
        fam = family(fam_name, 2.0)
        lnk = canonical_link(fam)
        fc = kernels.FAMILY_CODES[fam.kind]
        lc = kernels.LINK_CODES[lnk.kind]
        alpha = getattr(fam, "nb_shape", 1.0)
        for shape in BLOCKS:
            y, mu, eta, w = _instance(fam, lnk, shape, rng)
            yf, muf, wf = y.ravel(), mu.ravel(), w.ravel()
            t_c = _time(lambda: kernels._impl.derivs_from_mu(
                fc, lc, yf, muf, wf, 1.0, alpha), args.repeats)
            t_py = _time(lambda: _ref.derivs_from_mu(
                fc, lc, yf, muf, wf, 1.0, alpha), args.repeats)
            t_e2e = _time(lambda: kernels.block_derivs(fam, lnk, y, eta, w, 1.0),
                          args.repeats)
            print(f"{fam_name:<14}{str(shape):<12}"
                  f"{t_c * 1e6:>8.1f}us{t_py * 1e6:>10.1f}us{t_py / t_c:>8.1f}x"
                  f"{t_e2e * 1e6:>10.1f}us")


if __name__ == "__main__":
    main()
