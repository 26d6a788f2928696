"""Compare the compiled and numpy accumulation kernels, and a full OE fit, on both backends.

Run: python benchmarks/bench_kernels.py [--rows 140000] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from oewt import kernels, popgen, propensity, sampling
from oewt.datamodel import with_overlap


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=140_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(args.rows), rng.normal(size=(args.rows, 4))])
    theta = rng.normal(scale=0.3, size=5)
    a = np.ones(args.rows)
    b = rng.uniform(0, 40, size=args.rows)

    print(f"active backend: {kernels.BACKEND}")
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    times = {}
    for be in backends:
        t = timeit.timeit(lambda: kernels.logistic_accumulate(X, theta, a, b, backend=be), number=args.repeat)
        times[be] = t / args.repeat
        print(f"accumulate  {be:7s} {1e3 * times[be]:8.2f} ms / call ({args.rows} rows)")

    pop = popgen.generate_population(popgen.PopulationSpec(200_000, 0.3, 1))
    pop, _ = sampling.with_true_propensities(pop, sampling.BigDesignSpec(min(args.rows, 190_000)))
    B = sampling.draw_poisson(pop, pop.pi_b_true, 1)
    A = with_overlap(sampling.draw_pps_systematic(pop, sampling.PPSDesignSpec(), 2), B)
    for be in backends:
        opts = propensity.FitOptions(method="OE", backend=be)
        t = timeit.timeit(lambda: propensity.fit("OE", A, B, opts), number=max(1, args.repeat // 4))
        print(f"OE fit      {be:7s} {1e3 * t / max(1, args.repeat // 4):8.2f} ms / fit  (N_B={B.n})")
    if len(times) == 2:
        print(f"kernel speedup: {times['python'] / times['cython']:.1f}x")


if __name__ == "__main__":
    main()
