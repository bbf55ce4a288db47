"""Time the numba and pure-numpy paths of the two hot kernels.

    python3 benchmarks/bench_kernels.py [--rows N] [--pulses N] [--repeat R]

Batch rate evaluation is what the optimiser's coarse grid calls, a single
scalar evaluation is what each Nelder-Mead step calls, and the tally is the
Monte Carlo inner loop. Both backends are checked for agreement
before timing. Run with BIASDECOY_DISABLE_NUMBA=1 to time numpy alone.
"""

import argparse
import time

import numpy as np

from biasdecoy import _accel
from biasdecoy import _kernels as K
from biasdecoy import montecarlo as mc
from biasdecoy.channel import ChannelParams
from biasdecoy.decoy import ProtocolParams

ARGS = (6e9, 0.1, 1.7e-6, 0.033, 1.16, 5.0, 1e-7)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def rows(n):
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(4), n)
    return np.column_stack([np.full(n, 0.479), rng.uniform(0.005, 0.45, n), rng.uniform(0.5, 1, n), w])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--pulses", type=int, default=4_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()

    backends = ["numba", "numpy"] if _accel.USE_NUMBA else ["numpy"]
    X = rows(a.rows)
    p = ProtocolParams.from_fractions(0.479, 0.1, 0.9, 0.7, 0.1, 0.1, 0.1, 1.0)
    ch = ChannelParams(0.1, 1.7e-6, 0.033)

    # warm the jit caches and check agreement
    ref = {b: K.biased_rate_batch(X[:100], *ARGS, backend=b) for b in backends}
    if len(ref) == 2:
        np.testing.assert_allclose(ref["numba"], ref["numpy"], rtol=1e-9, atol=1e-300)
        c1 = mc.simulate(p, ch, seed=0, n_pulses=100_000, backend="numba")
        c2 = mc.simulate(p, ch, seed=0, n_pulses=100_000, backend="numpy")
        assert np.array_equal(c1.tallies, c2.tallies)

    print(f"{'kernel':<28}{'backend':<8}{'seconds':>10}{'per item':>14}")
    results = {}
    for b in backends:
        t = best_of(lambda: K.biased_rate_batch(X, *ARGS, backend=b), a.repeat)
        results[("batch", b)] = t
        print(f"{'biased_rate_batch':<28}{b:<8}{t:>10.4f}{t / a.rows * 1e6:>11.2f} us")
    row = tuple(X[0])
    scalar = {"numba": K.biased_rate, "numpy": _accel.py_func(K.biased_rate)}
    n_scalar = 2000
    for b in backends:
        fn = scalar[b]
        t = best_of(lambda: [fn(*row, *ARGS) for _ in range(n_scalar)], a.repeat)
        results[("scalar", b)] = t
        print(f"{'biased_rate (one point)':<28}{b:<8}{t:>10.4f}{t / n_scalar * 1e6:>11.2f} us")
    for b in backends:
        t = best_of(lambda: mc.simulate(p, ch, seed=1, n_pulses=a.pulses, backend=b), a.repeat)
        results[("mc", b)] = t
        print(f"{'simulate (rng + tally)':<28}{b:<8}{t:>10.4f}{t / a.pulses * 1e9:>11.2f} ns")
    if len(backends) == 2:
        for k in ("batch", "scalar", "mc"):
            print(f"speed-up {k}: x{results[(k, 'numpy')] / results[(k, 'numba')]:.2f}")


if __name__ == "__main__":
    main()
