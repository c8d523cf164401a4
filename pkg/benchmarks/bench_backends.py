"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_backends.py [--system lotka_volterra] [--repeat 3]

Reports seconds per training epoch on the system's full dataset and per
rolling forecast over the test horizon, for the baseline and a layer-1
injected network, and checks that both backends agree. Rollout differences
are shown over the first 1000 steps and over the full horizon: an untrained
network's rollout is usually unstable, so last-bit differences between the two
tanh implementations grow exponentially late in the horizon.
"""

import argparse
import time

import numpy as np

from pgnn import _fallback
from pgnn.dataset import build_dataset, epoch_order, split
from pgnn.integrator import simulate
from pgnn.network import BASELINE, InjectionConfig, features_for, init_params, pack, standard_sizes, unpack
from pgnn.systems import TERMS, get_system

try:
    from pgnn import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_epoch(mod, net, X, Y, F, order, repeat):
    def once():
        theta = pack(net)
        m, v = np.zeros_like(theta), np.zeros_like(theta)
        res = mod.train_epoch(unpack(net, theta), theta, m, v, 0, X, Y, F, order, 32,
                              1e-3, 0.9, 0.999, 1e-7)
        return res[0], theta
    return best_of(once, repeat)


def bench_rollout(mod, net, term, x0, h, n, repeat):
    return best_of(lambda: mod.rollout(net, term, x0, h, n, 1e6), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--system", default="lotka_volterra")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; nothing to compare")
        return 1

    spec = get_system(args.system)
    dd = spec.defaults
    trajs = [simulate(spec.rhs, ic, 0.0, dd.h, dd.T) for ic in dd.train_ics]
    data = build_dataset(spec, trajs)
    sp = split(data, 0.2, 0)
    order = epoch_order(sp.train_idx, 0, 0).astype(np.int64)
    n_roll = int(round(dd.T / dd.h))
    x0 = np.asarray(dd.test_ic, dtype=float)

    print(f"{args.system}: {len(data)} pairs, {len(order)} training, rollout {n_roll} steps")
    print(f"{'config':<14}{'task':<10}{'numpy s':>10}{'cython s':>10}{'speedup':>9}"
          f"{'max diff':>11}{'full diff':>11}")
    for inj in (BASELINE, InjectionConfig(spec.terms[0], 1)):
        net = init_params(standard_sizes(spec.dim), "tanh", inj, 0)
        F = features_for(net, data.X)
        term = TERMS[inj.term] if inj.layer else None
        tp, (lp, thp) = bench_epoch(_fallback, net, data.X, data.Y, F, order, args.repeat)
        tc, (lc, thc) = bench_epoch(_kernels, net, data.X, data.Y, F, order, args.repeat)
        print(f"{inj.label:<14}{'epoch':<10}{tp:>10.4f}{tc:>10.4f}{tp / tc:>9.1f}"
              f"{np.abs(thp - thc).max():>11.2e}{'':>11}")
        tp, (sp_, _) = bench_rollout(_fallback, net, term, x0, dd.h, n_roll, args.repeat)
        tc, (sc, _) = bench_rollout(_kernels, net, term, x0, dd.h, n_roll, args.repeat)
        n = min(len(sp_), len(sc))
        gap = np.abs(np.asarray(sp_)[:n] - np.asarray(sc)[:n]).max(axis=1)
        print(f"{inj.label:<14}{'rollout':<10}{tp:>10.4f}{tc:>10.4f}{tp / tc:>9.1f}"
              f"{gap[:1001].max():>11.2e}{gap.max():>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
