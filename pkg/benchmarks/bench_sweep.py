"""Time the sweep kernel with numba and with the pure-numpy fallback.

    python benchmarks/bench_sweep.py [--buses 200] [--steps 96] [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from amodgrid import _accel
from amodgrid.pdn import BALANCED, Bus, Link, Pdn, feeder_arrays
from amodgrid.powerflow.sweep import build_injections, sweep_arrays


def random_tree(n_bus: int, n_t: int, seed: int = 0) -> Pdn:
    rng = np.random.default_rng(seed)
    z = np.array([[0.020 + 0.040j, 0.006 + 0.012j, 0.006 + 0.012j],
                  [0.006 + 0.012j, 0.020 + 0.040j, 0.006 + 0.012j],
                  [0.006 + 0.012j, 0.006 + 0.012j, 0.020 + 0.040j]]) / max(1.0, n_bus / 20)
    buses = [Bus(k) for k in range(n_bus)]
    links = [Link(int(rng.integers(max(0, k - 5), k)), k, z) for k in range(1, n_bus)]
    scale = 1.0 / n_bus
    loads = {k: scale * rng.uniform(0.2, 1.0, (n_t, 3)) * np.exp(0.3j) for k in range(1, n_bus)}
    return Pdn("bench", buses, links, n_t, BALANCED, loads)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--buses", type=int, default=200)
    ap.add_argument("--steps", type=int, default=96)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    pdn = random_tree(args.buses, args.steps)
    fa = feeder_arrays(pdn)
    vref = np.tile(BALANCED, (args.steps, 1))
    sload = build_injections(pdn).consumption(pdn)

    paths = {"numpy": False}
    if _accel.HAVE_NUMBA:
        sweep_arrays(fa, vref, sload, use_numba=True)          # compile outside the timing
        paths["numba"] = True
    results = {}
    for name, flag in paths.items():
        t = timeit.repeat(lambda: sweep_arrays(fa, vref, sload, use_numba=flag),
                          number=1, repeat=args.repeat)
        results[name] = min(t)
    print(f"{args.buses} buses x {args.steps} steps, best of {args.repeat}")
    for name, sec in results.items():
        print(f"  {name:6s} {sec * 1e3:9.2f} ms")
    if "numba" in results:
        v1 = sweep_arrays(fa, vref, sload, use_numba=True)[0]
        v2 = sweep_arrays(fa, vref, sload, use_numba=False)[0]
        print(f"  speedup {results['numpy'] / results['numba']:.1f}x, "
              f"max |dv| {np.max(np.abs(v1 - v2)):.1e}")


if __name__ == "__main__":
    main()
