"""Time the compiled kernel against the pure-Python fallback.

Both backends run the same seeded segment first and must end in the same
state; the compiled one then runs a longer segment for a steadier rate.

    python3 benchmarks/bench_kernels.py --n 1000 --m-python 200000 --m-compiled 10000000
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from meanbias import kernels
from meanbias.processes import parse_spec
from meanbias.rng import make_bit_generator

PROCESSES = ("one-choice", "two-choice", "mean-thinning", "twinning", "quantile:0.5", "one-plus-beta:0.5")


def _time(spec, n: int, m: int, seed: int, pure: bool):
    params = kernels.KernelParams.from_spec(spec, n)
    sim = kernels.simulator(np.zeros(n, dtype=np.int64), 0, 0, 0, params, make_bit_generator(seed), pure=pure)
    start = time.perf_counter()
    sim.advance(m)
    return time.perf_counter() - start, sim


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--m-python", type=int, default=200_000)
    parser.add_argument("--m-compiled", type=int, default=10_000_000)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    if kernels.compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    print(f"n={args.n}  python segment m={args.m_python}  compiled segment m={args.m_compiled}")
    print(f"{'process':<20}{'python ns/alloc':>17}{'compiled ns/alloc':>19}{'speedup':>10}  same state")
    for text in PROCESSES:
        spec = parse_spec(text)
        t_py, py = _time(spec, args.n, args.m_python, args.seed, pure=True)
        _, short = _time(spec, args.n, args.m_python, args.seed, pure=False)
        same = np.array_equal(py.loads(), short.loads()) and py.samples == short.samples
        t_c, _ = _time(spec, args.n, args.m_compiled, args.seed, pure=False)
        ns_py = 1e9 * t_py / args.m_python
        ns_c = 1e9 * t_c / args.m_compiled
        print(f"{text:<20}{ns_py:>17.1f}{ns_c:>19.1f}{ns_py / ns_c:>9.0f}x  {same}")


if __name__ == "__main__":
    main()
