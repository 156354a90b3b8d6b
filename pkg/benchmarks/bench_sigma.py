"""Compare the compiled and pure-Python sigma-build kernels.

Usage: python benchmarks/bench_sigma.py [--orbitals 14] [--strings 100 200 300] [--repeat 3]

For each string-set size, reports operator setup time and the mean time of
one H_D application for every available backend, plus the max deviation
between backends (they must agree to round-off).
"""

import argparse
import time

import numpy as np

from csqd.cisolver import SubspaceOperator
from csqd.determinants import all_strings
from csqd.hamiltonian import random_hamiltonian
from csqd.kernels import available_backends


def bench(ham, strings, backend, repeat):
    t0 = time.perf_counter()
    op = SubspaceOperator(ham, strings, backend)
    setup = time.perf_counter() - t0
    v = np.random.default_rng(0).standard_normal(op.dim)
    op.apply_h(v)
    t0 = time.perf_counter()
    for _ in range(repeat):
        out = op.apply_h(v)
    return setup, (time.perf_counter() - t0) / repeat, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--orbitals", type=int, default=14)
    parser.add_argument("--electrons", type=int, default=3, help="electrons per spin")
    parser.add_argument("--strings", type=int, nargs="+", default=[100, 200, 300])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    ham = random_hamiltonian(args.orbitals, args.electrons, seed=1)
    pool = all_strings(args.orbitals, args.electrons)
    rng = np.random.default_rng(2)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}; {args.orbitals} orbitals, {args.electrons} electrons per spin")
    print(f"{'|D|':>6} {'dim':>8} " + " ".join(f"{b + ' setup':>14} {b + ' apply':>14}" for b in backends) + "  speedup  max|diff|")
    for n in args.strings:
        n = min(n, len(pool))
        strings = np.sort(rng.choice(pool, size=n, replace=False))
        rows, outs = [], {}
        for b in backends:
            setup, apply, out = bench(ham, strings, b, args.repeat)
            rows.append((setup, apply))
            outs[b] = out
        cells = " ".join(f"{s * 1e3:>12.2f}ms {a * 1e3:>12.2f}ms" for s, a in rows)
        speed = rows[-1][1] / rows[0][1] if len(rows) > 1 else float("nan")
        diff = max(float(np.abs(outs[b] - outs[backends[0]]).max()) for b in backends)
        print(f"{n:>6} {n * n:>8} {cells}  {speed:7.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
