"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py --n 200000 --dims 3 6 --repeat 5
"""

import argparse
import timeit

import numpy as np

from cesbound import _kernels_py
from cesbound.rng import stream

try:
    from cesbound import _ckernels
except ImportError:
    _ckernels = None


def problem(n, d, n_params=4, seed=0):
    rng = stream(seed, d)
    x = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    g = g @ g.conj().T + np.eye(d)
    gammas = []
    for _ in range(n_params):
        h = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        gammas.append(h + h.conj().T)
    mus = rng.standard_normal((n_params, d)) + 1j * rng.standard_normal((n_params, d))
    return x, g, np.linalg.inv(g), gammas, mus


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200_000, help="rows per call")
    parser.add_argument("--dims", type=int, nargs="+", default=[3, 6, 12], help="augmented dimensions")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = {"python": _kernels_py}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the numpy fallback only")

    print(f"{'kernel':<16}{'d':>4}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for d in args.dims:
        x, g, ginv, gammas, mus = problem(args.n, d)
        for kernel, call in (("hermitian_forms", lambda k: k.hermitian_forms(x, g)),
                             ("score_pieces", lambda k: k.score_pieces(x, ginv, gammas, mus))):
            times = {name: best(lambda k=k: call(k), args.repeat) for name, k in backends.items()}
            ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
            cols = "".join(f"{1e3 * t:>10.1f}ms" for t in times.values())
            print(f"{kernel:<16}{d:>4}{cols}{ratio:>9.2f}x")


if __name__ == "__main__":
    main()
