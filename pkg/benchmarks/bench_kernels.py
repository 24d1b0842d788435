"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from curiousfl import kernels


def cases(rng):
    g = rng.standard_normal((30, 200))
    d2 = ((g[:, None] - g[None]) ** 2).sum(-1)
    return {
        "hungarian 64x64": (lambda b, c=rng.random((64, 64)): b.hungarian(c)),
        "krum_scores 30 clients": (lambda b: b.krum_scores(d2, 26)),
        "single_linkage 30 points": (lambda b, d=np.sqrt(d2): b.single_linkage(d, float(np.median(d)))),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled kernels not built; timing the Python fallback only")
    print(f"{'kernel':<26}" + "".join(f"{name:>12}" for name in backends) + "     speedup")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {name: min(timeit.repeat(lambda b=b: fn(b), number=1, repeat=args.repeat)) * 1e3
                 for name, b in backends.items()}
        speed = f"{times['python'] / times['cython']:10.1f}x" if "cython" in times else ""
        print(f"{label:<26}" + "".join(f"{t:10.3f}ms" for t in times.values()) + speed)


if __name__ == "__main__":
    main()
