"""Time the compiled loop kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each kernel is
called on the same inputs with both backends; the table reports the best
wall time of ``repeat`` runs and checks that the outputs agree.
"""

import argparse
import timeit

import numpy as np

from xblur import kernels
from xblur.deblur import neighbor_weights


def _cases(rng):
    img = rng.random((256, 256))
    edge = np.clip(np.add.outer(np.zeros(256), np.linspace(-3, 3, 256)) + 0.5, 0, 1)
    t = rng.random((256, 256))
    return [
        ("convolve_direct 256x256 * 7x7", "convolve_direct", (img, rng.random((7, 7)))),
        ("convolve_direct 128x128 * 15x15", "convolve_direct", (img[:128, :128].copy(), rng.random((15, 15)))),
        ("marching_squares 256x256", "marching_squares_segments", (edge + 0.01 * img, 0.5)),
        ("neighbor_prior 256x256", "neighbor_prior", (t, neighbor_weights(t.shape), 1e-8, 1.2)),
    ]


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, float):
        return abs(a - b) <= 1e-9 * max(1.0, abs(a))
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = {"python": kernels.get_backend("python")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup  agree")
    for label, fn, inputs in _cases(rng):
        times, outs = {}, {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            outs[name] = f(*inputs)
            times[name] = min(timeit.repeat(lambda: f(*inputs), number=1, repeat=args.repeat))
        row = f"{label:34s} " + " ".join(f"{1e3 * times[b]:10.2f}ms" for b in backends)
        if "cython" in times:
            agree = _same(outs["python"], outs["cython"])
            row += f"   {times['python'] / times['cython']:6.1f}x  {'yes' if agree else 'NO'}"
        print(row)


if __name__ == "__main__":
    main()
