"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from spikeflow.kernels import compiled_available, get_backend


def cases(rng):
    x = rng.standard_normal((16, 32, 34, 34)).astype(np.float32)
    cols = rng.standard_normal((16, 32, 32, 32, 3, 3)).astype(np.float32)
    drive = rng.uniform(0, 0.4, (5, 200_000)).astype(np.float32)
    n = 200_000
    ev = (
        rng.uniform(0, 63, n),
        rng.uniform(0, 63, n),
        rng.uniform(0, 9, n),
        rng.choice([-1.0, 1.0], n),
    )
    return x, cols, drive, ev


def bench(backend, data, repeat):
    k = get_backend(backend)
    x, cols, drive, ev = data
    h, s = k.lif_forward(drive, 2.0, 0.1, 0.0)
    g = np.ones_like(s)
    jobs = {
        "im2col 3x3": lambda: k.im2col(x, 3, 3, 1, 0, 32, 32),
        "col2im 3x3": lambda: k.col2im(cols, 34, 34, 1, 0),
        "lif_forward": lambda: k.lif_forward(drive, 2.0, 0.1, 0.0),
        "lif_backward": lambda: k.lif_backward(g, h, s, 2.0, 0.1, 0.0, 2.0, False),
        "deposit_events": lambda: k.deposit_events(np.zeros((10, 64, 64), np.float32), *ev),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in jobs.items()}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    data = cases(np.random.default_rng(0))
    py = bench("python", data, args.repeat)
    if not compiled_available():
        print("compiled extension not built; python timings only")
        for name, t in py.items():
            print(f"{name:<16} python {t * 1e3:9.2f} ms")
        return
    cy = bench("cython", data, args.repeat)
    print(f"{'kernel':<16} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name in py:
        print(f"{name:<16} {py[name] * 1e3:10.2f} {cy[name] * 1e3:10.2f} {py[name] / cy[name]:8.1f}x")


if __name__ == "__main__":
    main()
