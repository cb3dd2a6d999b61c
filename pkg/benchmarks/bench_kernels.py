"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the toy CSCDNet at 64x64 with batch 8 (both branches stacked).
"""

import argparse
import timeit

import numpy as np

from sscd import kernels


def cases(rng):
    f1 = rng.standard_normal((8, 64, 8, 8)).astype(np.float32)
    f2 = rng.standard_normal((8, 64, 8, 8)).astype(np.float32)
    g = rng.standard_normal((8, 81, 8, 8)).astype(np.float32)
    x = rng.standard_normal((16, 32, 32, 16)).astype(np.float32)
    rows = rng.standard_normal((16 * 32 * 32, 9 * 16)).astype(np.float32)
    p = rng.standard_normal((16, 16, 32, 32)).astype(np.float32)
    return {
        "correlation_forward d=4": lambda m: m.correlation_forward(f1, f2, 4),
        "correlation_backward d=4": lambda m: m.correlation_backward(g, f1, f2, 4),
        "im2row 3x3": lambda m: m.im2row(x, 3, 3, 1, 1),
        "row2im 3x3": lambda m: m.row2im(rows, 16, 32, 32, 16, 3, 3, 1, 1),
        "maxpool_forward 2x2": lambda m: m.maxpool_forward(p, 2, 2),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = ["python"] + (["compiled"] if kernels.compiled_available() else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases(rng).items():
        times = []
        for b in backends:
            mod = kernels.backend_module(b)
            fn(mod)  # warm up
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        line = f"{name:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
