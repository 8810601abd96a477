"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import timeit

import numpy as np

from salmrec import _kernels
from salmrec._kernels import _fallback


def _cases(rng):
    src = rng.random((256, 256, 3))
    grid = rng.uniform(-1.1, 1.1, (256, 256, 2))
    y, x = np.mgrid[0:128, 0:128] / 127 * 2 - 1
    fwd = np.stack([x, y], -1) * 1.15
    fwd[..., 0] += 0.04 * np.sin(3 * y)
    fwd[..., 1] += 0.04 * np.cos(2 * x)
    a = "".join(rng.choice(list("abcdefgh "), 400))
    b = "".join(rng.choice(list("abcdefgh "), 380))
    return {
        "bilinear_sample 256x256x3": lambda m: m.bilinear_sample(src, grid, False),
        "invert_field 128x128": lambda m: m.invert_field(fwd, 0.25, 50),
        "levenshtein 400x380": lambda m: m.levenshtein(a, b),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _kernels.BACKEND != "cython":
        raise SystemExit("compiled extension not available; build with `pip install -e . --no-build-isolation`")
    rows = []
    for name, fn in _cases(np.random.default_rng(0)).items():
        fast = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        slow = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=max(1, args.repeat // 2)))
        rows.append({"kernel": name, "cython_ms": fast * 1e3, "python_ms": slow * 1e3, "speedup": slow / fast})
        print(f"{name:28s} cython {fast * 1e3:9.2f} ms   python {slow * 1e3:9.2f} ms   x{slow / fast:6.1f}")
    print(json.dumps(rows))


if __name__ == "__main__":
    main()
