"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both backends are imported directly, so the result does not depend on
MAGNN_PURE_PYTHON. Shapes mirror the default model at N=8, batch 32.
"""
import argparse
import timeit

import numpy as np

from magnn import _kernels_py

try:
    from magnn import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

CASES = [
    # name, B, C_in, L (padded), C_out, k, stride, dilation
    ("pyramid conv k=7 s=2", 256, 16, 174, 16, 7, 2, 1),
    ("pyramid lift 1x1", 256, 1, 168, 16, 1, 1, 1),
    ("tcn conv k=3 d=8", 256, 16, 47, 16, 3, 1, 8),
    ("tcn conv k=3 d=1 long", 256, 16, 170, 16, 3, 1, 1),
]


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(repeat=20):
    rng = np.random.default_rng(0)
    rows = []
    for name, b, c_in, lp, c_out, k, s, d in CASES:
        x = rng.normal(size=(b, c_in, lp))
        w = rng.normal(size=(c_out, c_in, k))
        out = _kernels_py.conv1d_forward(x, w, s, d)
        g = rng.normal(size=out.shape)
        for label, fn_name, args in (("fwd", "conv1d_forward", (x, w, s, d)),
                                     ("bwd", "conv1d_backward", (g, x, w, s, d))):
            t_py = _time(lambda: getattr(_kernels_py, fn_name)(*args), repeat)
            t_c = _time(lambda: getattr(_kernels_c, fn_name)(*args), repeat) if _kernels_c else float("nan")
            rows.append((f"{name} {label}", t_py, t_c))
    x = rng.normal(size=(256, 16, 168))
    t_py = _time(lambda: _kernels_py.maxpool1d_forward(x, 2, 2), repeat)
    t_c = _time(lambda: _kernels_c.maxpool1d_forward(x, 2, 2), repeat) if _kernels_c else float("nan")
    rows.append(("maxpool 2/2 fwd", t_py, t_c))
    a = rng.uniform(size=(40, 40))
    t_py = _time(lambda: _kernels_py.topk_mask(a, 8), repeat)
    t_c = _time(lambda: _kernels_c.topk_mask(a, 8), repeat) if _kernels_c else float("nan")
    rows.append(("top-k mask 40x40 tau=8", t_py, t_c))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'kernel':32s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, t_py, t_c in run(args.repeat):
        print(f"{name:32s} {1e3 * t_py:10.3f} {1e3 * t_c:10.3f} {t_py / t_c:8.2f}")


if __name__ == "__main__":
    main()
