"""Compiled vs pure-Python kernel timings, plus one end-to-end training step.

    python benchmarks/bench_kernels.py [--repeat N] [--json]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from sgnet import _pykernels, kernels


def cases(rng):
    """(name, callable(impl)) at the sizes the default MNIST model uses."""
    x1 = rng.standard_normal((64, 30, 30, 1)).astype(np.float32)
    x2 = rng.standard_normal((64, 16, 16, 16)).astype(np.float32)
    act = rng.standard_normal((64, 28, 28, 16)).astype(np.float32)
    maps = rng.standard_normal((64, 30, 30)).astype(np.float32)
    pooled, argmax = _pykernels.maxpool_forward(act, 2, 2)
    cols = _pykernels.im2col(x2, 3, 3, 1)
    lap = rng.standard_normal((64, 64))
    lap = lap + lap.T
    return [
        ("im2col block1", lambda m: kernels.im2col(x1, 3, 3, 1, impl=m)),
        ("im2col block2", lambda m: kernels.im2col(x2, 3, 3, 1, impl=m)),
        ("col2im block2", lambda m: kernels.col2im(cols, x2.shape, 3, 3, 1, impl=m)),
        ("maxpool fwd", lambda m: kernels.maxpool_forward(act, 2, 2, impl=m)),
        ("maxpool bwd", lambda m: kernels.maxpool_backward(pooled, argmax, act.shape, impl=m)),
        ("patch extrema", lambda m: kernels.patch_extrema(maps, 6, False, 28, 28, impl=m)),
        ("jacobi 64x64", lambda m: kernels.jacobi_eigh(lap, 1e-12, 100, impl=m)),
    ]


STEP_SNIPPET = """
import timeit, numpy as np
from sgnet import kernels, nn
from sgnet.model import SgnConfig, SgnModel
m = SgnModel(SgnConfig())
x = np.random.default_rng(0).random((64, 28, 28, 1), dtype=np.float32)
y = np.arange(64) % 10
def step():
    logits, cache = m.forward(x, "train")
    m.backward(cache, nn.cross_entropy(logits, y)[1])
step()
print(kernels.BACKEND, min(timeit.repeat(step, number=1, repeat={repeat})))
"""


def train_step_time(pure: bool, repeat: int) -> float:
    env = dict(os.environ)
    env.pop("SGN_PURE_PYTHON", None)
    if pure:
        env["SGN_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True).stdout.split()
    return float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="emit JSON lines instead of a table")
    args = ap.parse_args(argv)

    impls = kernels.backends()
    if len(impls) < 2:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    rows = []
    for name, fn in cases(np.random.default_rng(0)):
        times = {m.BACKEND: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for m in impls}
        rows.append((name, times))
    step = {"python": train_step_time(True, args.repeat)}
    if len(impls) > 1:
        step["cython"] = train_step_time(False, args.repeat)
    rows.append(("train step (batch 64)", step))

    if not args.json:
        print(f"{'case':<24}{'python':>13}{'cython':>12}{'speedup':>9}")
    for name, times in rows:
        speedup = times["python"] / times["cython"] if "cython" in times else None
        if args.json:
            print(json.dumps({"case": name, **{f"{k}_s": v for k, v in times.items()}, "speedup": speedup}))
        else:
            cy = f"{1e3 * times['cython']:9.2f}" if "cython" in times else "      n/a"
            sp = f"{speedup:7.1f}x" if speedup else "     n/a"
            print(f"{name:<24}{1e3 * times['python']:10.2f} ms {cy} ms {sp}")


if __name__ == "__main__":
    main()
