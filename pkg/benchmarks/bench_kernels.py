"""Compare the numba kernels against the pure-NumPy fallback.

Part 1 times the paired kernels in one process (both callables live in
``REGISTRY``). Part 2 runs a whole intra + inter encode in two child processes,
one with ``HYBRIDVC_DISABLE_NUMBA=1``, and checks the bitstreams are identical.

    python3 benchmarks/bench_kernels.py [--size 128x96] [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

CHILD = r"""
import json, sys, time
import numpy as np
from hybridvc.codec.coder import CodecConfig, encode_sequence
from hybridvc.codec.frame import Frame
w, h = map(int, sys.argv[1].split("x"))
rng = np.random.default_rng(0)
yy, xx = np.mgrid[0:h, 0:w]
base = (128 + 60 * np.sin(xx / 9.0) * np.cos(yy / 13.0)).astype(np.int32)
frames = []
for s in range(2):
    y = np.clip(np.roll(base, (s, 2 * s), (0, 1)) + rng.integers(-6, 7, base.shape), 0, 255)
    frames.append(Frame(y, y[::2, ::2] // 2 + 64, 192 - y[::2, ::2] // 2))
t = time.perf_counter()
res = encode_sequence(frames, CodecConfig(qp=32, gop="ipp"))
print(json.dumps({"seconds": time.perf_counter() - t, "bytes": res.bitstream.hex()}))
"""


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases():
    from hybridvc.codec import deblock, motion  # noqa: F401 - fills REGISTRY

    rng = np.random.default_rng(1)
    ref = rng.integers(0, 256, (288, 352)).astype(np.int64)
    cur = np.ascontiguousarray(ref[100:116, 120:136])
    plane = rng.integers(0, 256, (288, 352)).astype(np.int64)
    return {
        "full_search": (cur, ref, 120, 100, 16),
        "deblock_plane": (plane, 37),
    }


def run_kernels(repeat):
    from hybridvc._accel import REGISTRY, USE_NUMBA

    if not USE_NUMBA:
        print("numba disabled: kernel comparison skipped")
        return
    print(f"{'kernel':<16}{'numpy (ms)':>12}{'numba (ms)':>12}{'speed-up':>10}  same")
    for name, args in kernel_cases().items():
        py, jit = REGISTRY[name]
        t_py = best_of(lambda: py(*args), repeat)
        t_jit = best_of(lambda: jit(*args), repeat)
        same = np.array_equal(np.asarray(py(*args), dtype=object), np.asarray(jit(*args), dtype=object))
        print(f"{name:<16}{1e3 * t_py:>12.2f}{1e3 * t_jit:>12.2f}{t_py / t_jit:>9.1f}x  {same}")


def run_child(size, disable):
    env = dict(os.environ)
    env["HYBRIDVC_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", CHILD, size], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", default="128x96")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    run_kernels(args.repeat)
    jit = run_child(args.size, False)
    jit = run_child(args.size, False)  # second run uses the on-disk JIT cache
    py = run_child(args.size, True)
    print(f"\nencode {args.size} I+P: numba {jit['seconds']:.2f}s, fallback {py['seconds']:.2f}s, "
          f"speed-up {py['seconds'] / jit['seconds']:.1f}x, identical bitstreams: {jit['bytes'] == py['bytes']}")


if __name__ == "__main__":
    main()
