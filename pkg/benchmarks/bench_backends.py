"""Compare the numba and pure-numpy kernel backends.

Runs the two hot kernels (cosine-matrix backpropagation and the dense
AdamW update) at several sizes and reports per-call wall time for each
backend.  The backend is chosen at import time from XLINGCL_BACKEND, so
this script re-executes itself once per backend in a subprocess.

Usage: python3 benchmarks/bench_backends.py
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

SIZES_COSINE = [(16, 16, 32), (64, 64, 32), (128, 128, 64)]
SIZES_ADAMW = [(32, 4096), (32, 16384), (192, 8192)]
REPEATS = 30


def bench_one_backend():
    from xlingcl.backend import active_backend
    from xlingcl.kernels import adamw_update, cosine_backward

    rng = np.random.Generator(np.random.PCG64(0))
    results = {"backend": active_backend(), "cosine_backward": {}, "adamw_update": {}}

    for m, n, d in SIZES_COSINE:
        X = rng.normal(size=(m, d))
        Y = rng.normal(size=(n, d))
        nx = np.linalg.norm(X, axis=1)
        ny = np.linalg.norm(Y, axis=1)
        Xn, Yn = X / nx[:, None], Y / ny[:, None]
        S = Xn @ Yn.T
        dS = rng.normal(size=(m, n))
        cosine_backward(dS, S, Xn, Yn, 1.0 / nx, 1.0 / ny)  # warm up / compile
        t0 = time.perf_counter()
        for _ in range(REPEATS):
            cosine_backward(dS, S, Xn, Yn, 1.0 / nx, 1.0 / ny)
        per_call = (time.perf_counter() - t0) / REPEATS
        results["cosine_backward"][f"{m}x{n}x{d}"] = per_call

    for r, c in SIZES_ADAMW:
        w = rng.normal(size=(r, c))
        g = rng.normal(size=(r, c))
        m_ = np.zeros_like(w)
        v_ = np.zeros_like(w)
        adamw_update(w, g, m_, v_, 1, 1e-2, 0.9, 0.999, 1e-8, 0.01)
        t0 = time.perf_counter()
        for t in range(2, REPEATS + 2):
            adamw_update(w, g, m_, v_, t, 1e-2, 0.9, 0.999, 1e-8, 0.01)
        per_call = (time.perf_counter() - t0) / REPEATS
        results["adamw_update"][f"{r}x{c}"] = per_call

    return results


def main():
    if os.environ.get("_BENCH_CHILD"):
        print(json.dumps(bench_one_backend()))
        return

    rows = {}
    for backend in ("numpy", "numba"):
        env = dict(os.environ, XLINGCL_BACKEND=backend, _BENCH_CHILD="1")
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"{backend}: failed\n{proc.stderr}", file=sys.stderr)
            continue
        rows[backend] = json.loads(proc.stdout.splitlines()[-1])

    for kernel in ("cosine_backward", "adamw_update"):
        print(f"\n{kernel} (seconds per call)")
        sizes = list(next(iter(rows.values()))[kernel])
        header = f"{'size':>14}" + "".join(f"{b:>12}" for b in rows)
        print(header)
        for size in sizes:
            line = f"{size:>14}"
            for b in rows:
                line += f"{rows[b][kernel][size]:>12.2e}"
            if len(rows) == 2:
                ratio = rows["numpy"][kernel][size] / rows["numba"][kernel][size]
                line += f"   numpy/numba = {ratio:.2f}x"
            print(line)


if __name__ == "__main__":
    main()
