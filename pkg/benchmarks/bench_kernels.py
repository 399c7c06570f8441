"""Timing comparison of the compiled kernels against their numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--repeats 50]

Each kernel is timed on training-shaped inputs (batch 128, hidden 512) after
a warmup pass so JIT compilation never lands in the measured region.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from emovote import kernels


def timeit(fn, args, repeats: int) -> float:
    fn(*args)  # warmup (also triggers compilation for the jit path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def make_cases(rng):
    b, t, d, c = 128, 30, 512, 8
    x = rng.standard_normal((b * t, d)).astype(np.float32)
    logits = rng.standard_normal((b, c)).astype(np.float32)
    probs = kernels.softmax_fwd_numpy(logits)
    dy = rng.standard_normal((b, c)).astype(np.float32)
    gain = np.ones(d, dtype=np.float32)
    bias = np.zeros(d, dtype=np.float32)
    gly = rng.standard_normal((b * t, d)).astype(np.float32)
    _, xhat, rstd = kernels.layernorm_fwd_numpy(x, gain, bias, 1e-5)
    p = rng.standard_normal((d, d)).astype(np.float32)
    g = rng.standard_normal((d, d)).astype(np.float32)
    ref = rng.integers(0, 50, size=400).astype(np.int64)
    hyp = rng.integers(0, 50, size=380).astype(np.int64)

    def adam_args():
        # flat views, matching how the optimizer calls the kernel
        return (p.copy().reshape(-1), g.reshape(-1), np.zeros(p.size, np.float32),
                np.zeros(p.size, np.float32), 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001)

    return [
        ("softmax_fwd", (logits,), None),
        ("softmax_bwd", (probs, dy), None),
        ("layernorm_fwd", (x, gain, bias, 1e-5), None),
        ("layernorm_bwd", (gly, xhat, rstd, gain), None),
        ("adam_step", None, adam_args),
        ("levenshtein", (ref, hyp), None),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = make_cases(rng)
    print(f"numba available: {kernels.HAVE_NUMBA}")
    print(f"{'kernel':<16} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for name, fixed_args, args_factory in cases:
        np_fn = getattr(kernels, f"{name}_numpy")
        call_args = fixed_args if fixed_args is not None else args_factory()
        t_np = timeit(np_fn, call_args, args.repeats)
        if kernels.HAVE_NUMBA:
            nb_fn = getattr(kernels, f"{name}_numba")
            call_args = fixed_args if fixed_args is not None else args_factory()
            t_nb = timeit(nb_fn, call_args, args.repeats)
            print(f"{name:<16} {1e3 * t_np:>12.3f} {1e3 * t_nb:>12.3f} {t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<16} {1e3 * t_np:>12.3f} {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
