"""Time the numpy and numba kernel implementations side by side.

    python benchmarks/bench_kernels.py [--repeat 5] [--boxes 2000]

JIT compilation happens in a warm-up call and is reported separately.
Both implementations are checked for identical results before timing.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sahiref import _kernels
from sahiref._kernels import IMPLEMENTATIONS, METRIC_IOU


def random_boxes(rng: np.random.Generator, n: int, extent: float = 1024.0) -> np.ndarray:
    xy = rng.uniform(0, extent - 32, size=(n, 2))
    wh = rng.uniform(2, 32, size=(n, 2))
    return np.hstack([xy, xy + wh])


def cases(n: int, seed: int):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, n)
    truths = random_boxes(rng, n // 2)
    classes = rng.integers(0, 3, size=n)
    truth_classes = rng.integers(0, 3, size=n // 2)
    overlaps = IMPLEMENTATIONS["numpy"]["pairwise_overlap"](boxes, truths, METRIC_IOU)
    pixels = rng.integers(0, 256, size=(512, 512), dtype=np.uint8)
    return {
        "pairwise_overlap": (boxes, truths, METRIC_IOU),
        "nms": (boxes, classes, 0.5, METRIC_IOU, False),
        "greedy_match": (overlaps, classes, truth_classes, np.arange(n // 2), 0.5),
        "upscale_nearest": (pixels, 1024, 1024),
    }


def best_of(fn, args, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--boxes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'jit ms':>10}")
    for name, call_args in cases(args.boxes, args.seed).items():
        ref = IMPLEMENTATIONS["numpy"][name](*call_args)
        t0 = time.perf_counter()
        got = IMPLEMENTATIONS["numba"][name](*call_args)
        jit = time.perf_counter() - t0
        if not np.array_equal(np.asarray(ref), np.asarray(got)):
            raise SystemExit(f"{name}: implementations disagree")
        t_np = best_of(IMPLEMENTATIONS["numpy"][name], call_args, args.repeat)
        t_nb = best_of(IMPLEMENTATIONS["numba"][name], call_args, args.repeat)
        print(f"{name:<18}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x{jit * 1e3:>10.1f}")


if __name__ == "__main__":
    main()
