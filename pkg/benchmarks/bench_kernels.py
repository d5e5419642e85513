"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from cropheight import kernels
from cropheight.farmgen import FarmSpec, generate_farm
from cropheight.groundheight import sample_triples
from cropheight.scansim import Scene


def cases():
    scene = Scene.from_farm(generate_farm(FarmSpec(height_range=0.5, seed=3)))
    rng = np.random.default_rng(0)
    az = np.radians(np.arange(0.0, 360.0, 0.2))
    el = np.radians(np.linspace(-15.0, 15.0, 16))
    a, e = np.meshgrid(az, el)
    a, e = a.ravel(), e.ravel()
    dirs = np.column_stack([np.sin(e), np.cos(e) * np.sin(a), -np.cos(e) * np.cos(a)])
    origin = np.array([15.0, 15.0, 15.0])

    pts = rng.normal(size=(20000, 3)) * [5.0, 5.0, 0.05]
    samples = sample_triples(len(pts), 500, rng)

    return {
        f"cast_rays ({len(dirs)} rays)": lambda mod: scene.cast(origin, dirs, 100.0, mod),
        f"ransac_counts ({len(pts)} pts x {len(samples)} triples)":
            lambda mod: mod.ransac_counts(pts, samples, 0.05),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; timing the fallback only")
    for name, fn in cases().items():
        best = {}
        for label, mod in impls.items():
            best[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        line = "  ".join(f"{k} {1000 * v:9.2f} ms" for k, v in best.items())
        if len(best) == 2:
            line += f"  speedup x{best['python'] / best['compiled']:.1f}"
        print(f"{name:45s} {line}")


if __name__ == "__main__":
    main()
