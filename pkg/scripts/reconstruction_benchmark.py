"""Compounding and gap-filling cost and error on the sphere phantom.

Sweeps voxel spacing and thread count; every run reconstructs with the
true calibration so the error isolates the compounding and filling steps.

    python scripts/reconstruction_benchmark.py --spacing 0.5 1 2 --threads 1 4
"""
import argparse
import sys
import time

import numpy as np

from usrecon.compounding import compound
from usrecon.datasets import probe_truth, sphere_dataset
from usrecon.gapfill import GapFillConfig, fill_gaps, hull_mask


def errors(result, va, idx):
    truth = result.truth_in_tracker(va.voxel_centers(idx))
    err = np.abs(va.values[idx] - truth)
    return float(err.mean()), float(np.mean(err <= 5) * 100)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--frames", type=int, default=100, help="B-scans in the sweep (count)")
    ap.add_argument("--size", type=int, default=128, help="frame width and height (px)")
    ap.add_argument("--pixel", type=float, default=0.25, help="pixel size (mm)")
    ap.add_argument("--spacing", type=float, nargs="+", default=[0.5, 1.0, 2.0], help="voxel size (mm)")
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 4], help="compounding workers (count)")
    ap.add_argument("--method", default="avg-cube", choices=("avg-cube", "vnn"))
    ap.add_argument("--blocks", type=int, default=1, help="gap-fill slabs (count)")
    args = ap.parse_args(argv)

    result = sphere_dataset(probe_truth(args.pixel), n=args.frames, size=(args.size, args.size))
    seq = result.sequence
    print(f"{'spacing':>7} {'thr':>3} {'voxels':>10} {'compound_s':>10} {'fill_s':>7} "
          f"{'gaps':>8} {'mae_hit':>8} {'mae_all':>8} {'within5%':>8}")
    for spacing in args.spacing:
        for threads in args.threads:
            t0 = time.perf_counter()
            va = compound(seq, spacing=spacing, threads=threads)
            t1 = time.perf_counter()
            mask = hull_mask(seq, va)
            filled = fill_gaps(va, mask, GapFillConfig(method=args.method, n_blocks=args.blocks))
            t2 = time.perf_counter()
            hit = np.flatnonzero(va.contributions > 0)
            mae_hit, _ = errors(result, va, hit)
            mae_all, within = errors(result, filled, np.flatnonzero(mask & (filled.values > 0)))
            gaps = int(np.sum(mask & (va.contributions == 0)))
            print(f"{spacing:7.2f} {threads:3d} {va.size:10d} {t1 - t0:10.2f} {t2 - t1:7.2f} "
                  f"{gaps:8d} {mae_hit:8.3f} {mae_all:8.3f} {within:8.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
