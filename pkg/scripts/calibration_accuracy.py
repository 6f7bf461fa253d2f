"""Spatial calibration error versus pixel noise and number of B-scans.

For each (noise, n) pair, several Prager-style plane sweeps are solved from
perturbed starts. Reports the worst translation and angle error and the mean
predicted standard error of z1, so the covariance can be checked against
the observed scatter.

    python scripts/calibration_accuracy.py --noise 0 0.5 1 2 --scans 40 80 160 --out calib_accuracy.csv
"""
import argparse
import csv
import sys

import numpy as np

from usrecon.calibration import ANGLE_NAMES, PARAM_NAMES, IdentifiabilityError, solve_lm
from usrecon.phantom import default_truth, perturb, plane_observations, prager_trajectory


def run_case(truth, noise, n_scans, seed, init_fraction):
    obs = plane_observations(truth, prager_trajectory(n_scans, seed=seed), pixel_noise=noise, seed=seed + 7919)
    rep = solve_lm(obs, perturb(truth, init_fraction, seed))
    err = dict(zip(PARAM_NAMES, rep.params.to_vector() - truth.to_vector()))
    lin = max(abs(v) for k, v in err.items() if k not in ANGLE_NAMES and k not in ("sx", "sy"))
    ang = np.degrees(max(abs(v) for k, v in err.items() if k in ANGLE_NAMES))
    return len(obs), lin, ang, err["z1"], rep.std_errors.get("z1", np.nan), rep.iterations


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0], help="pixel noise sigma (px)")
    ap.add_argument("--scans", type=int, nargs="+", default=[40, 80, 160], help="poses per sweep (count)")
    ap.add_argument("--trials", type=int, default=10, help="sweeps per setting (count)")
    ap.add_argument("--init", type=float, default=0.2, help="relative perturbation of the start (fraction)")
    ap.add_argument("--out", help="CSV file for the per-setting summary")
    args = ap.parse_args(argv)

    truth = default_truth()
    rows = []
    print(f"{'noise_px':>8} {'scans':>6} {'used':>5} {'max_mm':>9} {'max_deg':>9} "
          f"{'z1_rms':>8} {'z1_se':>8} {'iters':>6} {'fail':>5}")
    for noise in args.noise:
        for n in args.scans:
            res, failures = [], 0
            for trial in range(args.trials):
                try:
                    res.append(run_case(truth, noise, n, trial, args.init))
                except IdentifiabilityError:
                    failures += 1
            if not res:
                print(f"{noise:8.2f} {n:6d}  all trials unidentifiable")
                continue
            a = np.array(res, dtype=float)
            row = dict(noise_px=noise, scans=n, used=int(a[:, 0].mean()), max_mm=a[:, 1].max(),
                       max_deg=a[:, 2].max(), z1_rms=float(np.sqrt(np.mean(a[:, 3] ** 2))),
                       z1_se=float(np.mean(a[:, 4])), iterations=float(a[:, 5].mean()), failures=failures)
            rows.append(row)
            print(f"{noise:8.2f} {n:6d} {row['used']:5d} {row['max_mm']:9.4f} {row['max_deg']:9.4f} "
                  f"{row['z1_rms']:8.4f} {row['z1_se']:8.4f} {row['iterations']:6.1f} {failures:5d}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
