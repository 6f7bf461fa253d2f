"""Acceptance gate: one PASS/FAIL line per criterion on the terminal.

Run ``pytest tests/test_acceptance.py -v`` to see the report lines.
"""
import re
import subprocess
import sys
import time

import numpy as np
import pytest

from usrecon.calibration import ANGLE_NAMES, PARAM_NAMES, IdentifiabilityError, jacobian, residuals, solve_lm
from usrecon.cli import main
from usrecon.compounding import ScanSequence, VoxelArray, compound
from usrecon.datasets import probe_truth, sphere_dataset
from usrecon.gapfill import GapFillConfig, fill_blocks, fill_gaps
from usrecon.geometry import RigidTransform, invert
from usrecon.io import (FormatError, read_c3d, read_c3d_points, read_frames, read_kv, read_pgm, read_pose_csv,
                        read_vti, write_c3d_points, write_frames, write_vti)
from usrecon.imaging import Frame
from usrecon.metrics import accuracy, distance_accuracy, point_accuracy, reconstruction_precision
from usrecon.phantom import (default_truth, floor_line_pixels, perturb, plane_observations, prager_trajectory,
                             tracker_pose, translation_trajectory, updown_trajectory)
from usrecon.signal import SampledSignal, estimate_delay

from test_calibration import fd_jacobian, random_observations, random_params


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


# 1 -----------------------------------------------------------------------------

def test_criterion_1_hardware_figures_substituted(report):
    # Hardware-bound figures cannot be rerun; check the two metric
    # definitions that would produce them on a worked example instead.
    pts = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 5.0], [1.0, 4.0, 3.0], [1.0, 4.0, 5.0]])
    acc = point_accuracy(pts, [1.0, 3.0, 3.0])
    prec = reconstruction_precision(pts)
    ok = acc == 1.0 and prec == np.sqrt(2.0)
    report(1, ok, f"not reproducible without hardware; metric definitions checked (accuracy={acc}, "
                  f"precision={prec:.6f})")


# 2 -----------------------------------------------------------------------------

def delay_case(k, seed, n=300, pad=20, rate=30.0, size=(128, 128)):
    """Tracker z and noisy analytic floor depth for an up-down sweep whose poses lead by k."""
    r = np.random.default_rng(seed)
    calib = probe_truth(0.25)
    w, h = size
    depth_mm = calib.sy * (h - 1)
    period = r.uniform(1.2, 2.5)
    assert n / rate >= 3 * period
    traj = updown_trajectory(n + 2 * pad, rate, base_height=0.5 * depth_mm,
                             amplitude=0.25 * depth_mm * r.uniform(0.6, 1.0), period=period,
                             x=-0.5 * calib.sx * (w - 1), phase=r.uniform(0, 2 * np.pi))
    true = [tracker_pose(calib, T) for T in traj]
    idx = np.arange(pad, pad + n)
    z = np.array([true[m + k].translation[2] for m in idx])
    rows = np.array([np.mean([v for _, v in floor_line_pixels(calib, traj[m], w, h)]) for m in idx])
    rows = rows + r.uniform(-1.0, 1.0, n)
    return SampledSignal(z, rate), SampledSignal(rows, rate)


def test_criterion_2_temporal_calibration(report):
    cases = [((i % 41) - 20, 1000 + i) for i in range(100)]
    signals = [delay_case(k, s) for k, s in cases]
    t0 = time.perf_counter()  # calibration only; synthesising the sweeps is not timed
    found = [estimate_delay(a, b).lag_samples for a, b in signals]
    elapsed = time.perf_counter() - t0
    hits = sum(f == k for f, (k, _) in zip(found, cases))
    report(2, hits == 100 and elapsed < 5.0, f"{hits}/100 lags exact, k in [-20, 20], {elapsed:.2f} s")


# 3 -----------------------------------------------------------------------------

def _errors(params, truth):
    err = dict(zip(PARAM_NAMES, params.to_vector() - truth.to_vector()))
    lin = max(abs(v) for n, v in err.items() if n not in ANGLE_NAMES)
    ang = max(abs(v) for n, v in err.items() if n in ANGLE_NAMES)
    return lin, ang


def test_criterion_3_spatial_calibration(report):
    truth = default_truth()
    worst_clean = [0.0, 0.0]
    worst_noisy = [0.0, 0.0]
    n_obs = []
    for seed in range(5):
        obs = plane_observations(truth, prager_trajectory(120, seed=seed))
        n_obs.append(len(obs))
        lin, ang = _errors(solve_lm(obs, perturb(truth, 0.2, seed)).params, truth)
        worst_clean = [max(worst_clean[0], lin), max(worst_clean[1], ang)]
        noisy = plane_observations(truth, prager_trajectory(120, seed=seed), pixel_noise=1.0, seed=50 + seed)
        lin, ang = _errors(solve_lm(noisy, perturb(truth, 0.2, seed)).params, truth)
        worst_noisy = [max(worst_noisy[0], lin), max(worst_noisy[1], ang)]
    rng = np.random.default_rng(2024)
    jac = 0.0
    for _ in range(20):
        p, obs = random_params(rng), random_observations(rng)
        F = fd_jacobian(p, obs)
        jac = max(jac, float(np.max(np.abs(jacobian(p, obs) - F) / np.maximum(np.abs(F), 1.0))))
    ok = (min(n_obs) >= 40 and worst_clean[0] < 1e-3 and worst_clean[1] < 1e-5
          and worst_noisy[0] < 1.0 and np.degrees(worst_noisy[1]) < 0.5 and jac < 1e-5)
    report(3, ok, f">= {min(n_obs)} B-scans; noiseless {worst_clean[0]:.1e} mm / {worst_clean[1]:.1e} rad; "
                  f"1 px noise {worst_noisy[0]:.3f} mm / {np.degrees(worst_noisy[1]):.3f} deg; "
                  f"Jacobian rel. err {jac:.1e}")


# 4 -----------------------------------------------------------------------------

def test_criterion_4_degenerate_motion(report):
    truth = default_truth()
    caught, conds = 0, []
    for seed in range(10):
        obs = plane_observations(truth, translation_trajectory(40, seed=seed))
        try:
            solve_lm(obs, perturb(truth, 0.2, seed))
        except IdentifiabilityError as exc:
            caught += exc.condition > 1e12
            conds.append(exc.condition)
    report(4, caught == 10, f"{caught}/10 seeds flagged, min condition {min(conds, default=0):.1e} (inf = singular)")


# 5 -----------------------------------------------------------------------------

def sphere_grid(result):
    """64^3 grid of 1 mm voxels centred on the sphere, axes along the phantom frame."""
    G = invert(result.calibration.cTt) @ RigidTransform.from_rt(np.eye(3), np.full(3, -31.5))
    return VoxelArray((64, 64, 64), 1.0, G)


def test_criterion_5_compounding(report):
    calib = probe_truth(63.0 / 127)
    result = sphere_dataset(calib, n=100, size=(128, 128), radius=20.0, sweep=63.0)
    seq = result.sequence
    t0 = time.perf_counter()
    va = compound(seq, sphere_grid(result), threads=4)
    elapsed = time.perf_counter() - t0
    hit = np.flatnonzero(va.contributions > 0)
    truth = result.truth_in_tracker(va.voxel_centers(hit))
    within = float(np.mean(np.abs(va.values[hit] - truth) <= 5))
    perm = np.random.default_rng(7).permutation(len(seq))
    shuffled = ScanSequence([seq.frames[i] for i in perm], [seq.poses[i] for i in perm], seq.calibration)
    vb = compound(shuffled, sphere_grid(result), threads=4)
    diff = float(np.abs(va.values - vb.values).max())
    ok = within >= 0.95 and diff <= 1e-6 and elapsed < 5.0
    report(5, ok, f"{100 * within:.2f}% of {len(hit)} voxels within 5 levels; order diff {diff:.1e}; "
                  f"{elapsed:.2f} s with 4 threads")


# 6 -----------------------------------------------------------------------------

def smooth_volume(dims=(48, 40, 36), drop=0.1, seed=0):
    z, y, x = np.meshgrid(*(np.arange(d) for d in dims[::-1]), indexing="ij")
    truth = (128 + 60 * np.sin(x / 7.0) * np.cos(y / 9.0) + 30 * np.sin(z / 5.0)).ravel()
    va = VoxelArray(dims, 1.0, RigidTransform.identity(), truth.copy(), np.ones(truth.size, np.int64))
    gone = np.random.default_rng(seed).choice(truth.size, int(drop * truth.size), replace=False)
    va.values[gone] = 0
    va.contributions[gone] = 0
    va.sums = va.values.copy()
    return va, truth, gone


def test_criterion_6_gap_filling(report):
    va, truth, gone = smooth_volume()
    mask = np.ones(va.size, bool)
    cfg = GapFillConfig(min_nongap_pct=25, max_cube_size=5)
    one = fill_gaps(va, mask, cfg)
    mae = float(np.abs(one.values[gone] - truth[gone]).mean())
    four = fill_blocks(va, mask, GapFillConfig(min_nongap_pct=25, max_cube_size=5, n_blocks=4))
    same = np.array_equal(one.values, four.values)
    sparse, _, holes = smooth_volume(drop=0.6, seed=3)
    vnn = fill_gaps(sparse, mask, GapFillConfig(method="vnn"))
    filled = float(np.mean(vnn.values[holes] > 0))
    lone = VoxelArray((9, 8, 7), 1.0, RigidTransform.identity())
    lone.values[100] = lone.sums[100] = 42.0
    lone.contributions[100] = 1
    single = fill_gaps(lone, np.ones(lone.size, bool), GapFillConfig(method="vnn"))
    ok = mae < 3 and same and filled == 1.0 and np.all(single.values == 42.0)
    report(6, ok, f"avg-cube MAE {mae:.3f}; 4 blocks identical={same}; VNN filled {100 * filled:.1f}% "
                  f"(and 100% from one seed: {bool(np.all(single.values == 42.0))})")


# 7 -----------------------------------------------------------------------------

def test_criterion_7_metrics(report):
    acc = accuracy([9.0, 11.0], 10.0)
    prec = reconstruction_precision([9.0, 11.0])
    ok = acc == 0.0 and prec == 1.0 and distance_accuracy([9.0, 11.0], 10.0) == 0.0
    report(7, ok, f"[9, 11] vs 10: accuracy={acc} precision={prec}")


# 8 -----------------------------------------------------------------------------

VTI_ORACLE = (
    b'<?xml version="1.0"?>\n'
    b'<VTKFile type="ImageData" version="1.0" byte_order="LittleEndian" header_type="UInt32">\n'
    b'  <ImageData WholeExtent="0 1 0 1 0 1" Origin="0.0 0.0 0.0" Spacing="1.0 1.0 1.0">\n'
    b'    <Piece Extent="0 1 0 1 0 1">\n'
    b'      <PointData Scalars="intensity">\n'
    b'        <DataArray type="UInt8" Name="intensity" format="appended" offset="0"/>\n'
    b'      </PointData>\n'
    b'    </Piece>\n'
    b'  </ImageData>\n'
    b'  <AppendedData encoding="raw">\n'
    b'_\x08\x00\x00\x00\x07\x07\x07\x07\x07\x07\x07\x07\n'
    b'  </AppendedData>\n'
    b'</VTKFile>\n'
)


def _malformed_cases(root):
    good = root / "good"
    write_frames(good, [Frame(np.zeros((4, 4), np.uint8))], 30.0)
    pgm = (good / "frame_000000.pgm").read_bytes()
    write_c3d_points(root / "ok.c3d", ["A"], np.zeros((20, 1, 3)), 30.0)
    c3d = (root / "ok.c3d").read_bytes()

    def put(name, data):
        p = root / name
        p.write_bytes(data if isinstance(data, bytes) else data.encode())
        return p

    def patch(data, offset, value):
        b = bytearray(data)
        b[offset] = value
        return bytes(b)

    head = "# angles: rad\nt,x,y,z,alpha,beta,gamma\n"
    mixed = root / "mixed"
    write_frames(mixed, [Frame(np.zeros((4, 4), np.uint8))] * 2, 30.0)
    (mixed / "frame_000001.pgm").write_bytes(b"P5\n5 4\n255\n" + bytes(20))
    nosidecar = root / "nosidecar"
    nosidecar.mkdir()
    (nosidecar / "frame_000000.pgm").write_bytes(pgm)
    return [
        ("pgm truncated", read_pgm, put("t.pgm", pgm[:-3])),
        ("pgm magic", read_pgm, put("m.pgm", b"P6" + pgm[2:])),
        ("pgm ascii", read_pgm, put("a.pgm", "P2\n2 2\n255\n1 2 3 4\n")),
        ("pgm 16-bit", read_pgm, put("d.pgm", b"P5\n2 2\n65535\n" + bytes(8))),
        ("frames mixed dims", read_frames, mixed),
        ("frames no sidecar", read_frames, nosidecar),
        ("poses order", read_pose_csv, put("o.csv", head + "0,0,0,0,0,0,0\n0.5,0,0,0,0,0,0\n0.2,0,0,0,0,0,0\n")),
        ("poses nan", read_pose_csv, put("n.csv", head + "0,0,nan,0,0,0,0\n")),
        ("poses fields", read_pose_csv, put("f.csv", head + "0,0,0\n")),
        ("poses units", read_pose_csv, put("u.csv", "t,x,y,z,alpha,beta,gamma\n0,0,0,0,0,0,0\n")),
        ("c3d key", read_c3d, put("k.c3d", patch(c3d, 1, 0x51))),
        ("c3d processor", read_c3d, put("p.c3d", patch(c3d, 512 + 3, 85))),
        ("c3d truncated", read_c3d, put("tr.c3d", c3d[:-10])),
        ("c3d short", read_c3d, put("s.c3d", c3d[:100])),
        ("vti no payload", read_vti, put("n.vti", VTI_ORACLE.replace(b"AppendedData", b"Appended"))),
        ("vti truncated", read_vti, put("t.vti", VTI_ORACLE[:-40])),
        ("kv duplicate", read_kv, put("d.txt", "a=1\na=2\n")),
        ("kv no equals", read_kv, put("e.txt", "a=1\nb\n")),
    ]


def test_criterion_8_formats(report, tmp_path):
    va = VoxelArray((2, 2, 2), 1.0, RigidTransform.identity(), np.full(8, 7.0), np.ones(8, np.int64))
    write_vti(va, tmp_path / "c.vti")
    vti_ok = (tmp_path / "c.vti").read_bytes() == VTI_ORACLE

    rng = np.random.default_rng(8)
    worst = 0.0
    for scale in (0.01, 0.1, 0.37, 1.0):
        pts = rng.uniform(-30000 * scale, 30000 * scale, (50, 4, 3))
        write_c3d_points(tmp_path / "r.c3d", ["A", "B", "C", "D"], pts, 120.0, scale=scale)
        back = np.stack([np.stack([xyz for _, xyz in read_c3d_points(tmp_path / "r.c3d", n)]) for n in "ABCD"], 1)
        worst = max(worst, float(np.abs(back - pts).max() / scale))
    c3d_ok = worst <= 0.5 + 1e-6

    rejected, unpositioned = 0, []
    cases = _malformed_cases(tmp_path)
    for name, reader, path in cases:
        try:
            reader(path)
        except FormatError as exc:
            rejected += 1
            if not exc.where or f": {exc.where}: " not in str(exc):
                unpositioned.append(name)
        else:
            unpositioned.append(f"{name} (accepted)")
    ok = vti_ok and c3d_ok and rejected == len(cases) and not unpositioned
    report(8, ok, f"VTI oracle exact={vti_ok}; C3D worst error {worst:.3f} quantum; "
                  f"{rejected}/{len(cases)} malformed inputs rejected with positions {unpositioned or ''}")


# 9 -----------------------------------------------------------------------------

def test_criterion_9_end_to_end(report, tmp_path):
    d = tmp_path

    def run(*args):
        proc = subprocess.run([sys.executable, "-m", "usrecon", *map(str, args)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc.stdout

    t0 = time.perf_counter()
    run("synth", "--out", d)
    out = run("calibrate-temporal", "--frames", d / "temporal/frames", "--poses", d / "temporal/poses.csv",
              "--out", d / "delay.txt")
    lag = int(re.search(r"delay_samples=(-?\d+)", out).group(1))
    run("calibrate-spatial", "--frames", d / "spatial/frames", "--poses", d / "spatial/poses.csv",
        "--init", d / "init_calibration.txt", "--delay-file", d / "delay.txt", "--out", d / "calib.txt")
    run("reconstruct", "--frames", d / "sphere/frames", "--poses", d / "sphere/poses.csv",
        "--calibration", d / "calib.txt", "--delay-file", d / "delay.txt", "--out", d / "vol.vti")
    run("fillgaps", "--input", d / "vol.npz", "--out", d / "filled.vti")
    elapsed = time.perf_counter() - t0
    out = run("metrics", "--volume", d / "filled.npz", "--truth", d / "truth.txt")
    mae = float(re.search(r"volume_mae=(\S+)", out).group(1))
    truth_lag = int(read_kv(d / "truth.txt")["delay_samples"])
    ok = elapsed < 60 and mae < 5 and lag == truth_lag
    report(9, ok, f"pipeline {elapsed:.1f} s; recovered delay {lag} (truth {truth_lag}); final MAE {mae:.3f}")
