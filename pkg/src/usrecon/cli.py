"""Command-line pipeline: synth, calibrate-temporal, calibrate-spatial,
reconstruct, fillgaps and metrics.

Every subcommand accepts ``--config FILE`` (flat key=value, keys are the
long flag names); explicit flags win over the file. Exit status is 0 on
success, 1 on a runtime failure and 2 on a usage or configuration error.
Failures print one line on stderr::

    usrecon: error stage=<command> kind=<ErrorClass> message="<text>"

Progress goes to stderr as ``progress stage=<name> pct=<0-100> elapsed=<s>``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import PARAM_NAMES, CalibrationParams, covariance_table, observation_from_line, solve_lm
from .compounding import ScanSequence, compound, default_spacing, frame_corners
from .config import (DELAY_OPTIONS, GAPFILL_OPTIONS, LINE_OPTIONS, ConfigError, Option, gapfill_config,
                     line_config, read_config_file, resolve)
from .datasets import probe_truth, sphere_dataset, spatial_dataset, temporal_dataset
from .gapfill import fill_gaps, hull_mask_from_corners
from .geometry import Pose6, RigidTransform, interpolate_poses, make_transform
from .imaging import VerticalLineError, detect_line
from .io import (load_accumulator, read_calibration, read_frames, read_kv, read_pose_csv, read_sidecar,
                 save_accumulator, write_calibration, write_covariance_csv, write_frames, write_kv,
                 write_pose_csv, write_vti)
from .metrics import distance_accuracy, point_accuracy, reconstruction_precision, summary_table
from .phantom import PhantomSpec, intensity, perturb
from .signal import SampledSignal, estimate_delay, extract_edge_depth


class Progress:
    def __init__(self, stream=None):
        self.t0 = time.perf_counter()
        self.stream = stream or sys.stderr

    def __call__(self, stage, pct):
        print(f"progress stage={stage} pct={pct:.0f} elapsed={time.perf_counter() - self.t0:.2f}",
              file=self.stream, flush=True)


def _threads(n):
    return (os.cpu_count() or 1) if n == 0 else n


# shared loading ---------------------------------------------------------------

def load_acquisition(frames_dir, poses_csv):
    """Frames, their timestamps (s) and the raw pose stream."""
    frames = read_frames(frames_dir)
    meta = read_sidecar(frames_dir)
    t_frames = meta["start_time"] + np.arange(len(frames)) / meta["rate"]
    stream = read_pose_csv(poses_csv)
    if len(stream) < 2:
        raise ValueError(f"{poses_csv}: need at least 2 poses")
    t_pose = np.array([t for t, _ in stream])
    poses = [make_transform(p) for _, p in stream]
    return frames, t_frames, meta, t_pose, poses


def delay_seconds(cfg) -> float:
    if cfg.get("delay") is not None:
        return float(cfg["delay"])
    if cfg.get("delay_file"):
        return float(read_kv(cfg["delay_file"])["delay_s"])
    return 0.0


def align_poses(t_frames, t_pose, poses, delay_s, mode="slerp"):
    """Pose for each frame shifted by the delay; frames outside the pose span are dropped.

    A positive delay means the image stream lags the pose stream, so the
    frame at time t pairs with the pose reported at ``t - delay``.
    """
    q = np.asarray(t_frames) - delay_s
    tol = 1e-9 * max(1.0, float(np.abs(t_pose).max()))
    keep = np.flatnonzero((q >= t_pose[0] - tol) & (q <= t_pose[-1] + tol))
    return keep, interpolate_poses(t_pose, poses, q[keep], mode) if len(keep) else []


# synth ------------------------------------------------------------------------

def _write_acquisition(root: Path, result):
    seq = result.sequence
    write_frames(root / "frames", seq.frames, result.spec.rate)
    write_pose_csv(root / "poses.csv", seq.times, [p.to_pose() for p in seq.poses])


def cmd_synth(cfg, progress):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    truth = probe_truth(cfg["pixel_size"])
    size = (cfg["width"], cfg["height"])
    common = dict(delay=cfg["delay_samples"], rate=cfg["rate"], size=size)
    kinds = ["temporal", "spatial", "sphere"] if cfg["kind"] == "all" else [cfg["kind"]]
    makers = {
        "temporal": lambda: temporal_dataset(truth, noise=cfg["noise"], seed=cfg["seed"], **common),
        "spatial": lambda: spatial_dataset(truth, noise=cfg["noise"], seed=cfg["seed"] + 1, **common),
        "sphere": lambda: sphere_dataset(truth, noise=cfg["sphere_noise"], seed=cfg["seed"] + 2, **common),
    }
    sphere_spec = None
    for i, kind in enumerate(kinds):
        result = makers[kind]()
        _write_acquisition(out / kind, result)
        if kind == "sphere":
            sphere_spec = result.spec
        progress("synth", 100 * (i + 1) / len(kinds))
    write_calibration(out / "truth_calibration.txt", truth)
    write_calibration(out / "init_calibration.txt", perturb(truth, cfg["perturb"], cfg["seed"]))
    items = {"delay_samples": cfg["delay_samples"], "rate": cfg["rate"],
             "delay_s": cfg["delay_samples"] / cfg["rate"]}
    if sphere_spec is not None:
        items.update(shape="sphere", center=" ".join(repr(float(c)) for c in sphere_spec.center),
                     radius=sphere_spec.radius, edge_width=sphere_spec.edge_width,
                     inside=sphere_spec.inside, outside=sphere_spec.outside)
    items.update({f"cTt_{k}": v for k, v in zip(("x", "y", "z", "alpha", "beta", "gamma"),
                                                        truth.cTt_pose.as_array())})
    write_kv(out / "truth.txt", items, "ground truth of the synthetic session (mm, rad, samples)")
    print(f"wrote {', '.join(kinds)} datasets to {out}")


# temporal calibration ---------------------------------------------------------

def cmd_calibrate_temporal(cfg, progress):
    frames, t_frames, meta, t_pose, poses = load_acquisition(cfg["frames"], cfg["poses"])
    progress("load", 100)
    depth = extract_edge_depth(frames, meta["rate"], line_config(cfg), meta["start_time"])
    progress("edges", 100)
    axis = "xyz".index(cfg["axis"])
    dt = np.diff(t_pose)
    pose_rate = 1.0 / float(np.median(dt))
    # the pose stream is resampled onto a uniform grid at its median rate
    grid = t_pose[0] + np.arange(int(np.floor((t_pose[-1] - t_pose[0]) * pose_rate + 1e-9)) + 1) / pose_rate
    pos = np.interp(grid, t_pose, [T.translation[axis] for T in poses])
    est = estimate_delay(SampledSignal(pos, pose_rate, float(t_pose[0])), depth,
                         max_lag=cfg["max_lag"] or None, min_peak=cfg["min_peak"],
                         direction=cfg["direction"])
    progress("correlate", 100)
    write_kv(cfg["out"], {"delay_s": est.delay, "lag_samples": est.lag_samples,
                          "rate": est.rate, "peak_correlation": est.peak_correlation},
             "positive delay: images lag poses")
    print(f"delay_samples={est.lag_samples} delay_s={est.delay:.6f} rate={est.rate:g} "
          f"peak_correlation={est.peak_correlation:.4f}")


# spatial calibration ----------------------------------------------------------

def default_init(meta, poses) -> CalibrationParams:
    """Starting point without a prior: nominal pixel size, image at the marker origin,
    phantom floor level with the mean tracked height."""
    z2 = -float(np.mean([T.translation[2] for T in poses])) if len(poses) else 0.0
    return CalibrationParams(meta["sx"], meta["sy"], Pose6(), Pose6(0.0, 0.0, z2, 0.0, 0.0, 0.0))


def cmd_calibrate_spatial(cfg, progress):
    frames, t_frames, meta, t_pose, poses = load_acquisition(cfg["frames"], cfg["poses"])
    keep, aligned = align_poses(t_frames, t_pose, poses, delay_seconds(cfg), cfg["pose_interp"])
    init = read_calibration(cfg["init"]) if cfg["init"] else default_init(meta, aligned)
    lcfg = line_config(cfg)
    obs, missed = [], 0
    for n, (i, T) in enumerate(zip(keep, aligned)):
        try:
            line = detect_line(frames[i], lcfg)
        except VerticalLineError:
            line = None
        if line is None:
            missed += 1
        else:
            obs.append(observation_from_line(int(i), T, line))
        if (n + 1) % max(1, len(keep) // 10) == 0:
            progress("lines", 100 * (n + 1) / len(keep))
    report = solve_lm(obs, init)
    progress("solve", 100)
    write_calibration(cfg["out"], report.params,
                      {"residual_rms_mm": report.residual_rms, "iterations": report.iterations,
                       "observations": len(obs)})
    cov_path = cfg["covariance"] or str(Path(cfg["out"]).with_suffix("")) + "_covariance.csv"
    write_covariance_csv(cov_path, report)
    print(f"frames={len(frames)} used={len(obs)} no_line={missed} dropped_by_delay={len(frames) - len(keep)}")
    print(f"residual_rms_mm={report.residual_rms:.6f} iterations={report.iterations} "
          f"condition={report.jacobian_condition:.3g}")
    for name, value in zip(PARAM_NAMES, report.params.to_vector()):
        print(f"{name}={float(value)!r}")
    print(covariance_table(report))


# reconstruction ----------------------------------------------------------------

def cmd_reconstruct(cfg, progress):
    frames, t_frames, meta, t_pose, poses = load_acquisition(cfg["frames"], cfg["poses"])
    calib = read_calibration(cfg["calibration"])
    if abs(calib.sx - meta["sx"]) > 1e-9 or abs(calib.sy - meta["sy"]) > 1e-9:
        print(f"note: using calibrated pixel size {calib.sx:g} x {calib.sy:g} mm "
              f"instead of the sidecar's {meta['sx']:g} x {meta['sy']:g}", file=sys.stderr)
    keep, aligned = align_poses(t_frames, t_pose, poses, delay_seconds(cfg), cfg["pose_interp"])
    if len(keep) == 0:
        raise ValueError("no frame falls inside the pose stream after the delay shift")
    seq = ScanSequence([frames[i] for i in keep], aligned, calib, t_frames[keep])
    progress("load", 100)
    spacing = cfg["spacing"] or default_spacing(calib)
    va = compound(seq, mode=cfg["bounds"], spacing=spacing, threads=_threads(cfg["threads"]))
    progress("compound", 100)
    corners = np.stack([frame_corners(f, seq.image_to_world(i), calib.sx, calib.sy)
                        for i, f in enumerate(seq.frames)])
    write_vti(va, cfg["out"])
    npz = Path(cfg["out"]).with_suffix(".npz")
    save_accumulator(va, npz, corners=corners)
    filled = int((va.contributions > 0).sum())
    print(f"dims={va.dims[0]}x{va.dims[1]}x{va.dims[2]} spacing_mm={spacing:g} frames={len(seq)} "
          f"dropped_by_delay={len(frames) - len(keep)} voxels_with_data={filled} "
          f"skipped_pixels={sum(va.skipped)}")
    print(f"wrote {cfg['out']} and {npz}")


def cmd_fillgaps(cfg, progress):
    va, extras = load_accumulator(cfg["input"])
    if "corners" in extras:
        mask = hull_mask_from_corners(va, extras["corners"])
    elif "mask" in extras:
        mask = extras["mask"]
    else:
        mask = np.ones(va.size, dtype=bool)
    progress("mask", 100)
    out = fill_gaps(va, mask, gapfill_config(cfg))
    progress("fill", 100)
    write_vti(out, cfg["out"], also_mask=mask)
    npz = Path(cfg["out"]).with_suffix(".npz")
    save_accumulator(out, npz, mask=mask)
    st = out.fill_stats
    print(f"method={st['method']} gaps={st['gaps']} filled={st['filled']} unfilled={st['unfilled']} "
          f"blocks={st['n_blocks']} max_block_voxels={st['max_block_voxels']}")
    print(f"wrote {cfg['out']} and {npz}")


# metrics -----------------------------------------------------------------------

def phantom_from_truth(truth: dict) -> tuple[PhantomSpec, RigidTransform]:
    spec = PhantomSpec(truth.get("shape", "sphere"),
                       center=tuple(float(c) for c in truth["center"].split()),
                       radius=float(truth["radius"]), edge_width=float(truth["edge_width"]),
                       inside=float(truth["inside"]), outside=float(truth["outside"]),
                       trajectory=[Pose6(), Pose6()])
    cTt = make_transform(Pose6(*(float(truth[f"cTt_{k}"]) for k in ("x", "y", "z", "alpha", "beta", "gamma"))))
    return spec, cTt


def volume_error(va, mask, spec, cTt) -> dict:
    """Mean and max absolute error against the analytic phantom over ``mask``."""
    idx = np.flatnonzero(mask)
    pts = va.voxel_centers(idx)
    ref = intensity(spec, pts @ cTt.rotation.T + cTt.translation)
    err = np.abs(va.values[idx] - ref)
    return {"voxels": int(len(idx)), "mae": float(err.mean()), "max": float(err.max()),
            "within5_pct": float(100 * np.mean(err <= 5))}


def _read_measurements(path):
    groups = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("name"):
            continue
        name, *vals = (c.strip() for c in line.split(","))
        try:
            groups.setdefault(name, []).append([float(v) for v in vals])
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric measurement") from None
    return groups


def cmd_metrics(cfg, progress):
    if not cfg["volume"] and not cfg["measurements"]:
        raise ConfigError(["metrics: give --volume and/or --measurements"])
    if cfg["volume"]:
        if not cfg["truth"]:
            raise ConfigError(["truth: required with --volume"])
        va, extras = load_accumulator(cfg["volume"])
        mask = extras.get("mask", va.contributions > 0)
        spec, cTt = phantom_from_truth(read_kv(cfg["truth"]))
        e = volume_error(va, mask, spec, cTt)
        print(f"volume_mae={e['mae']:.4f} volume_max_error={e['max']:.2f} "
              f"within5_pct={e['within5_pct']:.2f} voxels={e['voxels']}")
    if cfg["measurements"]:
        if not cfg["reference"]:
            raise ConfigError(["reference: required with --measurements"])
        ref = read_kv(cfg["reference"])
        rows = []
        for name, vals in _read_measurements(cfg["measurements"]).items():
            if name not in ref:
                raise KeyError(f"no reference value for {name!r}")
            truth = [float(v) for v in ref[name].split()]
            m = np.array(vals)
            acc = point_accuracy(m, truth) if m.shape[1] == 3 else distance_accuracy(m[:, 0], truth[0])
            rows.append((name, acc, reconstruction_precision(m)))
        print(summary_table(rows))


# parser ------------------------------------------------------------------------

COMMANDS = {
    "synth": (cmd_synth, "write synthetic temporal, spatial and sphere acquisitions plus truth", [
        Option("out", str, None, "output directory", required=True),
        Option("kind", str, "all", "which dataset(s)", choices=("all", "temporal", "spatial", "sphere")),
        Option("seed", int, 0, "random seed (integer)"),
        Option("delay-samples", int, 3, "injected delay (samples, positive when images lag poses)",
               minimum=-20, maximum=20),
        Option("rate", float, 30.0, "frame and pose rate (Hz)", minimum=1e-3),
        Option("width", int, 128, "frame width (px)", minimum=16),
        Option("height", int, 128, "frame height (px)", minimum=16),
        Option("pixel-size", float, 0.25, "pixel size (mm/px)", minimum=1e-3),
        Option("noise", float, 5.0, "Gaussian noise on plane-phantom frames (0-255 intensity levels)",
               minimum=0.0),
        Option("sphere-noise", float, 0.0, "Gaussian noise on sphere frames (0-255 intensity levels)",
               minimum=0.0),
        Option("perturb", float, 0.2, "relative perturbation of the initial calibration (fraction)",
               minimum=0.0, maximum=0.9),
    ]),
    "calibrate-temporal": (cmd_calibrate_temporal, "estimate the image/pose delay from an up-down sweep", [
        Option("frames", str, None, "directory of frame_NNNNNN.pgm files", path="dir", required=True),
        Option("poses", str, None, "pose CSV", path="file", required=True),
        Option("out", str, "delay.txt", "delay file to write", path="out"),
        Option("axis", str, "z", "tracker axis of the vertical motion", choices=("x", "y", "z")),
        Option("max-lag", int, 0, "largest lag searched (samples, 0 = half the signal)", minimum=0),
        Option("min-peak", float, 0.5, "minimum accepted correlation peak (-1 to 1)", minimum=-1.0, maximum=1.0),
        Option("direction", str, "both", "lag search direction", choices=("both", "positive", "negative")),
        *LINE_OPTIONS,
    ]),
    "calibrate-spatial": (cmd_calibrate_spatial, "solve the probe calibration from plane-phantom frames", [
        Option("frames", str, None, "directory of frame_NNNNNN.pgm files", path="dir", required=True),
        Option("poses", str, None, "pose CSV", path="file", required=True),
        Option("init", str, None, "initial calibration file (mm, rad); default: frame pixel size, "
               "zero image offset, floor at the mean tracked height", path="file"),
        Option("out", str, "calibration.txt", "calibration file to write", path="out"),
        Option("covariance", str, None, "covariance CSV (default: <out>_covariance.csv)", path="out"),
        *DELAY_OPTIONS,
        *LINE_OPTIONS,
    ]),
    "reconstruct": (cmd_reconstruct, "compound frames into a voxel array (PNN)", [
        Option("frames", str, None, "directory of frame_NNNNNN.pgm files", path="dir", required=True),
        Option("poses", str, None, "pose CSV", path="file", required=True),
        Option("calibration", str, None, "calibration file (mm, rad)", path="file", required=True),
        Option("out", str, "volume.vti", "VTI volume to write; the accumulator goes next to it as .npz",
               path="out"),
        Option("spacing", float, 0.0, "voxel size (mm, 0 = largest pixel size)", minimum=0.0),
        Option("bounds", str, "manual", "grid axes: tracker axes or principal axes",
               choices=("manual", "pca")),
        Option("threads", int, 1, "worker threads (count, 0 = all cores)", minimum=0),
        *DELAY_OPTIONS,
    ]),
    "fillgaps": (cmd_fillgaps, "fill empty voxels between consecutive frames", [
        Option("input", str, None, "accumulator .npz written by reconstruct", path="file", required=True),
        Option("out", str, "filled.vti", "filled VTI to write (mask goes to <stem>_mask.vti)", path="out"),
        *GAPFILL_OPTIONS,
    ]),
    "metrics": (cmd_metrics, "accuracy and precision tables, volume error against a phantom", [
        Option("volume", str, None, "accumulator .npz to score", path="file"),
        Option("truth", str, None, "truth.txt written by synth", path="file"),
        Option("measurements", str, None, "CSV rows 'name,value' or 'name,x,y,z' (mm)", path="file"),
        Option("reference", str, None, "key=value file: name = true value(s) (mm)", path="file"),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usrecon", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext, options) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.add_argument("--config", help="key=value file; flags override it")
        for opt in options:
            default = "" if opt.default is None else f" [default: {opt.default}]"
            p.add_argument(f"--{opt.name}", dest=opt.dest, type=opt.type, default=None,
                           help=(opt.help + default).replace("%", "%%"))  # argparse formats help with %
    return parser


def _error(stage, exc) -> str:
    kind = type(exc).__name__
    msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
    return f"usrecon: error stage={stage} kind={kind} message={json.dumps(str(msg))}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func, _, options = COMMANDS[args.command]
    progress = Progress()
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(options, file_values, vars(args))
        try:
            if any(o in options for o in LINE_OPTIONS):
                line_config(cfg)
            if any(o in options for o in GAPFILL_OPTIONS):
                gapfill_config(cfg)
        except ValueError as exc:
            raise ConfigError([str(exc)]) from None
    except (ConfigError, OSError) as exc:
        print(_error(args.command, exc), file=sys.stderr)
        return 2
    try:
        func(cfg, progress)
    except ConfigError as exc:
        print(_error(args.command, exc), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        print(_error(args.command, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
