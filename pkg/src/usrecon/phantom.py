"""Synthetic phantoms, probe trajectories and rendered B-scans.

Trajectories are given as image-plane poses in the phantom frame
(``cTp``: image mm -> phantom mm). Reported tracker poses are derived from
the injected calibration, ``tTr = inv(cTt) @ cTp @ inv(rTp)``, so a
reconstruction with the true calibration lands in tracker coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibObservation, CalibrationParams
from .compounding import ScanSequence, pixel_positions
from .geometry import Pose6, RigidTransform, apply, euler_to_matrix, invert, make_transform
from .imaging import Frame

# image x -> phantom x, image depth (y) -> phantom -z
PROBE_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


@dataclass
class PhantomSpec:
    shape: str = "sphere"  # plane | sphere | checker
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 15.0
    edge_width: float = 2.0  # mm, linear ramp across the sphere surface
    inside: float = 200.0
    outside: float = 40.0
    line_sigma: float = 0.5  # mm, thickness of the floor echo (plane)
    checker_size: float = 5.0
    noise_sigma: float = 0.0
    width: int = 128
    height: int = 128
    rate: float = 30.0
    trajectory: list = field(default_factory=list)  # Pose6 or RigidTransform, phantom <- image
    calibration: CalibrationParams = None
    delay: int = 0  # samples; images lag poses when positive
    seed: int = 0

    def __post_init__(self):
        if self.shape not in ("plane", "sphere", "checker"):
            raise ValueError(f"unknown phantom shape {self.shape!r}")
        if len(self.trajectory) < 2:
            raise ValueError("trajectory needs at least 2 poses")
        if self.calibration is None:
            self.calibration = CalibrationParams(0.25, 0.25)


def intensity(spec: PhantomSpec, pts) -> np.ndarray:
    """Analytic phantom value at phantom-frame points (n, 3)."""
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    if spec.shape == "sphere":
        d = np.linalg.norm(p - np.asarray(spec.center), axis=1)
        frac = np.clip(0.5 - (d - spec.radius) / spec.edge_width, 0.0, 1.0)
        return spec.outside + (spec.inside - spec.outside) * frac
    if spec.shape == "plane":
        z = p[:, 2]
        echo = np.exp(-0.5 * (z / spec.line_sigma) ** 2)
        return np.minimum(np.where(z < 0, spec.outside, 0.0) + spec.inside * echo, 255.0)
    cells = np.floor(p / spec.checker_size).astype(np.int64).sum(axis=1)
    return np.where(cells % 2 == 0, spec.inside, spec.outside).astype(float)


def _as_transform(p) -> RigidTransform:
    return p if isinstance(p, RigidTransform) else make_transform(p)


def render_frame(spec: PhantomSpec, cTp: RigidTransform, rng=None) -> Frame:
    calib = spec.calibration
    blank = Frame(np.zeros((spec.height, spec.width), np.uint8), calib.sx, calib.sy)
    vals = intensity(spec, pixel_positions(blank, cTp.matrix, calib.sx, calib.sy))
    if spec.noise_sigma > 0:
        rng = rng or np.random.default_rng(spec.seed)
        vals = vals + rng.normal(0.0, spec.noise_sigma, vals.shape)
    img = np.clip(np.rint(vals), 0, 255).astype(np.uint8).reshape(spec.height, spec.width)
    return Frame(img, calib.sx, calib.sy)


@dataclass
class SynthResult:
    sequence: ScanSequence
    spec: PhantomSpec
    calibration: CalibrationParams
    delay: int
    true_poses: list  # tTr without delay

    def truth_in_tracker(self, pts) -> np.ndarray:
        """Phantom value at tracker-frame points."""
        return intensity(self.spec, apply(self.calibration.cTt, pts))


def tracker_pose(calib: CalibrationParams, cTp: RigidTransform) -> RigidTransform:
    return invert(calib.cTt) @ cTp @ invert(calib.rTp)


def synth_phantom(spec: PhantomSpec) -> SynthResult:
    """Render every trajectory pose and report delayed tracker poses.

    With ``delay = k`` the pose reported for index ``m`` is the true pose of
    image ``m + k`` (clamped at the ends), so image ``n`` pairs with pose
    sample ``n - k``.
    """
    calib = spec.calibration
    rng = np.random.default_rng(spec.seed)
    cTps = [_as_transform(p) for p in spec.trajectory]
    frames = [render_frame(spec, T, rng) for T in cTps]
    true_poses = [tracker_pose(calib, T) for T in cTps]
    n = len(cTps)
    reported = [true_poses[min(max(m + spec.delay, 0), n - 1)] for m in range(n)]
    times = np.arange(n) / spec.rate
    seq = ScanSequence(frames, reported, calib, times)
    return SynthResult(seq, spec, calib, spec.delay, true_poses)


# trajectories ---------------------------------------------------------------

def probe_pose(x, y, height, yaw=0.0, roll=0.0, pitch=0.0) -> RigidTransform:
    """Image-plane pose above a floor at z = 0.

    ``roll`` turns the image about its own normal (tilts the floor line in
    the image), ``pitch`` tilts the plane about the image lateral axis and
    ``yaw`` turns the probe about the vertical.
    """
    R = euler_to_matrix(yaw, 0.0, 0.0) @ PROBE_DOWN @ euler_to_matrix(roll, 0.0, 0.0) \
        @ euler_to_matrix(0.0, 0.0, pitch)
    return RigidTransform.from_rt(R, (x, y, height))


def updown_trajectory(n: int, rate: float = 30.0, base_height: float = 20.0,
                      amplitude: float = 8.0, period: float = 1.5, x: float = 0.0,
                      y: float = 0.0, phase: float = 0.0) -> list:
    """Vertical oscillation with a slow secondary component (sine-like)."""
    t = np.arange(n) / rate
    h = (base_height + amplitude * np.sin(2 * np.pi * t / period + phase)
         + 0.25 * amplitude * np.sin(2 * np.pi * t / (3.3 * period)))
    return [probe_pose(x, y, hi) for hi in h]


def prager_trajectory(n: int = 120, seed: int = 0, height=(5.0, 40.0), max_roll=0.5,
                      max_pitch=0.5, xy_range=30.0) -> list:
    """Plane-phantom calibration motions: translations, yaw sweeps, side-to-side
    roll, forward/backward pitch and combinations of them, with random
    amplitudes."""
    rng = np.random.default_rng(seed)
    poses = []
    groups = ["translate", "yaw", "roll", "pitch", "roll_pitch", "height"]
    for i in range(n):
        g = groups[i % len(groups)]
        x, y = rng.uniform(-xy_range, xy_range, 2)
        h = rng.uniform(*height)
        yaw = rng.uniform(-np.pi, np.pi)
        roll = pitch = 0.0
        if g == "yaw":
            yaw = rng.uniform(-np.pi, np.pi)
        elif g == "roll":
            roll = rng.uniform(-max_roll, max_roll)
        elif g == "pitch":
            pitch = rng.uniform(-max_pitch, max_pitch)
        elif g == "roll_pitch":
            roll = rng.uniform(-max_roll, max_roll)
            pitch = rng.uniform(-max_pitch, max_pitch)
        elif g == "height":
            roll = rng.uniform(-0.2, 0.2)
            pitch = rng.uniform(-0.2, 0.2)
        poses.append(probe_pose(x, y, h, yaw, roll, pitch))
    return poses


def translation_trajectory(n: int = 40, seed: int = 0, height=(18.0, 32.0)) -> list:
    """Probe orientation frozen, position varied: a degenerate calibration motion."""
    rng = np.random.default_rng(seed)
    yaw, roll, pitch = rng.uniform(-0.3, 0.3, 3)
    return [probe_pose(*rng.uniform(-30, 30, 2), rng.uniform(*height), yaw, roll, pitch)
            for _ in range(n)]


def linear_sweep(n: int, start, direction, orientation: np.ndarray) -> list:
    """Evenly spaced parallel frames: ``start + i * direction``."""
    start = np.asarray(start, dtype=float)
    direction = np.asarray(direction, dtype=float)
    return [RigidTransform.from_rt(orientation, start + i * direction) for i in range(n)]


def floor_line_pixels(calib: CalibrationParams, cTp: RigidTransform, width: int,
                      height: int, columns=(0.1, 0.9)):
    """Exact image row where the floor z = 0 crosses two columns.

    Returns ``((u1, v1), (u2, v2))`` or None when the line misses the image.
    """
    M = cTp.matrix
    denom = M[2, 1] * calib.sy
    if abs(denom) < 1e-12:
        return None
    out = []
    for frac in columns:
        u = frac * (width - 1)
        v = -(M[2, 0] * calib.sx * u + M[2, 3]) / denom
        if not 0 <= v <= height - 1:
            return None
        out.append((u, v))
    return tuple(out)


def plane_observations(calib: CalibrationParams, trajectory, width: int = 400,
                       height: int = 480, pixel_noise: float = 0.0, seed: int = 0) -> list:
    """Noise-free (or Gaussian-perturbed) floor-line pixels for each pose."""
    rng = np.random.default_rng(seed)
    obs = []
    for i, p in enumerate(trajectory):
        cTp = _as_transform(p)
        px = floor_line_pixels(calib, cTp, width, height)
        if px is None:
            continue
        px = np.asarray(px)
        if pixel_noise > 0:
            px = px + rng.normal(0.0, pixel_noise, px.shape)
        obs.append(CalibObservation(i, tracker_pose(calib, cTp), tuple(map(tuple, px))))
    return obs


def perturb(calib: CalibrationParams, fraction: float = 0.2, seed: int = 0) -> CalibrationParams:
    """Scale every free parameter by a random factor in [1-fraction, 1+fraction]."""
    rng = np.random.default_rng(seed)
    free = calib.free_vector()
    return calib.with_free(free * (1 + rng.uniform(-fraction, fraction, free.shape)))


def default_truth() -> CalibrationParams:
    return CalibrationParams(
        sx=0.1, sy=0.09,
        rTp_pose=Pose6(12.0, -25.0, 40.0, 0.12, -0.08, 0.15),
        cTt_pose=Pose6(0.0, 0.0, -350.0, 0.0, 0.06, -0.04),
    )
