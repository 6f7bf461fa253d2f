"""Ready-made synthetic acquisitions used by the CLI, scripts and tests.

All share one probe (``probe_truth``) and one injected delay so that the
temporal, spatial and reconstruction stages chain like a real session.
"""
from __future__ import annotations

import numpy as np

from .calibration import CalibrationParams
from .geometry import Pose6
from .phantom import PhantomSpec, SynthResult, prager_trajectory, probe_pose, synth_phantom, updown_trajectory


def probe_truth(pixel_size: float = 0.25) -> CalibrationParams:
    return CalibrationParams(
        sx=pixel_size, sy=pixel_size,
        rTp_pose=Pose6(12.0, -25.0, 40.0, 0.12, -0.08, 0.15),
        cTt_pose=Pose6(0.0, 0.0, -350.0, 0.0, 0.06, -0.04),
    )


def _depth(calib, height):
    return calib.sy * (height - 1)


def temporal_dataset(calib: CalibrationParams, delay: int = 0, n: int = 300, rate: float = 30.0,
                     size=(128, 128), noise: float = 5.0, seed: int = 0) -> SynthResult:
    """Up-down oscillation over the tank floor."""
    w, h = size
    depth = _depth(calib, h)
    traj = updown_trajectory(n, rate, base_height=0.5 * depth, amplitude=0.25 * depth,
                             period=1.5, x=-0.5 * calib.sx * (w - 1))
    spec = PhantomSpec("plane", noise_sigma=noise, width=w, height=h, rate=rate,
                       trajectory=traj, calibration=calib, delay=delay, seed=seed)
    return synth_phantom(spec)


def spatial_dataset(calib: CalibrationParams, delay: int = 0, n: int = 90, rate: float = 30.0,
                    size=(128, 128), noise: float = 5.0, seed: int = 1) -> SynthResult:
    """Plane-phantom calibration motions; each pose is held for a few frames
    so that a residual delay does not corrupt the pairing."""
    w, h = size
    depth = _depth(calib, h)
    hold = max(1, 2 * abs(delay) + 1)
    distinct = prager_trajectory(-(-n // hold), seed=seed, height=(0.25 * depth, 0.75 * depth),
                                 max_roll=0.35, max_pitch=0.5, xy_range=20.0)
    # centre the image laterally over the pose position
    shift = np.array([-0.5 * calib.sx * (w - 1), 0.0, 0.0, 1.0])
    traj = []
    for T in distinct:
        M = T.matrix.copy()
        M[:3, 3] = (M @ shift)[:3]
        traj += [type(T)(M)] * hold
    traj = traj[:n]
    spec = PhantomSpec("plane", noise_sigma=noise, width=w, height=h, rate=rate,
                       trajectory=traj, calibration=calib, delay=delay, seed=seed)
    return synth_phantom(spec)


def sphere_dataset(calib: CalibrationParams, delay: int = 0, n: int = 100, rate: float = 30.0,
                   size=(128, 128), noise: float = 0.0, radius: float = 10.0,
                   sweep: float = 36.0, wobble: float = 0.03, seed: int = 2) -> SynthResult:
    """Slow sweep across a sphere centred at the phantom origin."""
    w, h = size
    half_w = 0.5 * calib.sx * (w - 1)
    top = 0.5 * _depth(calib, h)
    ys = np.linspace(-sweep / 2, sweep / 2, n)
    k = np.arange(n)
    traj = [probe_pose(-half_w, y, top, yaw=wobble * np.sin(0.21 * i), roll=wobble * np.sin(0.13 * i))
            for i, y in zip(k, ys)]
    spec = PhantomSpec("sphere", radius=radius, edge_width=2.0, noise_sigma=noise, width=w, height=h,
                       rate=rate, trajectory=traj, calibration=calib, delay=delay, seed=seed)
    return synth_phantom(spec)
