import numpy as np
import pytest

from usrecon.calibration import CalibrationParams
from usrecon.geometry import Pose6, rot_z
from usrecon.phantom import PROBE_DOWN, PhantomSpec, linear_sweep, synth_phantom
from usrecon.refine import InsufficientOverlapError, hidden_translation_axis, ncc, refine_by_compounding

TRUTH = CalibrationParams(0.4, 0.4, Pose6(5, -8, 20, 0.1, -0.05, 0.08), Pose6())
W = 64
L = (W - 1) * 0.4


def sweep(traj):
    spec = PhantomSpec("sphere", radius=8.0, edge_width=3.0, width=W, height=W,
                       trajectory=traj, calibration=TRUTH)
    return synth_phantom(spec).sequence


@pytest.fixture(scope="module")
def crossed():
    a = sweep(linear_sweep(32, (L / 2, -L / 2, L / 2), (-L / 31, 0, 0), rot_z(np.pi / 2) @ PROBE_DOWN))
    b = sweep(linear_sweep(32, (-L / 2, -L / 2, L / 2), (0, L / 31, 0), PROBE_DOWN))
    return a, b


def test_ncc_basics():
    x = np.arange(10.0)
    assert ncc(x, 2 * x + 3) == pytest.approx(1.0)
    assert ncc(x, -x) == pytest.approx(-1.0)
    assert ncc(x, np.ones(10)) == 0.0


def test_hidden_axis_is_unit(crossed):
    axis = hidden_translation_axis(*crossed)
    assert axis is not None and np.linalg.norm(axis) == pytest.approx(1.0)


def test_fixed_point(crossed):
    rep = refine_by_compounding(*crossed, TRUTH, spacing=1.0)
    assert np.array_equal(rep.params.to_vector(), TRUTH.to_vector())
    assert rep.ncc >= rep.ncc_initial and rep.overlap >= 1000


@pytest.mark.parametrize("dz", [2.0, -2.0])
def test_z1_offset_reduced(crossed, dz):
    start = TRUTH.replace(z1=TRUTH.rTp_pose.z + dz)
    rep = refine_by_compounding(*crossed, start, spacing=1.0)
    assert abs(rep.params.rTp_pose.z - TRUTH.rTp_pose.z) < 0.5
    assert rep.ncc >= rep.ncc_initial


def test_disjoint_sweeps(crossed):
    a, _ = crossed
    far = sweep(linear_sweep(8, (500, 500, L / 2), (0, 1, 0), PROBE_DOWN))
    with pytest.raises(InsufficientOverlapError):
        refine_by_compounding(a, far, TRUTH, spacing=1.0)
