import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from usrecon.calibration import CalibrationParams
from usrecon.compounding import (EmptySequenceError, ScanSequence, VoxelArray, compound, compute_bounds,
                                 idx2xyz, insert_frame, round_half_away, xyz2idx)
from usrecon.geometry import Pose6, RigidTransform, make_transform, rot_z
from usrecon.imaging import Frame

CAL = CalibrationParams(1.0, 1.0)


def single_pixel(value):
    return Frame(np.array([[value]], np.uint8), 1.0, 1.0)


def grid(dims=(4, 4, 4)):
    return VoxelArray(dims, 1.0, RigidTransform.identity())


def test_xyz2idx_examples():
    assert xyz2idx(0, 0, 0, 7, 5, 3) == 0
    assert xyz2idx(6, 4, 2, 7, 5, 3) == 7 * 5 * 3 - 1
    assert xyz2idx(1, 0, 0, 7, 5, 3) == 1 and xyz2idx(0, 1, 0, 7, 5, 3) == 7


def test_xyz2idx_exhaustive_round_trip():
    dims = (7, 5, 3)
    seen = set()
    for z in range(3):
        for y in range(5):
            for x in range(7):
                i = xyz2idx(x, y, z, *dims)
                seen.add(int(i))
                assert tuple(int(c) for c in idx2xyz(i, *dims)) == (x, y, z)
    assert seen == set(range(105))


def test_xyz2idx_out_of_range():
    with pytest.raises(IndexError):
        xyz2idx(7, 0, 0, 7, 5, 3)
    with pytest.raises(IndexError):
        idx2xyz(105, 7, 5, 3)


@given(st.integers(1, 2000), st.integers(1, 2000), st.integers(1, 2000), st.data())
def test_xyz2idx_bijective_large(xl, yl, zl, data):
    i = data.draw(st.integers(0, xl * yl * zl - 1))
    assert xyz2idx(*idx2xyz(i, xl, yl, zl), xl, yl, zl) == i


def test_round_half_away():
    assert np.array_equal(round_half_away([0.5, 1.5, -0.5, -1.5, 0.49]), [1, 2, -1, -2, 0])


def test_single_contribution():
    va = grid()
    insert_frame(va, single_pixel(100), make_transform(Pose6(1, 2, 3)), CAL)
    i = xyz2idx(1, 2, 3, 4, 4, 4)
    assert va.values[i] == 100 and va.contributions[i] == 1


def test_two_contributions_average():
    va = grid()
    pose = make_transform(Pose6(1, 1, 1))
    insert_frame(va, single_pixel(100), pose, CAL)
    insert_frame(va, single_pixel(50), pose, CAL)
    assert va.values[xyz2idx(1, 1, 1, 4, 4, 4)] == 75


@pytest.mark.parametrize("order", [(10, 20, 60), (60, 10, 20), (20, 60, 10)])
def test_three_contributions_any_order(order):
    va = grid()
    pose = make_transform(Pose6(2, 2, 2))
    for v in order:
        insert_frame(va, single_pixel(v), pose, CAL)
    assert va.values[xyz2idx(2, 2, 2, 4, 4, 4)] == pytest.approx(30, abs=1e-6)


@given(st.lists(st.integers(0, 255), min_size=1, max_size=10**4))
def test_running_mean_equivalence(values):
    running, count = 0.0, 0
    for v in values:
        running = (count * running) / (count + 1) + v / (count + 1)
        count += 1
    # every pixel of a very fine frame lands in voxel 0
    fine = CalibrationParams(1e-7, 1.0)
    va = grid((1, 1, 1))
    insert_frame(va, Frame(np.array([values], np.uint8), 1e-7, 1.0), RigidTransform.identity(), fine)
    assert va.contributions[0] == len(values)
    assert va.values[0] == pytest.approx(running, abs=1e-6)


def test_out_of_grid_pixels_skipped():
    va = grid((2, 2, 2))
    img = np.full((1, 4), 9, np.uint8)
    insert_frame(va, Frame(img, 1.0, 1.0), RigidTransform.identity(), CAL)
    assert va.skipped == [2]
    assert va.contributions.sum() == 2


def _sweep(n=6, size=(12, 10), seed=0):
    rng = np.random.default_rng(seed)
    frames = [Frame(rng.integers(0, 256, size[::-1]).astype(np.uint8), 0.5, 0.5) for _ in range(n)]
    poses = [make_transform(Pose6(0.3 * i, 0.1 * i, 0.7 * i, 0.05 * i, 0.4, 0.1)) for i in range(n)]
    return ScanSequence(frames, poses, CalibrationParams(0.5, 0.5))


def test_order_invariance():
    seq = _sweep()
    a = compound(seq, spacing=0.5)
    perm = [5, 2, 0, 4, 1, 3]
    b = compound(ScanSequence([seq.frames[i] for i in perm], [seq.poses[i] for i in perm], seq.calibration),
                 va=compute_bounds(seq, spacing=0.5))
    assert np.abs(a.values - b.values).max() < 1e-6
    assert np.array_equal(a.contributions, b.contributions)


def test_threads_match_serial():
    seq = _sweep(9)
    one = compound(seq, spacing=0.5, threads=1)
    four = compound(seq, spacing=0.5, threads=4)
    assert np.abs(one.values - four.values).max() < 1e-6


def test_empty_voxels_stay_zero():
    va = compound(_sweep(), spacing=0.3)
    assert np.all(va.values[va.contributions == 0] == 0)


def test_identical_frames_identical_pose():
    img = np.arange(20, dtype=np.uint8).reshape(4, 5) * 10
    pose = make_transform(Pose6(1, 1, 1, 0, 0, 0))
    seq = ScanSequence([Frame(img, 1.0, 1.0)] * 3, [pose] * 3, CAL)
    va = compound(seq)
    assert va.dims == (5, 4, 1)
    assert np.array_equal(va.volume()[0], img)


def test_empty_sequence():
    with pytest.raises(EmptySequenceError):
        ScanSequence([], [], CAL)


def test_single_frame_bounds():
    f = Frame(np.zeros((21, 31), np.uint8), 0.5, 0.5)
    va = compute_bounds(ScanSequence([f], [RigidTransform.identity()], CalibrationParams(0.5, 0.5)))
    assert va.dims == (31, 21, 1)
    assert np.allclose((np.array(va.dims) - 1) * va.spacing, [15, 10, 0])
    assert np.allclose(va.origin, 0)


def test_parallel_frames_ten_mm_apart():
    f = Frame(np.zeros((11, 11), np.uint8), 1.0, 1.0)
    poses = [RigidTransform.identity(), make_transform(Pose6(0, 0, 10))]
    va = compute_bounds(ScanSequence([f, f], poses, CAL))
    assert va.dims == (11, 11, 11)


def test_pca_box_smaller_for_diagonal_sweep():
    f = Frame(np.zeros((10, 20), np.uint8), 1.0, 1.0)
    poses = [RigidTransform.from_rt(rot_z(np.pi / 4) @ np.array([[1, 0, 0], [0, 0, 1], [0, -1, 0.0]]),
                                    [2.0 * i, 2.0 * i, 0]) for i in range(30)]
    seq = ScanSequence([f] * 30, poses, CAL)
    world = compute_bounds(seq, mode="manual")
    pca = compute_bounds(seq, mode="pca")
    assert np.prod(pca.dims) < np.prod(world.dims)
    # both boxes hold every contribution
    assert compound(seq, va=pca).skipped == [0] * 30


def test_manual_rotation():
    seq = _sweep()
    va = compute_bounds(seq, rotation=rot_z(0.3), spacing=0.5)
    assert np.allclose(va.world_from_grid.rotation, rot_z(0.3))
