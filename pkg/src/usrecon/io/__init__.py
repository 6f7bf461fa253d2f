"""File formats: PGM frame sequences, pose CSV, C3D markers, VTI volumes, key=value files."""
from .c3d import C3dFile, read_c3d, read_c3d_points, write_c3d_points
from .errors import FormatError, UnsupportedDepthError, UnsupportedFormatError
from .keyvalue import (read_calibration, read_covariance_csv, read_kv, write_calibration,
                       write_covariance_csv, write_kv)
from .pgm import read_frames, read_pgm, read_sidecar, write_frames, write_pgm
from .poses import read_pose_csv, write_pose_csv
from .vti import load_accumulator, mask_path, read_vti, save_accumulator, save_npz, write_vti

__all__ = [
    "C3dFile", "FormatError", "UnsupportedDepthError", "UnsupportedFormatError",
    "load_accumulator", "read_c3d", "read_c3d_points", "read_calibration", "read_covariance_csv",
    "read_frames", "read_kv", "read_pgm", "read_pose_csv", "read_sidecar", "read_vti",
    "mask_path", "save_accumulator", "save_npz", "write_c3d_points", "write_calibration", "write_covariance_csv",
    "write_frames", "write_kv", "write_pgm", "write_pose_csv", "write_vti",
]
