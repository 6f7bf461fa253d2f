"""Flat ``key=value`` run configuration merged with command-line flags.

Keys are the long flag names (``max-cube-size`` or ``max_cube_size``).
Precedence: built-in defaults < config file < explicit flags. Validation
collects every problem before failing.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .gapfill import GapFillConfig
from .imaging import LineDetectionConfig
from .io.keyvalue import read_kv


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Option:
    name: str
    type: type
    default: object
    help: str
    path: str | None = None  # "dir" or "file" (must exist) or "out"
    choices: tuple | None = None
    minimum: float | None = None
    maximum: float | None = None
    required: bool = False

    @property
    def dest(self):
        return self.name.replace("-", "_")


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


LINE_OPTIONS = [
    Option("th-i", float, 0.5, "intensity threshold as a fraction of the frame maximum (0-1)",
           minimum=0.0, maximum=1.0),
    Option("th-can1", float, 50.0, "Canny low hysteresis threshold (gradient units)", minimum=0.0),
    Option("th-can2", float, 150.0, "Canny high hysteresis threshold (gradient units)", minimum=0.0),
    Option("ker-size-can", int, 3, "Sobel aperture (px, odd)", minimum=1),
    Option("ker-size-dil", int, 3, "dilation kernel size (px)", minimum=1),
    Option("th-hou", int, 50, "Hough accumulator threshold (votes)", minimum=1),
    Option("min-line-length", float, 0.0, "minimum segment length (px, 0 = image width / 3)", minimum=0.0),
    Option("max-line-gap", float, 10.0, "largest gap bridged inside a segment (px)", minimum=0.0),
    Option("hough-seed", int, 0, "seed of the probabilistic Hough sampling (integer)"),
]

GAPFILL_OPTIONS = [
    Option("method", str, "avg-cube", "gap filling method", choices=("avg-cube", "vnn")),
    Option("min-nongap-pct", float, 25.0, "non-gap share needed inside the cube (%)", minimum=0.0, maximum=100.0),
    Option("max-cube-size", int, 5, "largest cube side (voxels, odd)", minimum=3),
    Option("n-blocks", int, 1, "number of slabs processed one at a time (count)", minimum=1),
    Option("weight-power", float, 1.0, "inverse-distance weight exponent (unitless)", minimum=0.0),
]

DELAY_OPTIONS = [
    Option("delay-file", str, None, "delay file written by calibrate-temporal", path="file"),
    Option("delay", float, None, "delay override (s, positive when images lag poses)"),
    Option("pose-interp", str, "slerp", "pose at each frame time", choices=("slerp", "nearest")),
]


def read_config_file(path) -> dict:
    return {k.replace("-", "_"): v for k, v in read_kv(path).items()}


def resolve(options, file_values: dict | None = None, flag_values: dict | None = None) -> dict:
    """Merge defaults, file and flags; raise :class:`ConfigError` listing every problem."""
    problems = []
    by_dest = {o.dest: o for o in options}
    cfg = {o.dest: o.default for o in options}
    for key, raw in (file_values or {}).items():
        opt = by_dest.get(key)
        if opt is None:
            problems.append(f"config: unknown key {key!r}")
            continue
        try:
            cfg[key] = _bool(raw) if opt.type is bool else opt.type(raw)
        except ValueError:
            problems.append(f"{opt.name}: cannot parse {raw!r} as {opt.type.__name__}")
    for key, value in (flag_values or {}).items():
        if key in by_dest and value is not None:
            cfg[key] = value
    for opt in options:
        v = cfg[opt.dest]
        if v is None:
            if opt.required:
                problems.append(f"{opt.name}: required")
            continue
        if opt.choices and v not in opt.choices:
            problems.append(f"{opt.name}: {v!r} not one of {', '.join(opt.choices)}")
        if opt.minimum is not None and v < opt.minimum:
            problems.append(f"{opt.name}: {v} below minimum {opt.minimum}")
        if opt.maximum is not None and v > opt.maximum:
            problems.append(f"{opt.name}: {v} above maximum {opt.maximum}")
        if opt.path == "dir" and not Path(v).is_dir():
            problems.append(f"{opt.name}: directory does not exist: {v}")
        elif opt.path == "file" and not Path(v).is_file():
            problems.append(f"{opt.name}: file does not exist: {v}")
        elif opt.path == "out" and not Path(v).resolve().parent.is_dir():
            problems.append(f"{opt.name}: parent directory does not exist: {v}")
    if problems:
        raise ConfigError(problems)
    return cfg


def line_config(cfg: dict) -> LineDetectionConfig:
    return LineDetectionConfig(
        thI=cfg["th_i"], thCan1=cfg["th_can1"], thCan2=cfg["th_can2"],
        kerSizeCan=cfg["ker_size_can"], kerSizeDil=cfg["ker_size_dil"], thHou=cfg["th_hou"],
        minLineLength=cfg["min_line_length"] or None, maxLineGap=cfg["max_line_gap"],
        seed=cfg["hough_seed"])


def gapfill_config(cfg: dict) -> GapFillConfig:
    return GapFillConfig(method=cfg["method"], min_nongap_pct=cfg["min_nongap_pct"],
                         max_cube_size=cfg["max_cube_size"], n_blocks=cfg["n_blocks"],
                         weight_power=cfg["weight_power"])
