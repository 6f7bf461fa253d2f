import pytest

from usrecon.config import (GAPFILL_OPTIONS, LINE_OPTIONS, ConfigError, Option, gapfill_config, line_config,
                            read_config_file, resolve)

OPTS = [Option("size", int, 3, "cube side (voxels)", minimum=1),
        Option("method", str, "a", "method", choices=("a", "b")),
        Option("ratio", float, 0.5, "fraction (0-1)", minimum=0.0, maximum=1.0)]


def test_defaults():
    assert resolve(OPTS) == {"size": 3, "method": "a", "ratio": 0.5}


def test_file_then_flags():
    cfg = resolve(OPTS, {"size": "7", "ratio": "0.25"}, {"size": 9, "ratio": None})
    assert cfg == {"size": 9, "method": "a", "ratio": 0.25}


def test_every_problem_listed():
    with pytest.raises(ConfigError) as info:
        resolve(OPTS, {"size": "seven", "colour": "red", "method": "c"}, {"ratio": 2.0})
    text = "\n".join(info.value.problems)
    assert len(info.value.problems) == 4
    for piece in ("size: cannot parse", "unknown key 'colour'", "method: 'c' not one of", "ratio: 2.0 above"):
        assert piece in text


def test_paths(tmp_path):
    opts = [Option("src", str, None, "input", path="dir", required=True),
            Option("dst", str, None, "output", path="out")]
    with pytest.raises(ConfigError, match="src: required"):
        resolve(opts)
    with pytest.raises(ConfigError) as info:
        resolve(opts, flag_values={"src": str(tmp_path / "nope"), "dst": str(tmp_path / "a" / "b.txt")})
    assert len(info.value.problems) == 2
    assert resolve(opts, flag_values={"src": str(tmp_path), "dst": str(tmp_path / "b.txt")})["src"] == str(tmp_path)


def test_config_file_dashes(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# run\nmax-cube-size = 7\nmethod=vnn\n")
    cfg = resolve(GAPFILL_OPTIONS, read_config_file(p))
    g = gapfill_config(cfg)
    assert g.max_cube_size == 7 and g.method == "vnn"


def test_line_config_zero_length_means_auto():
    cfg = resolve(LINE_OPTIONS)
    assert line_config(cfg).minLineLength is None
    assert line_config(resolve(LINE_OPTIONS, flag_values={"min_line_length": 20.0})).minLineLength == 20.0


def test_even_cube_rejected():
    with pytest.raises(ValueError):
        gapfill_config(resolve(GAPFILL_OPTIONS, {"max_cube_size": "4"}))
