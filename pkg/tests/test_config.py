import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield.config import ConfigError, ExperimentConfig, load_config, parse_config


def test_minimal_config_defaults():
    cfg = parse_config("surface = disk\n")
    assert cfg.surface == "disk"
    assert cfg.h == 0.05 and cfg.kappa == 0.3 and cfg.r0 == 0.2 and cfg.tol == 1e-9
    assert cfg.potential == "1" and cfg.lam is None
    assert cfg.resolved_backend == "disk-images"
    assert parse_config("surface = cap").resolved_backend == "fem"


def test_sections_and_comments():
    text = """
    # an experiment
    [surface]
    name = cylinder   # trailing comment
    L = 3
    potential = exp(0.1*x)
    [points]
    boundary = 0 0.5; 1 1.0
    [family]
    schedule = 12.0; 12.4; 12.8
    """
    cfg = parse_config(text)
    assert cfg.length == 3.0
    assert cfg.boundary == ((0, 0.5), (1, 1.0))
    assert cfg.schedule == (12.0, 12.4, 12.8)
    assert cfg.surface_params == {"L": 3.0}


@pytest.mark.parametrize("text, needle", [
    ("", "surface.name"),
    ("surface = disk\n[ansatz]\nkappa = 1.5\n", "kappa"),
    ("surface = disk\n[mesh]\nh = 0.1\nh = 0.2\n", "duplicate key"),
    ("surface = disk\n[mesh]\nsize = 0.1\n", "unknown key"),
    ("surface = disk\n[meshes]\n", "unknown section"),
    ("surface = disk\n[mesh]\n[mesh]\n", "duplicate section"),
    ("surface = disk\n[solver]\nmax_iter = 2.5\n", "max_iter"),
    ("surface = disk\n[solver]\ntol = nan\n", "tol"),
    ("surface = torus\n", "surface.name"),
    ("surface = disk\n[points]\nboundary = 1 0.0\n", "component 1"),
    ("surface = cap\n[green]\nbackend = disk-images\n", "disk-images"),
    ("surface = disk\n[points]\ninterior = 0 0\nk = 0\n", "points.k"),
    ("surface = disk\n[family]\nschedule = 1; 3; 2\n", "monotone"),
    ("surface = disk\njunk\n", "key = value"),
])
def test_errors_name_the_field(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_error_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("surface = disk\n[ansatz]\n\nkappa = 1.5\n")
    assert info.value.line == 4
    assert str(info.value).startswith("line 4:")


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")
    p = tmp_path / "latin.cfg"
    p.write_bytes(b"surface = disk # \xe9\n")
    with pytest.raises(ConfigError, match="UTF-8"):
        load_config(p)


finite = st.floats(0.01, 0.99, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(
    surface=st.sampled_from(["disk", "cylinder", "cap"]),
    h=finite, kappa=finite, r0=st.floats(0.01, 1.0),
    pts=st.lists(st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)), max_size=3),
    lam=st.one_of(st.none(), st.floats(0, 100)),
    steps=st.integers(1, 12),
)
def test_round_trip(surface, h, kappa, r0, pts, lam, steps):
    cfg = ExperimentConfig(surface=surface, h=h, kappa=kappa, r0=r0, interior=tuple(pts), lam=lam, steps=steps,
                           theta0=math.pi / 3)
    again = parse_config(cfg.to_text())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_digest_changes_with_content():
    a = parse_config("surface = disk\n")
    b = parse_config("surface = disk\n[mesh]\nh = 0.04\n")
    assert a.digest() != b.digest()
    # comments and layout do not enter the canonical form
    assert a.digest() == parse_config("# note\n[surface]\nname = disk\n").digest()
