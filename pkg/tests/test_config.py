import numpy as np
import pytest

from electrolocation.config import (ConfigError, ExperimentConfig, bundled_configs, harmonics_of,
                                    load_config, parse_config, seed_schedule)

FIGURES = ["fig2", "fig3a", "fig3b", "fig3c", "fig3d", "fig3e", "fig3f", "fig4", "fig5", "fig6",
           "fig7", "fig8", "fig9", "table2", "table3", "table4"]


# --------------------------------------------------------------------------
# seeds

def test_seed_is_reproducible():
    assert seed_schedule(2011, 17, 3) == seed_schedule(2011, 17, 3)


def test_seed_schedule_has_no_collisions():
    seeds = {seed_schedule(2011, i, j) for i in range(250) for j in range(5)}
    assert len(seeds) == 250 * 5


def test_masters_give_disjoint_streams():
    a = {seed_schedule(1, i, j) for i in range(200) for j in range(5)}
    b = {seed_schedule(2, i, j) for i in range(200) for j in range(5)}
    assert len(a) == len(b) == 1000 and not (a & b)


def test_seed_is_64_bit_and_rejects_negatives():
    s = seed_schedule(0, 0, 0)
    assert 0 <= s < 2 ** 64
    with pytest.raises(ValueError):
        seed_schedule(-1, 0, 0)


def test_seed_pinned_value():
    # the schedule is a documented function of its inputs; pin it across platforms
    expect = int(np.random.SeedSequence([2011, 1, 2]).generate_state(1, np.uint64)[0])
    assert seed_schedule(2011, 1, 2) == expect


# --------------------------------------------------------------------------
# schema

GOOD = """\
name: demo
kind: locate
target:
  shape: {type: disk, radius: 0.05}
  center: [0.75, 1.3]
spectrum:
  frequencies: 10
"""


def test_minimal_config_gets_defaults():
    cfg = parse_config(GOOD)
    assert cfg.name == "demo" and cfg.kind == "locate"
    assert cfg["fish"]["sensors"] == 64 and cfg["grid"]["resolution"] == [151, 151]
    assert cfg["spectrum"]["k"] == 2.0


@pytest.mark.parametrize("text, line, path", [
    (GOOD.replace("radius: 0.05", "radius: -0.05"), 4, "target.shape.radius"),
    (GOOD.replace("frequencies: 10", "frequencies: ten"), 7, "spectrum.frequencies"),
    (GOOD + "grid:\n  resolution: [151]\n", 9, "grid.resolution"),
    (GOOD + "noise:\n  stage: before\n", 9, "noise.stage"),
    (GOOD + "mesh: {body: 8}\n", 8, "mesh.body"),
    (GOOD.replace("kind: locate", "kind: paint"), 2, "kind"),
])
def test_schema_errors_are_line_precise(text, line, path):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "demo.yaml")
    err = info.value
    assert err.line == line
    assert ".".join(map(str, err.path)) == path
    assert str(err).startswith(f"demo.yaml:{line}: {path}:")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(GOOD + "colour: blue\n")


def test_target_required_for_imaging():
    with pytest.raises(ConfigError, match="target"):
        parse_config("name: x\nkind: locate\n")


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as info:
        parse_config("name: x\nkind: [locate\n")
    assert info.value.line is not None


def test_roundtrip_and_hash():
    cfg = parse_config(GOOD)
    again = parse_config(cfg.dumps())
    assert again.data == cfg.data
    assert again.hash == cfg.hash
    changed = cfg.with_overrides(noise={"seed": 7})
    assert changed.hash != cfg.hash and changed.text == cfg.text
    assert isinstance(changed, ExperimentConfig)


def test_harmonics():
    assert harmonics_of(3) == (1, 2, 3)
    assert harmonics_of([2, 5]) == (2, 5)
    assert harmonics_of({"repeat": 1, "count": 4}) == (1, 1, 1, 1)


# --------------------------------------------------------------------------
# bundled configs

def test_one_config_per_figure_and_table():
    names = bundled_configs()
    for f in FIGURES:
        assert names.count(f) == 1
    assert set(names) == set(FIGURES) | {"validate", "scaling"}


@pytest.mark.parametrize("name", FIGURES + ["validate", "scaling"])
def test_bundled_config_loads(name):
    cfg = load_config(name)
    assert cfg.name == name
    assert parse_config(cfg.dumps()).hash == cfg.hash


def test_missing_config():
    with pytest.raises(FileNotFoundError):
        load_config("fig99")
