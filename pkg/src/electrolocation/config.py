"""Experiment configuration: YAML loading, schema checks, hashing, seeds.

A config is a YAML mapping::

    name: fig3a
    kind: locate        # validate | forward | locate | noise-stats |
                        # characterize-disk | characterize-ellipse | scaling
    fish:     {body: {type: ellipse, semi_axes: [1, 0.3]}, xi: 0.1,
               dipole: [0.7, 0], moment: [1, 0], sensors: 64}
    target:   {shape: {type: disk, radius: 0.05}, center: [0.75, 1.299], k: 2, eps: 1}
    spectrum: {omega0: 1, frequencies: 10}
    mesh:     {body: 256, target: 128, quadrature: 8}
    grid:     {window: [-3, 3, -3, 3], resolution: [151, 151], margin: 0.1, rank: 1}
    noise:    {zetas: [0.01], trials: 50, seed: 20240101, stage: raw}
    study:    {...}     # kind-specific block, see ``experiments``

Frequencies are either a count ``N`` (harmonics ``1..N``), an explicit list,
or ``{repeat: n, count: c}`` for ``c`` copies of harmonic ``n``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

KINDS = ("validate", "forward", "locate", "noise-stats", "characterize-disk",
         "characterize-ellipse", "scaling")


class ConfigError(ValueError):
    """Schema violation, reported with the YAML line and the config path."""

    def __init__(self, message: str, path: tuple = (), line: int | None = None, source: str | None = None):
        self.path = path
        self.line = line
        self.source = source
        where = ".".join(str(p) for p in path) or "<root>"
        loc = f"{source or '<config>'}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {where}: {message}")


class ConfigGeometryError(ConfigError):
    """Geometry conflict (target meets fish, organ outside body, bad curve) at a config path."""


def seed_schedule(master_seed: int, trial: int, zeta_index: int) -> int:
    """Per-trial 64-bit seed.

    The triple ``(master_seed, trial, zeta_index)`` is hashed by numpy's
    ``SeedSequence`` (a documented, platform-independent mixing function) and
    the first 64-bit word of its output is returned.
    """
    for v in (master_seed, trial, zeta_index):
        if int(v) < 0:
            raise ValueError("seed components must be non-negative integers")
    ss = np.random.SeedSequence([int(master_seed), int(trial), int(zeta_index)])
    return int(ss.generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# schema

NUM = (int, float)

# leaf validators: (type(s), predicate or None, description)
_SCHEMA = {
    "name": (str, None),
    "kind": (str, lambda v: v in KINDS),
    "description": (str, None),
    "fish": {
        "body": "curve",
        "xi": (NUM, lambda v: v >= 0),
        "dipole": ("point", None),
        "moment": ("point", None),
        "sensors": (int, lambda v: v >= 2),
    },
    "target": "target",
    "spectrum": {
        "k": (NUM, lambda v: v > 0),
        "eps": (NUM, lambda v: v >= 0),
        "omega0": (NUM, lambda v: v > 0),
        "frequencies": ("frequencies", None),
    },
    "mesh": {
        "body": (int, lambda v: v >= 16),
        "target": (int, lambda v: v >= 16 and v % 2 == 0),
        "quadrature": (int, lambda v: 2 <= v <= 20),
    },
    "grid": {
        "window": ("list4", lambda v: v[0] < v[1] and v[2] < v[3]),
        "resolution": ("list2int", lambda v: v[0] >= 2 and v[1] >= 2),
        "margin": (NUM, lambda v: v >= 0),
        "rank": (int, lambda v: v in (1, 2)),
        "cap": (NUM, lambda v: v > 0),
    },
    "noise": {
        "zetas": ("numlist", lambda v: all(z >= 0 for z in v)),
        "trials": (int, lambda v: v >= 1),
        "seed": (int, lambda v: v >= 0),
        "stage": (str, lambda v: v in ("raw", "postprocessed")),
    },
    "study": "free",
    "output": {"dir": (str, None)},
}

DEFAULTS = {
    "description": "",
    "fish": {"body": {"type": "ellipse", "center": [0.0, 0.0], "semi_axes": [1.0, 0.3], "angle": 0.0},
             "xi": 0.1, "dipole": [0.7, 0.0], "moment": [1.0, 0.0], "sensors": 64},
    "spectrum": {"k": 2.0, "eps": 1.0, "omega0": 1.0, "frequencies": 10},
    "mesh": {"body": 256, "target": 128, "quadrature": 8},
    "grid": {"window": [-3.0, 3.0, -3.0, 3.0], "resolution": [151, 151], "margin": 0.1, "rank": 1, "cap": 1e12},
    "noise": {"zetas": [0.0], "trials": 1, "seed": 12345, "stage": "raw"},
    "study": {},
    "output": {"dir": "out"},
}


def _line_of(node_map: dict, path: tuple):
    return node_map.get(path)


def _index_nodes(node, path=(), out=None):
    """Map config paths to 1-based YAML line numbers."""
    out = {} if out is None else out
    if node is None:
        return out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _index_nodes(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _index_nodes(v, path + (i,), out)
    return out


class _Checker:
    def __init__(self, lines: dict, source: str | None):
        self.lines = lines
        self.source = source

    def fail(self, msg, path):
        line = None
        p = tuple(path)
        while line is None and p:
            line = self.lines.get(p)
            p = p[:-1]
        if line is None:
            line = self.lines.get(())
        raise ConfigError(msg, tuple(path), line, self.source)

    # -- leaves ------------------------------------------------------------
    def number(self, v, path):
        if isinstance(v, bool) or not isinstance(v, NUM):
            self.fail(f"expected a number, got {type(v).__name__}", path)

    def point(self, v, path):
        if not isinstance(v, list) or len(v) != 2:
            self.fail("expected a 2-element list [x, y]", path)
        for i, c in enumerate(v):
            self.number(c, path + (i,))

    def leaf(self, spec, v, path):
        typ, pred = spec
        if typ == "point":
            self.point(v, path)
        elif typ == "list4":
            if not isinstance(v, list) or len(v) != 4:
                self.fail("expected [xmin, xmax, ymin, ymax]", path)
            for i, c in enumerate(v):
                self.number(c, path + (i,))
        elif typ == "list2int":
            if not isinstance(v, list) or len(v) != 2 or not all(isinstance(c, int) and not isinstance(c, bool) for c in v):
                self.fail("expected a 2-element integer list", path)
        elif typ == "numlist":
            if not isinstance(v, list) or not v:
                self.fail("expected a non-empty list of numbers", path)
            for i, c in enumerate(v):
                self.number(c, path + (i,))
        elif typ == "frequencies":
            self.frequencies(v, path)
        elif typ is int:
            if isinstance(v, bool) or not isinstance(v, int):
                self.fail(f"expected an integer, got {type(v).__name__}", path)
        elif typ is NUM:
            self.number(v, path)
        elif typ is str:
            if not isinstance(v, str):
                self.fail(f"expected a string, got {type(v).__name__}", path)
        if pred is not None and not pred(v):
            self.fail(f"value {v!r} is out of range", path)

    def frequencies(self, v, path):
        if isinstance(v, int) and not isinstance(v, bool):
            if v < 1:
                self.fail("frequency count must be >= 1", path)
        elif isinstance(v, list):
            if not v:
                self.fail("frequency list is empty", path)
            for i, n in enumerate(v):
                if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                    self.fail("harmonic indices must be positive integers", path + (i,))
        elif isinstance(v, dict):
            extra = set(v) - {"repeat", "count"}
            if extra or set(v) != {"repeat", "count"}:
                self.fail("repeated frequencies need exactly 'repeat' and 'count'", path)
            for key in ("repeat", "count"):
                if isinstance(v[key], bool) or not isinstance(v[key], int) or v[key] < 1:
                    self.fail("expected a positive integer", path + (key,))
        else:
            self.fail("frequencies must be a count, a list, or {repeat, count}", path)

    def curve(self, v, path, target=False):
        if not isinstance(v, dict):
            self.fail("curve must be a mapping with a 'type'", path)
        typ = v.get("type")
        allowed = {"disk": {"type", "radius", "center"},
                   "ellipse": {"type", "semi_axes", "angle", "center"},
                   "fourier": {"type", "cos", "sin", "center"}}
        if typ not in allowed or (typ == "disk" and not target):
            self.fail(f"unknown curve type {typ!r}", path + ("type",))
        extra = set(v) - allowed[typ]
        if extra:
            self.fail(f"unknown keys {sorted(extra)}", path + (sorted(extra)[0],))
        if "center" in v:
            self.point(v["center"], path + ("center",))
        if typ == "disk":
            self.leaf((NUM, lambda r: r > 0), v.get("radius"), path + ("radius",))
        elif typ == "ellipse":
            ax = v.get("semi_axes")
            self.point(ax, path + ("semi_axes",))
            if ax[0] <= 0 or ax[1] <= 0:
                self.fail("semi-axes must be positive", path + ("semi_axes",))
            if "angle" in v:
                self.number(v["angle"], path + ("angle",))
        else:
            self.leaf(("numlist", None), v.get("cos"), path + ("cos",))
            if "sin" in v:
                if not isinstance(v["sin"], list):
                    self.fail("expected a list", path + ("sin",))
                for i, c in enumerate(v["sin"]):
                    self.number(c, path + ("sin", i))

    def target(self, v, path):
        if not isinstance(v, dict):
            self.fail("target must be a mapping", path)
        extra = set(v) - {"shape", "center", "k", "eps"}
        if extra:
            self.fail(f"unknown keys {sorted(extra)}", path + (sorted(extra)[0],))
        if "shape" not in v:
            self.fail("target needs a 'shape'", path)
        self.curve(v["shape"], path + ("shape",), target=True)
        self.point(v.get("center"), path + ("center",))
        if "k" in v:
            self.leaf((NUM, lambda x: x > 0), v["k"], path + ("k",))
        if "eps" in v:
            self.leaf((NUM, lambda x: x >= 0), v["eps"], path + ("eps",))

    def section(self, schema, v, path):
        if schema == "free":
            if not isinstance(v, dict):
                self.fail("expected a mapping", path)
            return
        if schema == "curve":
            return self.curve(v, path)
        if schema == "target":
            return self.target(v, path)
        if isinstance(schema, tuple):
            return self.leaf(schema, v, path)
        if not isinstance(v, dict):
            self.fail("expected a mapping", path)
        for key in v:
            if key not in schema:
                self.fail(f"unknown key {key!r}", path + (key,))
        for key, sub in schema.items():
            if key in v:
                self.section(sub, v[key], path + (key,))


def _merge(defaults, data):
    out = copy.deepcopy(defaults)
    for k, v in data.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("study",):
            if k == "fish" and "body" in v:
                out[k]["body"] = {}
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration with defaults filled in."""

    data: dict
    source: str | None = None
    text: str | None = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def kind(self) -> str:
        return self.data["kind"]

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=None)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_overrides(self, **sections) -> "ExperimentConfig":
        d = self.to_dict()
        for k, v in sections.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict):
                d[k].update(v)
            else:
                d[k] = v
        return ExperimentConfig(d, self.source, self.text)


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", (),
                          None if mark is None else mark.line + 1, source) from None
    lines = _index_nodes(node)
    chk = _Checker(lines, source)
    if not isinstance(data, dict):
        chk.fail("config must be a mapping", ())
    for req in ("name", "kind"):
        if req not in data:
            chk.fail(f"missing required key {req!r}", ())
    chk.section(_SCHEMA, data, ())
    if data["kind"] in ("forward", "locate", "noise-stats") and "target" not in data:
        chk.fail(f"kind {data['kind']!r} needs a 'target'", ("kind",))
    merged = _merge(DEFAULTS, data)
    return ExperimentConfig(merged, source, text)


def load_config(path_or_name) -> ExperimentConfig:
    """Load a YAML file, or a bundled config by name."""
    p = Path(str(path_or_name))
    if p.suffix in (".yaml", ".yml") and p.exists():
        return parse_config(p.read_text(), str(p))
    if p.exists() and p.is_file():
        return parse_config(p.read_text(), str(p))
    name = p.stem if p.suffix in (".yaml", ".yml") else str(path_or_name)
    if name in bundled_configs():
        ref = resources.files("electrolocation") / "configs" / f"{name}.yaml"
        return parse_config(ref.read_text(), f"{name}.yaml")
    raise FileNotFoundError(f"no config file or bundled config named {path_or_name!r}")


def bundled_configs() -> list[str]:
    root = resources.files("electrolocation") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def harmonics_of(spec) -> tuple:
    """Expand a frequency specification into a tuple of harmonic indices."""
    if isinstance(spec, int):
        return tuple(range(1, spec + 1))
    if isinstance(spec, dict):
        return (int(spec["repeat"]),) * int(spec["count"])
    return tuple(int(n) for n in spec)
