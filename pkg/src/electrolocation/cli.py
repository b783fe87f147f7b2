"""Command line entry point.

Exit codes: 0 success, 2 usage or config schema error, 3 geometry conflict,
4 solver or fit failure, 5 identity checks failed, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .characterization import InvalidTensorError, RankDeficiencyError, SingularContrastError
from .config import ConfigError, ConfigGeometryError, bundled_configs, load_config
from .forward import ConfigurationError, SolverError
from .geometry import GeometryError

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_SOLVER, EXIT_CHECKS = 0, 1, 2, 3, 4, 5


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="electrolocation", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a config file or a bundled config by name")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: output.dir of the config)")
    r.add_argument("--seed", type=int, help="master seed (overrides noise.seed)")
    r.add_argument("--workers", type=int, default=1, help="threads for noise trials")

    v = sub.add_parser("validate", help="run the operator identity suite, or schema-check configs")
    v.add_argument("configs", nargs="*", help="config files or bundled names to schema-check")
    v.add_argument("--out", help="directory for the identity report")
    v.add_argument("-P", type=int, default=256, help="panels on the unit circle")

    sub.add_parser("list-configs", help="list bundled configs")

    s = sub.add_parser("scaling", help="print dimensionless groups and the EQS check")
    s.add_argument("config", nargs="?", default="scaling")
    return p


def _run(args) -> int:
    from .experiments import run

    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative", ("noise", "seed"), None, "--seed")
        over["noise"] = {"seed": args.seed}
    if over:
        cfg = cfg.with_overrides(**over)
    # the output location is not part of the experiment, so it stays out of the hash
    manifest = run(cfg, out=args.out, workers=max(1, args.workers))
    print(f"{cfg.name}: wrote {manifest}")
    summary = json.loads(manifest.read_text())["summary"]
    if cfg.kind == "validate" and not summary.get("all_passed", True):
        return EXIT_CHECKS
    return EXIT_OK


def _validate(args) -> int:
    if args.configs:
        for c in args.configs:
            cfg = load_config(c)
            print(f"{c}: ok ({cfg.kind}, hash {cfg.hash})")
        return EXIT_OK
    from .experiments import operator_identity_report, write_table

    rows = operator_identity_report(args.P)
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        flag = "PASS" if r["passed"] else "FAIL"
        print(f"{flag}  {r['check']:<{width}}  {r['value']:.3e}  (< {r['tolerance']:.0e})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "identities.csv", ["check", "value", "tolerance", "passed"],
                    [[r["check"], r["value"], r["tolerance"], r["passed"]] for r in rows])
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_CHECKS


def _scaling(args) -> int:
    from .scaling import PhysicalParams, eqs_validity, nondimensionalize

    study = load_config(args.config)["study"]
    p = PhysicalParams(**study.get("physical", {}))
    for k, v in nondimensionalize(p).items():
        print(f"{k:14s} {v:.6g}")
    ratio, ok = eqs_validity(p, float(study.get("L_max", 1.0)), float(study.get("omega_max", 1e4)))
    print(f"{'eqs_ratio':14s} {ratio:.6g}  ({'valid' if ok else 'NOT valid'})")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list-configs":
            for name in bundled_configs():
                cfg = load_config(name)
                print(f"{name:10s} {cfg.kind:22s} {cfg['description']}")
            return EXIT_OK
        return {"run": _run, "validate": _validate, "scaling": _scaling}[args.verb](args)
    except ConfigGeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, GeometryError) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (SolverError, SingularContrastError, RankDeficiencyError, InvalidTensorError,
            np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
