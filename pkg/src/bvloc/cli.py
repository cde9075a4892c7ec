"""Command-line front end: ``bvloc {list,localize,sweep,verify}``.

Exit codes: 0 pass, 1 invariant failure, 2 precondition failure,
3 IO or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import catalog
from . import localization as L
from . import quadrature as Q
from . import verify as V
from .errors import BVLocError, PreconditionError, UnknownEntryError, WrongEvaluatorError

EXIT_OK, EXIT_FAIL, EXIT_PRECONDITION, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("bvloc")

# evaluator name -> catalog capability it requires
EVALUATORS = {
    "fixed-point": "berline_vergne",
    "fixed-locus": "atiyah_bott",
    "cohft": "cohft",
    "cohft-bott": "cohft",
    "dh": "dh_poisson",
    "rank": "rank",
}
DEFAULT_EVALUATOR = {
    "sphere_dh": "dh",
    "sphere_cohft": "cohft",
    "s2xs2_bott": "fixed-locus",
    "degenerate_pi": "rank",
    "free_control": "fixed-point",
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = "list"
    entry: str | None = None
    evaluator: str | None = None
    params: dict = field(default_factory=dict)
    phi: float = 1.0
    t_max: float = 5.0
    t_steps: int = 26
    t_grid: list | None = None
    order: int | None = None
    tol: float | None = None
    expect: str = "auto"
    only: list | None = None
    metric_perturbation: float = 0.0
    out_dir: str = "."
    format: str = "table"

    def validate(self):
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tolerance must be positive")
        if self.t_steps < 1:
            raise ConfigError("t-steps must be at least 1")
        if self.t_grid is not None and list(self.t_grid) != sorted(self.t_grid):
            raise ConfigError("t grid must be sorted")
        if self.format not in ("json", "csv", "table"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.only:
            bad = [m for m in self.only if m not in V.MODULES]
            if bad:
                raise ConfigError(f"unknown modules {bad}; choose from {list(V.MODULES)}")
        return self

    def grid(self):
        if self.t_grid is not None:
            return np.asarray(self.t_grid, dtype=float)
        return np.linspace(0.0, self.t_max, self.t_steps)

    def entry_params(self):
        p = dict(self.params)
        if self.order is not None:
            p["order"] = self.order
        return p


def load_config(args) -> RunConfig:
    """JSON config file first, then explicit flags on top."""
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = RunConfig(**data)
    cfg.command = args.command
    for name in known - {"command"}:
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    return cfg.validate()


def _out_dir(cfg) -> Path:
    path = Path(cfg.out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _write(path: Path, text: str):
    path.write_text(text)
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# commands


def cmd_list(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    rows = catalog.entries(cfg.evaluator and EVALUATORS.get(cfg.evaluator, cfg.evaluator))
    if cfg.format == "json":
        out.write(json.dumps([_entry_json(e) for e in rows], indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    for e in rows:
        expected = "; ".join(f"{k}={_fmt(v[0])}" for k, v in e.expected.items())
        out.write(f"{e.id:14s} {','.join(e.evaluators):60s} {expected}\n")
    return EXIT_OK


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def _entry_json(e):
    return {"id": e.id, "description": e.description, "evaluators": list(e.evaluators),
            "expected": {k: {"value": v[0], "provenance": v[1]} for k, v in e.expected.items()}}


def _run_evaluator(name, built):
    geom, f = built.geometry, built.fields
    if name == "fixed-point":
        return L.berline_vergne_sum(f["P"], geom)
    if name == "fixed-locus":
        return L.atiyah_bott_bv(f["P"], geom)
    if name == "cohft":
        return L.cohft_localize(f["P"], f["F"], geom, mode="discrete")
    if name == "cohft-bott":
        return L.cohft_localize(f["P"], f["F"], geom, mode="bott")
    if name == "dh":
        return L.dh_poisson(f["h"], f["pi"], geom)
    raise ConfigError(f"unknown evaluator {name!r}")


def cmd_localize(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    if not cfg.entry:
        raise ConfigError("--entry is required")
    entry = catalog.REGISTRY.get(cfg.entry)
    if entry is None:
        raise UnknownEntryError(f"unknown catalog entry {cfg.entry!r}")
    name = cfg.evaluator or DEFAULT_EVALUATOR.get(cfg.entry, "fixed-point")
    if name not in EVALUATORS:
        raise ConfigError(f"unknown evaluator {name!r}; choose from {sorted(EVALUATORS)}")
    if EVALUATORS[name] not in entry.evaluators:
        raise WrongEvaluatorError(f"entry {cfg.entry} does not support the {name} evaluator", check="evaluator")
    built = catalog.build(cfg.entry, cfg.entry_params())
    outdir = _out_dir(cfg)
    stem = outdir / f"{cfg.entry}_{name}"
    if name == "rank":
        table = L.rank_at_fixed_points(built.fields["pi"], built.geometry)
        doc = {"schema": L.SCHEMA, "entry": cfg.entry, "rows": table.rows, "max_rank": table.max_rank,
               "full_rank_somewhere": table.full_rank_somewhere}
        text = "".join(f"{r['locus']:8s} rank {r['rank']}\n" for r in table.rows)
        text += f"full rank somewhere: {table.full_rank_somewhere}\n"
        _write(stem.with_suffix(".json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
        _write(stem.with_suffix(".txt"), text)
        out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n" if cfg.format == "json" else text)
        return EXIT_OK if table.full_rank_somewhere else EXIT_FAIL
    report = _run_evaluator(name, built)
    tol = cfg.tol if cfg.tol is not None else (1e-4 if name in ("fixed-locus", "cohft-bott") else 1e-6)
    doc = report.to_dict()
    doc.update({"entry": cfg.entry, "evaluator": name, "tolerance": tol, "params": built.params,
                "passed": bool(report.rel_residual <= tol)})
    _write(stem.with_suffix(".json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write(stem.with_suffix(".txt"), report.to_table())
    out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n" if cfg.format == "json" else report.to_table())
    return EXIT_OK if report.rel_residual <= tol else EXIT_FAIL


def cmd_sweep(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    if not cfg.entry:
        raise ConfigError("--entry is required")
    built = catalog.build(cfg.entry, cfg.entry_params())
    P = built.fields.get("P", built.fields.get("P_open"))
    if "gamma" not in built.fields or P is None:
        raise WrongEvaluatorError(f"entry {cfg.entry} has no sweep input", check="evaluator")
    tol = cfg.tol if cfg.tol is not None else 1e-7
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = Q.z_gamma_sweep(P, built.fields["gamma"], built.geometry, cfg.phi, cfg.grid(), tol=tol)
    for w in caught:
        log.warning("%s", w.message)
    expect = cfg.expect
    if expect == "auto":
        expect = "closed" if res.closed_input else "non-closed"
    outdir = _out_dir(cfg)
    stem = outdir / f"{cfg.entry}_sweep"
    _write(stem.with_suffix(".csv"), res.to_csv())
    _write(stem.with_suffix(".svg"), res.to_svg())
    summary = {"schema": L.SCHEMA, "entry": cfg.entry, "phi": cfg.phi, "max_deviation": res.max_deviation,
               "verdict": res.verdict, "expected": expect, "tolerance": tol}
    if cfg.format == "json":
        out.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    elif cfg.format == "csv":
        out.write(res.to_csv())
    else:
        out.write(f"entry {cfg.entry}: verdict {res.verdict} (expected {expect}), "
                  f"max |Z(t)-Z(0)| = {res.max_deviation:.3e}\n")
    return EXIT_OK if res.verdict == expect else EXIT_FAIL


def cmd_verify(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    ctx = {"phi": cfg.phi, "t_max": cfg.t_max, "t_steps": cfg.t_steps,
           "metric_perturbation": cfg.metric_perturbation}
    results = V.run(cfg.only, ctx)
    passed = all(o.passed for o in results)
    if cfg.format == "json":
        doc = {"schema": L.SCHEMA, "passed": passed,
               "results": [{"criterion": o.criterion, "label": o.label, "value": o.value, "limit": o.limit,
                            "relation": o.relation, "passed": o.passed} for o in results]}
        out.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        for o in results:
            out.write(o.line() + "\n")
        out.write(f"{sum(o.passed for o in results)}/{len(results)} checks passed\n")
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {"list": cmd_list, "localize": cmd_localize, "sweep": cmd_sweep, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--entry")
    common.add_argument("--evaluator")
    common.add_argument("--phi", type=float)
    common.add_argument("--t-max", dest="t_max", type=float)
    common.add_argument("--t-steps", dest="t_steps", type=int)
    common.add_argument("--order", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--expect", choices=("auto", "closed", "non-closed"))
    common.add_argument("--only", type=lambda s: [m for m in s.split(",") if m])
    common.add_argument("--metric-perturbation", dest="metric_perturbation", type=float)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--format", choices=("json", "csv", "table"))
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="bvloc", description="Equivariant BV localization checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", parents=[common], help="list catalog entries")
    sub.add_parser("localize", parents=[common], help="compare a localization formula with quadrature")
    sub.add_parser("sweep", parents=[common], help="Z(t) sweep of the localization principle")
    sub.add_parser("verify", parents=[common], help="run invariant suites and acceptance checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[cfg.command](cfg)
    except PreconditionError as exc:
        print(f"precondition failed [{exc.check or type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ConfigError, UnknownEntryError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BVLocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
