"""Command line front end: ``singcond run | compare | appendix``.

A run is described by one JSON file. The run writes density tables as CSV,
a JSON run report that echoes the normalized config, and for ``check`` an
equivalence report. Exit codes: 2 config error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .appendix import consistency_sweep, default_grids
from .bayes import (BayesProblem, evidence, pushforward_check, total_joint_mass,
                    validate_likelihood, verify_proposition)
from .canonical import CanonicalProblem, canonical_density
from .equivalence import check_theorem3, density_distance
from .errors import ConfigError, ParseError, SamplerError, SingcondError
from .fan import TubeSchedule, fan_density_diffeo, fan_density_shear, fan_tube_density, fan_tube_estimate
from .geometry import Chart, LevelSetProblem
from .sampling import Marginal, SamplerSpec
from .tables import DensityTable, uniform_grid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

METHODS = ("tube", "diffeo", "shear", "canonical", "bayes", "check", "compare", "appendix")
MIN_GRID_POINTS = 16


def _floats(v, name):
    try:
        if isinstance(v, (int, float)):
            return (float(v),)
        return tuple(float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a number or a list of numbers") from exc


def _strings(v, name):
    if isinstance(v, str):
        return (v,)
    if not isinstance(v, (list, tuple)) or not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{name}: expected an expression or a list of expressions")
    return tuple(v)


def _interval(v, name):
    """JSON has no infinities: ``null`` or the strings "-inf"/"inf" stand in for them."""
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{name}: expected [low, high]")
    out = []
    for x, default in zip(v, (-math.inf, math.inf)):
        if x is None:
            out.append(default)
        else:
            try:
                out.append(float(x))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: bad bound {x!r}") from exc
    return tuple(out)


def _jsonable_bound(x):
    return None if math.isinf(x) else x


@dataclass
class RunConfig:
    method: str
    dim: int = 2
    density: str = ""
    phi: tuple = ()
    psi: tuple = ()
    level: tuple = (0.0,)
    grid: dict = field(default_factory=dict)
    support: tuple = (-math.inf, math.inf)
    inverse: tuple = ()
    chi: str = ""
    chart: dict = field(default_factory=dict)
    prior: str = ""
    noise: str = ""
    forward: str = ""
    likelihood: str = ""
    tube: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    appendix: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    output: str = "run"
    base_dir: Path = field(default=Path("."), compare=False)

    KEYS = ("method", "dim", "density", "phi", "psi", "level", "grid", "support", "inverse", "chi",
            "chart", "prior", "noise", "forward", "likelihood", "tube", "check", "compare",
            "appendix", "sampler", "output")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        method = d.get("method")
        if method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
        cfg = cls(method=method, base_dir=Path(base_dir))
        if "dim" in d:
            if not isinstance(d["dim"], int):
                raise ConfigError("dim must be an integer")
            cfg.dim = d["dim"]
        for key in ("density", "chi", "prior", "noise", "forward", "likelihood", "output"):
            if key in d:
                if not isinstance(d[key], str):
                    raise ConfigError(f"{key}: expected a string")
                setattr(cfg, key, d[key])
        for key in ("phi", "psi", "inverse"):
            if key in d:
                setattr(cfg, key, _strings(d[key], key))
        if "level" in d:
            cfg.level = _floats(d["level"], "level")
        if "support" in d:
            cfg.support = _interval(d["support"], "support")
        for key in ("grid", "chart", "tube", "check", "compare", "appendix", "sampler"):
            if key in d:
                if not isinstance(d[key], dict):
                    raise ConfigError(f"{key}: expected an object")
                setattr(cfg, key, dict(d[key]))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {"method": self.method}
        defaults = RunConfig(method=self.method)
        for key in self.KEYS[1:]:
            v = getattr(self, key)
            if v == getattr(defaults, key) and key not in ("dim", "level", "output"):
                continue
            if key == "support":
                v = [_jsonable_bound(x) for x in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[key] = v
        return out

    # -- validation ---------------------------------------------------------

    def _need(self, *keys):
        missing = [k for k in keys if not getattr(self, k)]
        if missing:
            raise ConfigError(f"method {self.method!r} needs {', '.join(missing)}")

    def grid_points(self) -> np.ndarray:
        g = self.grid
        try:
            lo, hi, n = float(g["min"]), float(g["max"]), int(g["points"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("grid needs numeric min, max and points") from exc
        if n < MIN_GRID_POINTS:
            raise ConfigError(f"grid.points must be >= {MIN_GRID_POINTS}")
        if not hi > lo:
            raise ConfigError("grid.max must exceed grid.min")
        return uniform_grid(lo, hi, n)

    def seed(self, section: str) -> int:
        sec = getattr(self, section)
        if "seed" not in sec:
            raise ConfigError(f"{section}.seed is required for Monte Carlo")
        s = sec["seed"]
        if not isinstance(s, int) or not 0 <= s < 2**64:
            raise ConfigError(f"{section}.seed must be an unsigned 64-bit integer")
        return s

    def validate(self):
        m = self.method
        if m in ("compare", "appendix"):
            if m == "compare" and not {"a", "b"} <= set(self.compare):
                raise ConfigError("compare needs compare.a and compare.b (CSV paths)")
            return
        if m == "bayes":
            self._need("prior", "noise", "forward", "likelihood")
            self.grid_points()
            self.bayes_problem()
            if self.tube:
                self.seed("tube")
            return
        self._need("density", "phi")
        self.problem()
        if m in ("tube", "diffeo", "shear", "canonical"):
            self.grid_points()
        if m == "tube":
            self.seed("tube")
            self.schedule()
            self.sampler_spec()
        elif m == "diffeo":
            self._need("inverse")
        elif m == "shear":
            self._need("chi")
        elif m in ("canonical", "check"):
            self.chart_obj()
        if m == "check":
            self.seed("check")

    # -- builders -------------------------------------------------------------

    def problem(self) -> LevelSetProblem:
        try:
            return LevelSetProblem.build(self.density, self.phi, self.psi, self.level, self.dim)
        except (ValueError, ParseError) as exc:
            raise ConfigError(f"problem definition: {exc}") from exc

    def chart_obj(self) -> Chart:
        c = self.chart
        if "map" not in c or "domain" not in c:
            raise ConfigError("chart needs map and domain")
        try:
            dom = [_interval(side, "chart.domain") for side in c["domain"]]
            return Chart.build(_strings(c["map"], "chart.map"), dom)
        except (ValueError, ParseError, SingcondError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"chart: {exc}") from exc

    def schedule(self) -> TubeSchedule:
        t = self.tube
        try:
            kw = {"seed": self.seed("tube")}
            if "epsilons" in t:
                kw["epsilons"] = tuple(float(e) for e in t["epsilons"])
            if "samples" in t:
                kw["samples_per_eps"] = int(t["samples"])
            return TubeSchedule(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"tube: {exc}") from exc

    def sampler_spec(self) -> SamplerSpec:
        if not self.sampler:
            return SamplerSpec.standard_normal(self.dim)
        try:
            spec = SamplerSpec.from_dict(self.sampler)
        except (SamplerError, TypeError, ValueError) as exc:
            raise ConfigError(f"sampler: {exc}") from exc
        if spec.dim != self.dim:
            raise ConfigError(f"sampler has dimension {spec.dim}, config has dim {self.dim}")
        return spec

    def bayes_problem(self) -> BayesProblem:
        if self.dim != 2:
            raise ConfigError("bayes runs are two-dimensional (x1 parameter, x2 noise)")
        margs = ()
        if self.sampler:
            spec = self.sampler_spec()
            if spec.kind != "product":
                raise ConfigError("bayes needs a product sampler (prior x noise)")
            margs = spec.marginals
        try:
            return BayesProblem.build(self.prior, self.noise, self.forward, self.likelihood,
                                      self.level[0], *(margs or (None, None)))
        except (ValueError, ParseError) as exc:
            raise ConfigError(f"bayes problem: {exc}") from exc


# --------------------------------------------------------------------------
# Running


@dataclass
class RunReport:
    config: dict
    files: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "files": self.files,
            "diagnostics": self.diagnostics,
            "warnings": self.warnings,
            "timings": self.timings,
            "version": self.version,
        }


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, default=_json_default, allow_nan=True) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


class _Run:
    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.report = RunReport(cfg.to_dict())
        self.tables = []  # (label, table, path)

    def path(self, suffix: str) -> Path:
        return self.out / f"{self.cfg.output}_{suffix}"

    def table(self, label: str, t: DensityTable):
        p = t.to_csv(self.path(f"{label}.csv"))
        self.report.files.append(p.name)
        self.tables.append((label, t, p))
        if t.notes:
            self.report.diagnostics.setdefault("notes", {})[label] = list(t.notes)
        self.report.diagnostics.setdefault("integrals", {})[label] = t.integral()

    def json(self, suffix: str, data):
        p = _write_json(self.path(suffix), data)
        self.report.files.append(p.name)

    def execute(self):
        cfg = self.cfg
        getattr(self, f"_{cfg.method}")()
        if self.tables:
            p = emit_plot_script([t for _, t, _ in self.tables], [p for _, _, p in self.tables],
                                 self.path("plot.py"), [lbl for lbl, _, _ in self.tables])
            self.report.files.append(p.name)

    def _tube(self):
        cfg = self.cfg
        p, sched, spec = cfg.problem(), cfg.schedule(), cfg.sampler_spec()
        self.table("tube", fan_tube_density(p, cfg.grid_points(), sched, spec))
        if "box" in cfg.tube:
            box = [_interval(side, "tube.box") for side in cfg.tube["box"]]
            res = fan_tube_estimate(p, box, sched, spec)
            self.report.diagnostics["tube_box"] = {
                "box": [[_jsonable_bound(a), _jsonable_bound(b)] for a, b in box],
                "sequence": [[e, v, s] for e, v, s in res.as_sequence()],
                "extrapolated": res.extrapolated,
                "extrapolated_stderr": res.extrapolated_stderr,
                "monotone": res.monotone,
                "notes": res.notes,
            }
        self.report.diagnostics["epsilons"] = list(sched.epsilons)

    def _diffeo(self):
        cfg = self.cfg
        self.table("diffeo", fan_density_diffeo(cfg.problem(), cfg.inverse, cfg.grid_points(), cfg.support))

    def _shear(self):
        cfg = self.cfg
        self.table("shear", fan_density_shear(cfg.problem(), cfg.chi, cfg.grid_points(), cfg.support))

    def _canonical(self):
        cfg = self.cfg
        p, chart = cfg.problem(), cfg.chart_obj()
        chart.validate(p)
        self.table("canonical", canonical_density(CanonicalProblem.build(p.density, chart), cfg.grid_points()))

    def _check(self):
        cfg = self.cfg
        c = cfg.check
        try:
            radius = float(c.get("tube_radius", 0.1))
            n = int(c.get("samples", 1000))
            ctol = float(c.get("constancy_tol", 1e-3))
            stol = float(c.get("sigma_tol", 1e-3))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"check: {exc}") from exc
        rep = check_theorem3(cfg.problem(), cfg.chart_obj(), radius, n, cfg.seed("check"), ctol, stol)
        self.json("equivalence.json", rep.to_dict())
        self.report.diagnostics["verdict"] = rep.verdict
        self.report.diagnostics["skip_rate"] = rep.skipped / max(rep.samples, 1)

    def _bayes(self):
        cfg = self.cfg
        bp = cfg.bayes_problem()
        noise_chart = cfg.chart_obj() if cfg.chart else None
        res = verify_proposition(bp, cfg.grid_points(), noise_chart)
        self.table("bayes", res.posterior)
        self.table("canonical", res.canonical)
        diag = {
            "distance": res.distance.to_dict(),
            "evidence": evidence(bp),
            "likelihood_ok": validate_likelihood(bp).ok,
            "joint_mass": total_joint_mass(bp),
        }
        if res.control is not None:
            self.table("control", res.control_table)
            diag["control_distance"] = res.control.to_dict()
        if cfg.tube:
            chk = pushforward_check(bp, int(cfg.tube.get("samples", 200_000)), cfg.seed("tube"))
            diag["pushforward_max_z"] = chk.max_z
            diag["pushforward_ok"] = chk.ok
        self.report.diagnostics.update(diag)

    def _compare(self):
        cfg = self.cfg
        a = DensityTable.from_csv(cfg.base_dir / cfg.compare["a"])
        b = DensityTable.from_csv(cfg.base_dir / cfg.compare["b"])
        d = density_distance(a, b)
        self.json("distance.json", d.to_dict())
        self.report.diagnostics["distance"] = d.to_dict()

    def _appendix(self):
        steps = int(self.cfg.appendix.get("rho_steps", 100))
        rep = consistency_sweep(*default_grids(steps))
        self.json("appendix.json", rep.summary())
        self.report.diagnostics["appendix"] = rep.summary()


def run(cfg: RunConfig, out_dir) -> RunReport:
    """Execute ``cfg``, write every output into ``out_dir`` and return the report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    r = _Run(cfg, out_dir)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            r.execute()
        finally:
            r.report.warnings = [f"{w.category.__name__}: {w.message}" for w in caught]
    r.report.timings["total_seconds"] = time.perf_counter() - t0
    report_path = r.path("report.json")
    r.report.files.append(report_path.name)
    _write_json(report_path, r.report.to_dict())
    return r.report


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict):
        if seed is not None:
            for section in ("tube", "check"):
                if section in data or data.get("method") == section:
                    if not isinstance(data.setdefault(section, {}), dict):
                        raise ConfigError(f"{section}: expected an object")
                    data[section]["seed"] = seed
        data.setdefault("output", path.stem)
    return RunConfig.from_dict(data, base_dir=path.parent)


# --------------------------------------------------------------------------
# Plot script


_PLOT_TEMPLATE = '''\
"""Overlay of density tables; written by singcond {version}."""
import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
TABLES = {tables!r}


def load(name):
    with open(HERE / name, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [float(r[0]) for r in rows], [float(r[1]) for r in rows]


fig, ax = plt.subplots(figsize=(6, 4))
for label, name in TABLES:
    u, f = load(name)
    ax.plot(u, f, label=label)
ax.set_xlabel("u")
ax.set_ylabel("density")
ax.legend()
fig.tight_layout()
fig.savefig(HERE / {png!r}, dpi=150)
print("wrote", HERE / {png!r})
'''


def emit_plot_script(tables, csv_paths, path, labels=None) -> Path:
    """Write a matplotlib script that overlays the CSVs of ``tables``.

    CSV paths are stored relative to the script's directory, so the output
    directory can be moved as a whole.
    """
    if not tables:
        raise ConfigError("plot script needs at least one table")
    if len(csv_paths) != len(tables):
        raise ValueError("one CSV path per table")
    for t in tables:
        if len(t) == 0:
            raise ConfigError("refusing to plot an empty table")
    path = Path(path)
    labels = labels or [t.method for t in tables]
    rel = []
    for label, p in zip(labels, csv_paths):
        p = Path(p)
        try:
            name = p.resolve().relative_to(path.resolve().parent).as_posix()
        except ValueError as exc:
            raise ValueError(f"{p} is not under the plot script's directory") from exc
        rel.append((label, name))
    path.write_text(_PLOT_TEMPLATE.format(version=__version__, tables=rel, png=path.stem + ".png"))
    return path


# --------------------------------------------------------------------------
# Entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singcond", description="Conditional densities on level sets.")
    ap.add_argument("--version", action="version", version=f"singcond {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a JSON config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: next to the config)")
    r.add_argument("--seed", type=int, default=None, help="override every Monte Carlo seed")
    c = sub.add_parser("compare", help="distances between two density CSVs")
    c.add_argument("a")
    c.add_argument("b")
    a = sub.add_parser("appendix", help="consistency sweep of the extension counterexample")
    a.add_argument("--rho-steps", type=int, default=100)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.seed)
            out = Path(args.out) if args.out else Path(args.config).parent
            report = run(cfg, out)
            for w in report.warnings:
                print(f"warning: {w}", file=sys.stderr)
            print(json.dumps({"files": report.files, "diagnostics": report.diagnostics},
                             indent=2, default=_json_default))
        elif args.command == "compare":
            d = density_distance(DensityTable.from_csv(args.a), DensityTable.from_csv(args.b))
            print(json.dumps(d.to_dict(), indent=2))
        else:
            rep = consistency_sweep(*default_grids(args.rho_steps))
            print(json.dumps(rep.summary(), indent=2))
            if not rep.ok:
                return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SingcondError, ValueError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
