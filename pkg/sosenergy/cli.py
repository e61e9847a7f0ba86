"""
Command-line front end.

Usage:
    sosenergy solve --config run.json --out results/
    sosenergy scalar-error --seed 7
    sosenergy vdp-table --config vdp.json --serial
    sosenergy burgers-table
    sosenergy landscape
    sosenergy eval --config eval.json

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from sosenergy.collocation import Window, algorithm1, doubling_schedule, parse_schedule, sample_window
from sosenergy.config import Settings, format_validation_error, get_settings, log_level
from sosenergy.errors import AssemblyError, ConfigError, NumericalError, WindowFailure
from sosenergy.experiments import burgers_table, count_local_minima, landscape, scalar_error, slice_variation, vdp_table
from sosenergy.lin_solvers import EnergyKind
from sosenergy.poly_energy import PolyEnergy, taylor_energy
from sosenergy.sos_energy import SosEnergy, SquaredPolyEnergy, complete_sos, complete_sos_collocation
from sosenergy.systems import BUILTIN_SYSTEMS, SystemModel

logger = logging.getLogger("sosenergy")

Method = Literal["taylor", "complete-sos", "complete-sos-colloc", "sos-colloc"]
SETTING_GROUPS = ("kron", "riccati", "lm", "collocation", "simulation")


# ============================================================================
# Run configuration
# ============================================================================

class RunConfig(BaseModel):
    """Everything a command needs; loaded from the --config JSON file."""
    model_config = ConfigDict(extra="forbid")

    system: str = Field(default="scalar", description="Built-in system name or path to a system JSON file")
    system_params: dict[str, Any] = Field(default_factory=dict, description="Keyword arguments for a built-in system")
    kind: EnergyKind | None = Field(default=None, description="past or future; defaults per system")
    method: Method = Field(default="taylor", description="How the energy is approximated")
    degree: int = Field(default=3, ge=2, description="Taylor degree, or SOS degree for sos-colloc")
    schedule: list[Window] | None = Field(default=None, description="Nested windows for sos-colloc")
    samples: int | None = Field(default=None, ge=1, description="Collocation samples for complete-sos-colloc")
    half_width: float = Field(default=1.0, gt=0, description="Sample window for complete-sos-colloc")
    seed: int = Field(default=0, ge=0, description="Root seed")
    count: int = Field(default=100, ge=1, description="Initial conditions per table window")
    degrees: list[int] = Field(default_factory=lambda: [4], description="Degrees for scalar-error")
    points: int = Field(default=401, ge=2, description="Evaluation points for scalar-error")
    half_widths: list[float] | None = Field(default=None, description="Table or landscape windows")
    grid: tuple[int, int] = Field(default=(41, 41), description="Landscape grid size (l12, l22)")
    energy: str | None = Field(default=None, description="Energy artifact for eval")
    eval_points: str | None = Field(default=None, description="CSV or JSON file of points for eval")
    horizon: float | None = Field(default=None, gt=0, description="Closed-loop horizon override")
    kron: dict[str, Any] = Field(default_factory=dict)
    riccati: dict[str, Any] = Field(default_factory=dict)
    lm: dict[str, Any] = Field(default_factory=dict)
    collocation: dict[str, Any] = Field(default_factory=dict)
    simulation: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="before")
    @classmethod
    def _nest_dotted(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        out = {k: v for k, v in data.items() if "." not in k}
        for key, value in data.items():
            if "." in key:
                group, _, name = key.partition(".")
                out.setdefault(group, {})
                out[group] = {**out[group], name: value}
        return out

    @model_validator(mode="after")
    def _check_method_degree(self) -> RunConfig:
        if self.method == "complete-sos" and self.degree < 3:
            raise ValueError("complete-sos needs a Taylor degree of at least 3")
        if self.method == "complete-sos-colloc" and (self.degree < 3 or self.degree % 2 == 0):
            raise ValueError("complete-sos-colloc needs an odd Taylor degree of at least 3")
        if self.method == "sos-colloc" and self.degree % 2:
            raise ValueError("sos-colloc needs an even SOS degree")
        return self

    def settings_overrides(self) -> dict[str, Any]:
        return {group: getattr(self, group) for group in SETTING_GROUPS if getattr(self, group)}

    def digest(self) -> str:
        text = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def load_config(path: str | None, seed: int | None) -> RunConfig:
    raw: dict[str, Any] = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}", [str(exc)]) from exc
    if seed is not None:
        raw["seed"] = seed
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError("invalid run configuration", format_validation_error(exc)) from exc


def build_system(config: RunConfig) -> SystemModel:
    factory = BUILTIN_SYSTEMS.get(config.system)
    if factory is not None:
        try:
            return factory(**config.system_params)
        except (TypeError, ValueError, AssemblyError) as exc:
            raise ConfigError(f"bad parameters for system {config.system!r}", [str(exc)]) from exc
    path = Path(config.system)
    if not path.exists():
        raise ConfigError("unknown system", [f"system: {config.system!r} is neither built in nor a file"])
    return SystemModel.from_json(path)


def default_kind(system: SystemModel) -> EnergyKind:
    return "past" if system.name == "scalar" else "future"


def load_energy(path: str | Path) -> PolyEnergy | SquaredPolyEnergy | SosEnergy:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read energy artifact {path}", [str(exc)]) from exc
    if "coeffs" in doc:
        return PolyEnergy.from_dict(doc)
    if "factors" in doc:
        return SquaredPolyEnergy.from_dict(doc)
    if "L" in doc:
        return SosEnergy.from_dict(doc)
    raise ConfigError("unrecognised energy artifact", [f"{path}: expected coeffs, factors or L"])


def load_points(path: str | Path, n: int) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix == ".json":
            points = np.asarray(json.loads(path.read_text()), dtype=float)
        else:
            points = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read points {path}", [str(exc)]) from exc
    if points.size % n:
        raise ConfigError("points do not match the energy dimension", [f"{path}: {points.size} values for n={n}"])
    return points.reshape(-1, n)


# ============================================================================
# Output helpers
# ============================================================================

def banner(title: str) -> None:
    print("=" * 60)
    print(f"  {title}")
    print("=" * 60)
    print()


def check(label: str, passed: bool, detail: str = "") -> bool:
    status = "PASS" if passed else "FAIL"
    msg = f"  [{status}] {label}"
    if detail:
        msg += f" - {detail}"
    print(msg)
    return passed


def write_csv(path: Path, header: list[str], rows: list[list[Any]], meta: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# {meta}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows([[_fmt(v) for v in row] for row in rows])
    return path


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return value


def metadata(command: str, config: RunConfig) -> str:
    return f"sosenergy {command} config_hash={config.digest()} seed={config.seed}"


# ============================================================================
# Commands
# ============================================================================

def cmd_solve(config: RunConfig, settings: Settings, out: Path) -> int:
    system = build_system(config)
    kind = config.kind or default_kind(system)
    banner(f"solve - {config.method} degree {config.degree} ({kind} energy, {system.name})")
    report: dict[str, Any] = {"method": config.method, "degree": config.degree, "kind": kind, "seed": config.seed}
    start = time.perf_counter()

    if config.method == "taylor":
        energy = taylor_energy(system, config.degree, kind, settings)
    elif config.method == "complete-sos":
        energy = complete_sos(taylor_energy(system, config.degree, kind, settings))
    elif config.method == "complete-sos-colloc":
        p = taylor_energy(system, config.degree, kind, settings)
        window = Window(half_width=config.half_width, samples=config.samples or settings.collocation.min_samples)
        samples = sample_window(window, system.n, config.seed)
        energy, lm_report = complete_sos_collocation(p, system, samples, kind, settings)
        report["windows"] = [{"half_width": window.half_width, **lm_report.model_dump()}]
    else:
        schedule = parse_schedule(config.schedule) if config.schedule else doubling_schedule(1.0, 8.0)
        try:
            energy, reports = algorithm1(system, kind, config.degree, schedule, config.seed, settings)
        except WindowFailure as exc:
            if exc.last_factor is not None:
                exc.last_factor.to_json(out / "energy.partial.json")
            raise
        report["windows"] = [r.model_dump() for r in reports]
        for i, r in enumerate(reports):
            print(f"  window {i}: J {r.initial_objective:.3e} -> {r.final_objective:.3e} ({r.reason}, {r.iterations} iterations)")

    report["seconds"] = time.perf_counter() - start
    out.mkdir(parents=True, exist_ok=True)
    energy.to_json(out / "energy.json")
    (out / "report.json").write_text(json.dumps(report, indent=2))
    print(f"  energy written to {out / 'energy.json'} ({report['seconds']:.2f} s)")
    return 0


def cmd_scalar_error(config: RunConfig, settings: Settings, out: Path) -> int:
    banner("scalar-error - Taylor and SOS vs analytic past energy")
    for degree in config.degrees:
        rows = scalar_error(degree, points=config.points, seed=config.seed, settings=settings)
        header = ["x", "analytic", f"taylor_{degree}", f"sos_{degree}", "err_taylor", "err_sos"]
        data = [[r.x, r.analytic, r.taylor, r.sos, r.err_taylor, r.err_sos] for r in rows]
        path = write_csv(out / f"scalar_error_d{degree}.csv", header, data, metadata("scalar-error", config))
        max_t = max(abs(r.err_taylor) for r in rows)
        max_s = max(abs(r.err_sos) for r in rows)
        check(f"degree {degree}: SOS beats Taylor", max_s < max_t, f"max |err| {max_s:.3e} vs {max_t:.3e}")
        print(f"  wrote {path}")
    return 0


def _table_rows(table_rows) -> list[list[Any]]:
    return [
        [
            row.half_width,
            row.taylor.stable, row.taylor.unstable, row.taylor.mean_relative_error,
            row.sos.stable, row.sos.unstable, row.sos.mean_relative_error,
        ]
        for row in table_rows
    ]


TABLE_HEADER = [
    "half_width",
    "taylor_stable", "taylor_unstable", "taylor_mean_rel_err",
    "sos_stable", "sos_unstable", "sos_mean_rel_err",
]


def cmd_vdp_table(config: RunConfig, settings: Settings, out: Path) -> int:
    banner(f"vdp-table - {config.count} initial conditions per window")
    widths = config.half_widths or [0.1, 0.2, 0.3, 0.4, 0.5]
    table = vdp_table(widths, config.count, seed=config.seed, horizon=config.horizon, settings=settings, show_progress=True)
    write_csv(out / "vdp_table.csv", TABLE_HEADER, _table_rows(table.rows), metadata("vdp-table", config))
    (out / "vdp_table.json").write_text(table.model_dump_json(indent=2))
    for row in table.rows:
        check(f"[-{row.half_width}, {row.half_width}]^6 SOS", row.sos.unstable == 0, f"taylor unstable {row.taylor.unstable}/{config.count}")
    check("pinned state", table.pinned.sos_stable, f"taylor stable={table.pinned.taylor_stable}")
    return 0


def cmd_burgers_table(config: RunConfig, settings: Settings, out: Path) -> int:
    banner(f"burgers-table - {config.count} initial conditions per window")
    widths = config.half_widths or [0.1, 0.2, 0.3, 0.4]
    samples = config.samples or 500
    table = burgers_table(widths, samples=samples, count=config.count, seed=config.seed, horizon=config.horizon, settings=settings, show_progress=True)
    write_csv(out / "burgers_table.csv", TABLE_HEADER, _table_rows(table.rows), metadata("burgers-table", config))
    for row in table.rows:
        print(f"  [-{row.half_width}, {row.half_width}]^12: taylor {row.taylor.mean_relative_error} sos {row.sos.mean_relative_error}")
    return 0


def cmd_landscape(config: RunConfig, settings: Settings, out: Path) -> int:
    banner("landscape - J over (l12, l22) with l11 at the Riccati block")
    for a in config.half_widths or [1.0, 20.0]:
        land = landscape(a, grid=config.grid, seed=config.seed, settings=settings)
        J = np.asarray(land.J)
        data = [
            [land.l12[i], land.l22[j], J[i, j], float(np.log10(max(J[i, j], np.finfo(float).tiny)))]
            for i in range(J.shape[0]) for j in range(J.shape[1])
        ]
        write_csv(out / f"landscape_a{a:g}.csv", ["l12", "l22", "J", "log10_J"], data, metadata("landscape", config) + f" l11={land.l11!r}")
        along_l22, along_l12 = slice_variation(land)
        minima = int(count_local_minima(J, axis=1).max())
        print(f"  [-{a:g}, {a:g}]: l11 {land.l11:.7f}, l22 spread {along_l22:.3e}, l12 spread {along_l12:.3e} (of the grid spread), most minima on an l22 slice {minima}")
    return 0


def cmd_eval(config: RunConfig, settings: Settings, out: Path) -> int:
    if not config.energy or not config.eval_points:
        raise ConfigError("eval needs an energy artifact and points", ["energy: required", "eval_points: required"])
    energy = load_energy(config.energy)
    X = load_points(config.eval_points, energy.n)
    values = energy.value_batch(X)
    grads = energy.gradient_batch(X)
    n = energy.n
    header = [f"x{i + 1}" for i in range(n)] + ["value"] + [f"grad{i + 1}" for i in range(n)]
    rows = [[*map(float, x), float(v), *map(float, g)] for x, v, g in zip(X, values, grads)]
    path = write_csv(out / "eval.csv", header, rows, metadata("eval", config))
    banner(f"eval - {X.shape[0]} points")
    print(f"  wrote {path}")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "scalar-error": cmd_scalar_error,
    "vdp-table": cmd_vdp_table,
    "burgers-table": cmd_burgers_table,
    "landscape": cmd_landscape,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sosenergy", description="Taylor and SOS energy functions for polynomial control systems")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="Root seed (overrides the config)")
    parser.add_argument("--out", default="results", help="Output directory")
    parser.add_argument("--serial", action="store_true", help="Run Monte-Carlo batches in a plain loop")
    parser.add_argument("--log-level", default=None, help="Logging level (default SOSENERGY_LOG_LEVEL or WARNING)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or log_level()).upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.seed)
        overrides = config.settings_overrides()
        if args.serial:
            overrides["serial"] = True
        settings = get_settings().merged(overrides)
        return COMMANDS[args.command](config, settings, Path(args.out))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
