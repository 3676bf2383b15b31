"""
Experiment Runner
=================
One experiment = one JSON config = one output directory.

    python cli_runner.py run configs/halving_typicality.json [--check] [--quiet]
    python cli_runner.py list-systems
    python cli_runner.py reproduce-paper results/suite [--master-seed 0] [--jobs 4]

Exit codes: 0 completed run, 1 an `expect` entry failed under --check,
2 malformed config or invalid parameters, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Callable, Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from averaging import (
    CesaroAccumulator,
    OccupationAccumulator,
    evolve_ensemble,
    orbit_batch,
    telescoping_residual,
    write_trace_csv,
)
from diagnostics import (
    DiagnosticsReport,
    Metric,
    ReferenceMeasure,
    as_cloud,
    condition_checklist,
    default_seed_measures,
    invariance_residual,
    measure_distance,
    naturality_check,
    selfconsistent_checklist,
    selfconsistent_naturality,
    selfconsistent_typical_fraction,
    selfconsistent_wandering,
    selfconsistent_weak_ergodicity,
    trace_match,
    transfer_continuity_probe,
    typical_set_fraction,
    wandering_check,
    weak_ergodicity_fraction,
)
from space_measures import (
    CSV_FLOAT_FORMAT,
    InvalidArgument,
    Phase,
    PointCloudMeasure,
    bin_cloud,
    conditional_on_circle,
    default_dictionary,
    derive_seed,
    dictionary_profile,
    dirac,
    grid_to_frame,
    l1_distance,
    mixture,
    reference_cloud,
    uniform_cloud,
    uniform_grid,
    write_cloud_csv,
    write_grid_csv,
)
from system_zoo import (
    SUPPORT_ATOMS,
    Family,
    SystemSpec,
    WrongEvaluator,
    catalog,
    map_points_selfconsistent,
    support_measure,
)
from ulam import build_ulam, ulam_cesaro_fixed_density, write_matrix_csv

# =============================================================================
# CONFIGURATION
# =============================================================================
OUTPUT_ROOT_ENV = "ERGOLAB_OUTPUT_ROOT"
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_IO = 3
ENSEMBLE_EARLY_STEPS = 3        # leading steps whose mean drift is reported on its own

ULAM_CAVEAT = ("Ulam rows cannot see jumps on measure-zero sets; the density approximates "
               "Cesaro limits of absolutely continuous measures")


class Kind(str, Enum):
    ORBIT = "orbit"
    CESARO = "cesaro"
    ULAM = "ulam"
    ENSEMBLE = "ensemble"
    TYPICAL_SET_FRACTION = "typical_set_fraction"
    WEAK_ERGODICITY_FRACTION = "weak_ergodicity_fraction"
    NATURALITY_CHECK = "naturality_check"
    INVARIANCE_RESIDUAL = "invariance_residual"
    WANDERING_CHECK = "wandering_check"
    TRACE_MATCH = "trace_match"
    TELESCOPING_RESIDUAL = "telescoping_residual"
    TRANSFER_CONTINUITY = "transfer_continuity"
    CONDITION_CHECKLIST = "condition_checklist"


Point = Union[float, list[float]]


# =============================================================================
# CONFIG MODELS
# =============================================================================

class MeasureBlock(BaseModel):
    """
    A measure named in a config.

    kind: reference (m of the phase) | circle (m_C, radius r or the system's r)
          | uniform (n random atoms of m) | dirac (point) | atoms (points, weights)
          | support (the system's analytic m_S, n atoms)
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["reference", "circle", "uniform", "dirac", "atoms", "support"]
    point: Optional[Point] = None
    points: Optional[list[Point]] = None
    weights: Optional[list[float]] = None
    r: Optional[float] = None
    n: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_fields(self):
        if self.kind == "dirac" and self.point is None:
            raise ValueError("dirac measure needs 'point'")
        if self.kind == "atoms" and not self.points:
            raise ValueError("atoms measure needs a non-empty 'points'")
        if self.weights is not None and self.kind != "atoms":
            raise ValueError("'weights' only applies to kind 'atoms'")
        return self


class Expectation(BaseModel):
    """Declared outcome for one verdict key, checked under --check."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    min: Optional[float] = None
    max: Optional[float] = None
    equals: Optional[Union[bool, float, str]] = None
    approx: Optional[float] = None
    abs: float = 1e-9

    def check(self, value) -> bool:
        if value is None:
            return self.equals is None and self.min is None and self.max is None and self.approx is None
        if self.equals is not None and value != self.equals:
            return False
        try:
            if self.min is not None and not value >= self.min:
                return False
            if self.max is not None and not value <= self.max:
                return False
            if self.approx is not None and not abs(value - self.approx) <= self.abs:
                return False
        except TypeError:
            return False
        return True


class ExperimentConfig(BaseModel):
    """Resolved experiment. Every knob has a default; unknown keys are errors."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Kind
    system: SystemSpec
    label: Optional[str] = None

    reference: Optional[MeasureBlock] = None
    target: Optional[MeasureBlock] = None
    seeds: Optional[list[MeasureBlock]] = None
    x0: Optional[Point] = None
    x0s: Optional[list[Point]] = None
    candidates: Optional[list[Point]] = None

    n: int = Field(default=10_000, ge=1)
    particles: int = Field(default=10_000, ge=1)
    sensitivity_particles: Optional[int] = Field(default=None, ge=1)
    samples: int = Field(default=100, ge=1)
    resolution: Optional[Union[int, list[int]]] = None
    resolutions: list[int] = Field(default_factory=lambda: [32, 64, 128])
    tol: float = Field(default=0.05, gt=0)
    threshold: float = Field(default=0.05, gt=0)
    k_max: int = Field(default=6, ge=1)
    samples_per_cell: int = Field(default=64, ge=1)
    n_max: int = Field(default=4096, ge=2)
    metric: Metric = Metric.AUTO
    offsets: Optional[list[float]] = None

    master_seed: int = Field(default=0, ge=0)
    output_dir: str = "results"
    expect: dict[str, Expectation] = Field(default_factory=dict)

    @field_validator("output_dir")
    @classmethod
    def _stays_under_root(cls, value: str) -> str:
        return relative_output_dir(value)


def relative_output_dir(value):
    """Results always land under the output root: absolute paths and '..' are refused."""
    path = Path(value)
    if path.is_absolute() or ".." in path.parts:
        raise ValueError(f"output_dir must be a relative path under the output root, got {value!r}")
    return value


def load_config(path) -> ExperimentConfig:
    """Parse a JSON config file; JSONDecodeError / ValidationError / OSError propagate."""
    text = Path(path).read_text()
    return ExperimentConfig.model_validate(json.loads(text))


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or Path.cwd())


# =============================================================================
# MEASURE RESOLUTION
# =============================================================================

def build_measure(block: MeasureBlock, spec: SystemSpec, master_seed: int, label: str,
                  particles: int) -> PointCloudMeasure | ReferenceMeasure:
    phase = spec.phase
    if block.kind == "reference":
        return ReferenceMeasure.for_phase(phase)
    if block.kind == "circle":
        return ReferenceMeasure.circle(block.r if block.r is not None else spec["r"])
    if block.kind == "uniform":
        return uniform_cloud(phase, block.n or particles, derive_seed(master_seed, label, "uniform"))
    if block.kind == "dirac":
        return dirac(phase, block.point)
    if block.kind == "atoms":
        return PointCloudMeasure.from_points(phase, block.points, block.weights)
    m_s = support_measure(spec, block.n or SUPPORT_ATOMS)
    if m_s is None:
        raise InvalidArgument(f"{spec.family.value} has no analytic support measure")
    return m_s


def _required(config, name):
    value = getattr(config, name)
    if value is None:
        raise InvalidArgument(f"kind '{config.kind.value}' needs '{name}'")
    return value


def _measure(config, name):
    block = _required(config, name)
    return build_measure(block, config.system, config.master_seed, name, config.particles)


def _start_cloud(config: ExperimentConfig) -> PointCloudMeasure:
    """First seed block if given, otherwise a random uniform cloud of `particles` atoms."""
    if config.seeds:
        return as_cloud(build_measure(config.seeds[0], config.system, config.master_seed, "seed_0", config.particles))
    return uniform_cloud(config.system.phase, config.particles, derive_seed(config.master_seed, "start_cloud"))


# =============================================================================
# KIND HANDLERS
# =============================================================================
# Each handler returns the report; extra CSV artifacts go straight to out_dir.

def _run_orbit(config, out_dir):
    spec = config.system
    orbit = orbit_batch(spec, [_required(config, "x0")], config.n)[:, 0]
    frame = pd.DataFrame({"step": np.arange(config.n)})
    if spec.phase is Phase.INTERVAL:
        frame["x"] = orbit
    else:
        frame["phi"], frame["r"] = orbit[:, 0], orbit[:, 1]
    frame.to_csv(out_dir / "orbit.csv", index=False, float_format=CSV_FLOAT_FORMAT)

    occupation = PointCloudMeasure.from_points(spec.phase, orbit)
    profile = dictionary_profile(occupation)
    labels = default_dictionary(spec.phase).labels
    return DiagnosticsReport(
        probe="orbit", spec=spec,
        settings={"n": config.n, "x0": config.x0},
        verdicts={"final_point": orbit[-1], "birkhoff_mean": profile[labels.index("x" if spec.phase is Phase.INTERVAL else "R")]},
        table=pd.DataFrame({"function": labels, "birkhoff_average": profile}),
        phrasing="Birkhoff averages of the default dictionary along one orbit",
    )


def _run_cesaro(config, out_dir):
    spec = config.system
    start = _start_cloud(config)
    half = max(1, config.n // 2)
    acc = CesaroAccumulator(spec, start, config.resolution).advance(half)
    at_half = acc.cesaro_grid
    grid = acc.advance(config.n - half).cesaro_grid
    write_grid_csv(grid, out_dir / "cesaro_grid.csv")

    verdicts = {"cauchy_l1": l1_distance(at_half, grid),
                "l1_to_reference": l1_distance(grid, uniform_grid(spec.phase, grid.resolution)),
                "max_cell_mass": float(grid.masses.max()),
                "cell_0_mass": float(grid.masses.reshape(-1)[0])}
    if config.target is not None:
        verdicts["distance_to_target"] = measure_distance(grid, _measure(config, "target"), config.metric)
    return DiagnosticsReport(
        probe="cesaro", spec=spec,
        settings={"n": config.n, "resolution": grid.resolution, "particles": start.n_atoms,
                  "master_seed": config.master_seed},
        verdicts=verdicts, table=grid_to_frame(grid),
        phrasing="binned Cesaro average of the pushforwards of the start cloud",
    )


def _run_ulam(config, out_dir):
    spec = config.system
    resolution = config.resolution or (100 if spec.phase is Phase.INTERVAL else 32)
    seed = derive_seed(config.master_seed, "ulam")
    matrix = build_ulam(spec, resolution, config.samples_per_cell, seed)
    result = ulam_cesaro_fixed_density(matrix, config.n_max, config.tol)
    write_matrix_csv(matrix, out_dir / "matrix.csv")
    write_grid_csv(result.density, out_dir / "density.csv")

    density = result.density
    verdicts = {"converged": result.converged, "iterations": result.iterations,
                "l1_to_reference": l1_distance(density, uniform_grid(spec.phase, density.resolution)),
                "cell_0_mass": float(density.masses.reshape(-1)[0]),
                "max_row_sum_error": float(np.max(np.abs(matrix.row_sums() - 1.0)))}
    if config.target is not None:
        verdicts["distance_to_target"] = measure_distance(density, _measure(config, "target"), config.metric)
    return DiagnosticsReport(
        probe="ulam", spec=spec,
        settings={"resolution": matrix.resolution, "samples_per_cell": config.samples_per_cell,
                  "seed": seed, "n_max": config.n_max, "tol": config.tol},
        verdicts=verdicts, table=result.cauchy_trace,
        phrasing=f"Ulam Cesaro density {'converged' if result.converged else 'did not converge'} "
                 f"after {result.iterations} iterations",
        caveats=[ULAM_CAVEAT],
    )


def _run_ensemble(config, out_dir):
    spec = config.system
    start = _start_cloud(config)
    result = evolve_ensemble(spec, start, config.n, config.resolution)
    write_trace_csv(result.mean_trace, out_dir / "mean_trace.csv")
    write_grid_csv(result.cesaro_grid, out_dir / "cesaro_grid.csv")
    write_cloud_csv(result.final_cloud, out_dir / "final_cloud.csv")

    trace = result.mean_trace
    verdicts = {"final_mean": float(np.dot(result.final_cloud.weights, result.final_cloud.points)),
                "trace_length": int(trace.shape[0]),
                "trace_min": float(trace.min()), "trace_max": float(trace.max()),
                "early_mean_drift": float(np.max(np.abs(trace[:ENSEMBLE_EARLY_STEPS] - trace[0]))),
                "max_mean_drift": float(np.max(np.abs(trace - trace[0]))),
                "l1_to_reference": l1_distance(result.cesaro_grid,
                                               uniform_grid(spec.phase, result.cesaro_grid.resolution))}
    settings = {"n": config.n, "particles": start.n_atoms, "resolution": result.cesaro_grid.resolution,
                "master_seed": config.master_seed}

    if config.sensitivity_particles:
        other_start = uniform_cloud(spec.phase, config.sensitivity_particles,
                                    derive_seed(config.master_seed, "sensitivity_cloud"))
        other = evolve_ensemble(spec, other_start, config.n, config.resolution)
        verdicts["sensitivity_l1"] = l1_distance(result.cesaro_grid, other.cesaro_grid)
        verdicts["sensitivity_max_trace_gap"] = float(np.max(np.abs(other.mean_trace - trace)))
        settings["sensitivity_particles"] = config.sensitivity_particles

    return DiagnosticsReport(
        probe="ensemble", spec=spec, settings=settings, verdicts=verdicts,
        table=pd.DataFrame({"step": np.arange(trace.shape[0]), "mean": trace}),
        phrasing="self-consistent evolution with the mean field closed on the finite ensemble",
        caveats=["E_mu is computed from the finite ensemble; compare two particle counts "
                 "before reading the trace as the exact-measure dynamics"],
    )


def _run_typical(config, out_dir):
    reference = None
    if config.reference is not None:
        ref = _measure(config, "reference")
        reference = ref if isinstance(ref, ReferenceMeasure) else ReferenceMeasure.custom(ref)
    if config.system.measure_dependent:
        ensemble = _start_cloud(config) if config.seeds else None
        return selfconsistent_typical_fraction(config.system, _measure(config, "target"), config.samples, config.n,
                                               config.tol, ensemble=ensemble, reference=reference,
                                               particles=config.particles, seed=config.master_seed)
    return typical_set_fraction(config.system, _measure(config, "target"), config.samples, config.n,
                                config.tol, reference=reference, metric=config.metric,
                                seed=config.master_seed, x0s=config.x0s)


def _run_weak_ergodicity(config, out_dir):
    if config.system.measure_dependent:
        return selfconsistent_weak_ergodicity(config.system, _measure(config, "target"), config.samples, config.n,
                                              config.tol, particles=config.particles, seed=config.master_seed)
    return weak_ergodicity_fraction(config.system, _measure(config, "target"), config.samples, config.n,
                                    config.tol, metric=config.metric, seed=config.master_seed)


def _run_naturality(config, out_dir):
    seeds = None
    if config.seeds:
        seeds = [(f"seed_{i}", as_cloud(build_measure(block, config.system, config.master_seed,
                                                      f"seed_{i}", config.particles)))
                 for i, block in enumerate(config.seeds)]
    runner = selfconsistent_naturality if config.system.measure_dependent else naturality_check
    return runner(config.system, _measure(config, "target"), seeds, n=config.n, tol=config.tol,
                  resolution=config.resolution, metric=config.metric,
                  particles=config.particles, seed=config.master_seed)


def _run_invariance(config, out_dir):
    residual = invariance_residual(config.system, _measure(config, "target"), config.metric)
    return DiagnosticsReport(
        probe="invariance_residual", spec=config.system,
        settings={"metric": Metric(config.metric).resolve(config.system.phase)},
        verdicts={"residual": residual},
        phrasing=f"distance between mu and its one-step pushforward: {residual:.6g}",
    )


def _run_wandering(config, out_dir):
    runner = selfconsistent_wandering if config.system.measure_dependent else wandering_check
    return runner(config.system, _measure(config, "target"), config.k_max, config.resolutions, config.threshold)


def _run_trace_match(config, out_dir):
    candidates = config.candidates
    if candidates is None:
        candidates = as_cloud(_measure(config, "target")).points
    return trace_match(config.system, _required(config, "x0"), candidates, config.n, config.tol, config.metric)


def _run_telescoping(config, out_dir):
    spec = config.system
    x0s = config.x0s
    if x0s is None:
        x0s = ReferenceMeasure.for_phase(spec.phase).sample(config.samples,
                                                             derive_seed(config.master_seed, "telescoping"))
    table = telescoping_residual(spec, x0s, config.n)
    violations = int((~table["within_bound"]).sum())
    return DiagnosticsReport(
        probe="telescoping_residual", spec=spec,
        settings={"n": config.n, "starting_points": len(x0s), "master_seed": config.master_seed},
        verdicts={"violations": violations, "max_residual": float(table["residual"].max()),
                  "bound": 2.0 / config.n},
        table=table,
        phrasing=f"{violations} dictionary functions exceed the 2B/n bound",
    )


def _run_continuity(config, out_dir):
    kwargs = {"offsets": config.offsets} if config.offsets else {}
    return transfer_continuity_probe(config.system, _required(config, "x0"), metric=config.metric, **kwargs)


def _run_checklist(config, out_dir):
    runner = selfconsistent_checklist if config.system.measure_dependent else condition_checklist
    return runner(config.system, _measure(config, "target"), n=config.n, tol=config.tol,
                  samples=config.samples, particles=config.particles, k_max=config.k_max,
                  resolutions=config.resolutions, metric=config.metric, seed=config.master_seed)


HANDLERS: dict[Kind, Callable[[ExperimentConfig, Path], DiagnosticsReport]] = {
    Kind.ORBIT: _run_orbit,
    Kind.CESARO: _run_cesaro,
    Kind.ULAM: _run_ulam,
    Kind.ENSEMBLE: _run_ensemble,
    Kind.TYPICAL_SET_FRACTION: _run_typical,
    Kind.WEAK_ERGODICITY_FRACTION: _run_weak_ergodicity,
    Kind.NATURALITY_CHECK: _run_naturality,
    Kind.INVARIANCE_RESIDUAL: _run_invariance,
    Kind.WANDERING_CHECK: _run_wandering,
    Kind.TRACE_MATCH: _run_trace_match,
    Kind.TELESCOPING_RESIDUAL: _run_telescoping,
    Kind.TRANSFER_CONTINUITY: _run_continuity,
    Kind.CONDITION_CHECKLIST: _run_checklist,
}


# =============================================================================
# RUN
# =============================================================================

class RunOutcome(NamedTuple):
    report: DiagnosticsReport
    out_dir: Path
    failed_expectations: list[str]


def check_expectations(config: ExperimentConfig, verdicts: dict) -> list[str]:
    failed = []
    for key, expectation in config.expect.items():
        if key not in verdicts:
            failed.append(f"{key}: no such verdict")
        elif not expectation.check(verdicts[key]):
            failed.append(f"{key}: got {verdicts[key]!r}, expected {expectation.model_dump(exclude_none=True)}")
    return failed


def run_experiment(config: ExperimentConfig, root: Path | None = None) -> RunOutcome:
    out_dir = Path(root or output_root()) / config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report = HANDLERS[config.kind](config, out_dir)
    report.write(out_dir, config=config.model_dump(mode="json"))
    verdicts = report.to_document()["verdicts"]
    return RunOutcome(report, out_dir, check_expectations(config, verdicts))


def list_systems() -> str:
    lines = []
    for info in catalog():
        params = ", ".join(f"{p.name} in {p.range_text} (default {p.default:.17g})" for p in info.params) or "none"
        flag = "measure-dependent" if info.measure_dependent else "autonomous"
        lines.append(f"{info.family.value} [{info.phase.value}, {flag}]")
        lines.append(f"    params: {params}")
        lines.append(f"    map:    {info.formula}")
    return "\n".join(lines) + "\n"


# =============================================================================
# ACCEPTANCE SUITE
# =============================================================================

class Criterion(NamedTuple):
    number: int
    title: str
    run: Callable[[int, Path], dict]


def _disc(family, **params):
    return SystemSpec(family=family, params=params)


def _criterion_halving(seed, out):
    spec = SystemSpec(family=Family.HALVING)
    report = typical_set_fraction(spec, dirac(Phase.INTERVAL, 0.0), 100, 10_000, 0.01, seed=seed)
    report.write(out / "typical_set_fraction")
    return {"passed": report.verdicts["fraction"] == 1.0, "fraction": report.verdicts["fraction"]}


def _criterion_rotation_ergodic(seed, out):
    spec = _disc(Family.DISC_ROTATION)
    circle = ReferenceMeasure.circle(spec["r"])
    typical = typical_set_fraction(spec, circle, 100, 100_000, 0.05, seed=seed)
    ergodic = weak_ergodicity_fraction(spec, circle, 100, 100_000, 0.05, seed=seed)
    residual = invariance_residual(spec, conditional_on_circle(spec["r"], 10_000))
    typical.write(out / "typical_set_fraction")
    ergodic.write(out / "weak_ergodicity_fraction")
    values = {"typical_fraction": typical.verdicts["fraction"],
              "weak_ergodicity_fraction": ergodic.verdicts["fraction"],
              "invariance_residual": residual}
    values["passed"] = (values["typical_fraction"] >= 0.95 and values["weak_ergodicity_fraction"] >= 0.95
                        and residual < 0.01)
    return values


def _criterion_rotation_rational(seed, out):
    spec = _disc(Family.DISC_ROTATION, alpha=1.0 / 3.0)
    report = naturality_check(spec, conditional_on_circle(spec["r"], 10_000), n=4000, tol=0.05, seed=seed)
    report.write(out / "naturality_check")
    return {"passed": report.verdicts["natural"] and report.verdicts["seed_count"] >= 4,
            "worst_discrepancy": report.verdicts["worst_discrepancy"],
            "seed_count": report.verdicts["seed_count"]}


def _criterion_no_rotation(seed, out):
    spec = _disc(Family.DISC_NO_ROTATION)
    n = 100_000
    report = typical_set_fraction(spec, ReferenceMeasure.circle(spec["r"]), 100, n, 0.05, seed=seed)
    report.write(out / "typical_set_fraction")

    x0s = report.table[["phi0", "r0"]].to_numpy()
    acc = OccupationAccumulator(spec, x0s, keep_points=False).advance(n)
    projections = np.column_stack([x0s[:, 0], np.full(len(x0s), spec["r"])])
    worst = max(float(np.max(np.abs(profile - dictionary_profile(dirac(Phase.DISC, p)))))
                for profile, p in zip(acc.profiles(), projections))
    return {"passed": report.verdicts["fraction"] <= 0.05 and worst <= 0.05,
            "typical_fraction": report.verdicts["fraction"], "worst_distance_to_projection": worst}


def _criterion_gigi(seed, out):
    spec = SystemSpec(family=Family.GIGI)
    halves = mixture([dirac(Phase.INTERVAL, 0.0), dirac(Phase.INTERVAL, 1.0)], [0.5, 0.5])
    acc = OccupationAccumulator(spec, [0.3], keep_points=False).advance(100_000)
    discrepancy = float(np.max(np.abs(acc.profiles()[0] - dictionary_profile(halves))))
    ergodic = weak_ergodicity_fraction(spec, halves, 100, 10_000, 0.05, seed=seed)
    ergodic.write(out / "weak_ergodicity_fraction")
    return {"passed": discrepancy < 0.02 and ergodic.verdicts["fraction"] <= 0.05,
            "occupation_discrepancy": discrepancy, "weak_ergodicity_fraction": ergodic.verdicts["fraction"]}


def _criterion_square_jump(seed, out):
    spec = SystemSpec(family=Family.SQUARE_JUMP, params={"c": 0.5})
    delta0 = dirac(Phase.INTERVAL, 0.0)
    seeds = default_seed_measures(spec, 10_000, seed)
    natural = naturality_check(spec, delta0, seeds, n=10_000, tol=0.05, resolution=100, seed=seed)
    uniform = dict(seeds)["uniform"]
    cell0 = float(CesaroAccumulator(spec, uniform, 100).advance(10_000).cesaro_grid.masses[0])
    residual = invariance_residual(spec, delta0)
    ergodic = weak_ergodicity_fraction(spec, delta0, 100, 10_000, 0.05, seed=seed)
    natural.write(out / "naturality_check")
    ergodic.write(out / "weak_ergodicity_fraction")
    return {"passed": (natural.verdicts["natural"] and cell0 >= 0.95 and abs(residual - 0.5) <= 1e-12
                       and ergodic.verdicts["fraction"] == 1.0),
            "worst_discrepancy": natural.verdicts["worst_discrepancy"], "uniform_zero_cell_mass": cell0,
            "invariance_residual": residual, "weak_ergodicity_fraction": ergodic.verdicts["fraction"]}


def _criterion_wandering(seed, out):
    spec = _disc(Family.DISC_JUMP)
    report = wandering_check(spec, conditional_on_circle(spec["r"], 10_000), 6, [32, 64, 128])
    report.write(out / "wandering_check")
    finest = report.verdicts["max_overlap_by_resolution"][-1]
    return {"passed": report.verdicts["wandering"] and finest < 0.05,
            "max_overlap_by_resolution": report.verdicts["max_overlap_by_resolution"]}


def _criterion_telescoping(seed, out):
    frames = []
    for info in catalog():
        if info.measure_dependent:
            continue
        spec = SystemSpec(family=info.family)
        x0s = ReferenceMeasure.for_phase(spec.phase).sample(10, derive_seed(seed, "telescoping", info.family.value))
        for n in (100, 1_000, 10_000):
            table = telescoping_residual(spec, x0s, n)
            table.insert(0, "family", info.family.value)
            frames.append(table)
    table = pd.concat(frames, ignore_index=True)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "telescoping.csv", index=False, float_format=CSV_FLOAT_FORMAT)
    violations = int((~table["within_bound"]).sum())
    return {"passed": violations == 0, "violations": violations, "checks": int(len(table))}


def _criterion_ulam(seed, out):
    doubling = SystemSpec(family=Family.DOUBLING)
    halving = SystemSpec(family=Family.HALVING)
    out.mkdir(parents=True, exist_ok=True)

    doubling_result = ulam_cesaro_fixed_density(build_ulam(doubling, 100, 64, derive_seed(seed, "ulam", "Doubling")))
    cloud = uniform_cloud(Phase.INTERVAL, 100_000, derive_seed(seed, "ulam", "particles"))
    particle_grid = CesaroAccumulator(doubling, cloud, 100).advance(1_000).cesaro_grid
    to_uniform = l1_distance(doubling_result.density, uniform_grid(Phase.INTERVAL, 100))
    to_particles = l1_distance(doubling_result.density, particle_grid)

    halving_result = ulam_cesaro_fixed_density(build_ulam(halving, 100, 64, derive_seed(seed, "ulam", "Halving")))
    cell0 = float(halving_result.density.masses[0])
    write_grid_csv(doubling_result.density, out / "doubling_density.csv")
    write_grid_csv(halving_result.density, out / "halving_density.csv")
    return {"passed": to_uniform < 0.05 and to_particles < 0.1 and cell0 >= 0.99,
            "doubling_l1_to_uniform": to_uniform, "doubling_l1_to_particles": to_particles,
            "halving_cell_0_mass": cell0}


def _criterion_selfconsistent(seed, out):
    out.mkdir(parents=True, exist_ok=True)
    mult_a_spec = SystemSpec(family=Family.MULT_A)
    mult_a = evolve_ensemble(mult_a_spec,
                             uniform_cloud(Phase.INTERVAL, 10_000, derive_seed(seed, "ensemble", "MultA")), 200)
    final_a = float(np.dot(mult_a.final_cloud.weights, mult_a.final_cloud.points))
    checklist_a = selfconsistent_checklist(mult_a_spec, dirac(Phase.INTERVAL, 0.0), n=1_000, samples=20,
                                           particles=10_000, k_max=3, resolutions=(32, 64), seed=seed)
    checklist_a.write(out / "multa_checklist")

    # Lebesgue is invariant for MultB: at E = 1/2 the map is the doubling map,
    # so along the exact invariant measure the skew product is a doubling orbit
    mult_b_spec = SystemSpec(family=Family.MULT_B)
    lebesgue = reference_cloud(Phase.INTERVAL, 100_000)
    frozen = PointCloudMeasure.from_points(Phase.INTERVAL,
                                           map_points_selfconsistent(mult_b_spec, lebesgue.points, 0.5))
    b_invariance = l1_distance(bin_cloud(frozen, 50), uniform_grid(Phase.INTERVAL, 50))
    frozen_ergodic = weak_ergodicity_fraction(SystemSpec(family=Family.DOUBLING), ReferenceMeasure.lebesgue(),
                                              100, 100_000, 0.05, metric=Metric.DICTIONARY, seed=seed)
    frozen_ergodic.write(out / "multb_frozen_weak_ergodicity")

    # the finite ensemble closes E_mu on itself; its mean leaves 1/2 after a few steps
    mult_b = evolve_ensemble(mult_b_spec,
                             uniform_cloud(Phase.INTERVAL, 100_000, derive_seed(seed, "ensemble", "MultB")), 1_000, 50)
    mult_b_small = evolve_ensemble(mult_b_spec,
                                   uniform_cloud(Phase.INTERVAL, 10_000, derive_seed(seed, "ensemble", "MultB", "small")),
                                   1_000, 50)
    b_early = float(np.max(np.abs(mult_b.mean_trace[:ENSEMBLE_EARLY_STEPS] - 0.5)))
    b_deviation = float(np.max(np.abs(mult_b.mean_trace - 0.5)))
    b_l1 = l1_distance(mult_b.cesaro_grid, uniform_grid(Phase.INTERVAL, 50))

    tent = evolve_ensemble(SystemSpec(family=Family.TENT_ADDITIVE, params={"epsilon": 0.05}),
                           uniform_cloud(Phase.INTERVAL, 100_000, derive_seed(seed, "ensemble", "TentAdditive")),
                           1_000, 50)
    tent_l1 = l1_distance(tent.cesaro_grid, uniform_grid(Phase.INTERVAL, 50))

    write_trace_csv(mult_b.mean_trace, out / "multb_mean_trace.csv")
    write_trace_csv(tent.mean_trace, out / "tent_mean_trace.csv")
    passed = (final_a < 1e-3 and checklist_a.verdicts["all_conditions_hold"]
              and b_invariance < 0.05 and frozen_ergodic.verdicts["fraction"] >= 0.95
              and b_early <= 0.02 and tent_l1 < 0.1)
    return {"passed": passed,
            "multa_final_mean": final_a,
            "multa_delta0_conditions_hold": checklist_a.verdicts["all_conditions_hold"],
            "multb_frozen_l1_to_uniform": b_invariance,
            "multb_frozen_weak_ergodicity_fraction": frozen_ergodic.verdicts["fraction"],
            "multb_early_mean_deviation": b_early,
            "multb_max_mean_deviation": b_deviation,
            "multb_mean_field_drift": b_deviation > 0.02,
            "multb_l1_to_uniform": b_l1,
            "multb_small_ensemble_max_mean_deviation": float(np.max(np.abs(mult_b_small.mean_trace - 0.5))),
            "tent_l1_to_uniform": tent_l1}


def _criterion_determinism(seed, out):
    documents = []
    for attempt in range(2):
        halving = _criterion_halving(seed, out / f"attempt_{attempt}" / "halving")
        wandering = _criterion_wandering(seed, out / f"attempt_{attempt}" / "wandering")
        documents.append(json.dumps(_json_ready({"halving": halving, "wandering": wandering}), sort_keys=True))
    report_bytes = [(out / f"attempt_{a}" / "halving" / "typical_set_fraction" / "report.json").read_bytes()
                    for a in range(2)]
    identical = documents[0] == documents[1] and report_bytes[0] == report_bytes[1]
    return {"passed": identical, "identical_reruns": identical}


CRITERIA = [
    Criterion(1, "Halving: typical set of delta_0 has full measure", _criterion_halving),
    Criterion(2, "DiscRotation irrational: typicality, weak ergodicity and invariance of m_C", _criterion_rotation_ergodic),
    Criterion(3, "DiscRotation alpha=1/3: m_C natural across seed measures", _criterion_rotation_rational),
    Criterion(4, "DiscNoRotation: off-circle points are not m_C-typical", _criterion_no_rotation),
    Criterion(5, "GiGi: unique observable mixture that is not weakly ergodic", _criterion_gigi),
    Criterion(6, "SquareJump c=0.5: non-invariant natural, weakly ergodic delta_0", _criterion_square_jump),
    Criterion(7, "DiscJump: circle measure is wandering", _criterion_wandering),
    Criterion(8, "Telescoping residual bound for every autonomous family", _criterion_telescoping),
    Criterion(9, "Ulam consistency for Doubling and Halving", _criterion_ulam),
    Criterion(10, "Self-consistent MultA, MultB, TentAdditive", _criterion_selfconsistent),
    Criterion(11, "Reruns with the same seed are identical", _criterion_determinism),
]


def _json_ready(values):
    return {k: (v.tolist() if isinstance(v, np.ndarray) else
                [float(x) for x in v] if isinstance(v, list) else
                bool(v) if isinstance(v, (bool, np.bool_)) else
                float(v) if isinstance(v, (float, np.floating)) else v)
            for k, v in values.items()}


def _run_criterion(criterion: Criterion, seed: int, out_dir: Path) -> tuple[dict, float]:
    started = time.perf_counter()
    try:
        values = criterion.run(derive_seed(seed, "criterion", criterion.number),
                               out_dir / f"criterion_{criterion.number:02d}")
    except Exception as exc:
        raise RuntimeError(f"criterion {criterion.number} ({criterion.title}) failed: {exc}") from exc
    return _json_ready(values), time.perf_counter() - started


def reproduce_paper_suite(output_dir, master_seed: int = 0, n_jobs: int = 1,
                          criteria: Sequence[int] | None = None) -> pd.DataFrame:
    """Run the acceptance criteria with fixed seeds; writes summary.csv (no timings) and timings.csv."""
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    selected = [c for c in CRITERIA if criteria is None or c.number in set(criteria)]

    results = Parallel(n_jobs=n_jobs)(delayed(_run_criterion)(c, master_seed, out_dir) for c in selected)

    rows, timings = [], []
    for criterion, (values, seconds) in zip(selected, results):
        passed = bool(values.pop("passed"))
        rows.append({"criterion": criterion.number, "title": criterion.title, "passed": passed,
                     "measured": json.dumps(values, sort_keys=True)})
        timings.append({"criterion": criterion.number, "seconds": seconds})

    summary = pd.DataFrame(rows, columns=["criterion", "title", "passed", "measured"])
    summary.to_csv(out_dir / "summary.csv", index=False)
    pd.DataFrame(timings).to_csv(out_dir / "timings.csv", index=False, float_format="%.3f")
    return summary


# =============================================================================
# CLI
# =============================================================================

def _say(quiet, *args):
    if not quiet:
        print(*args)


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"  {loc}: {err['msg']}")
    return "\n".join(parts)


def _cmd_run(args):
    quiet = args.quiet
    _say(quiet, "=" * 60)
    _say(quiet, f"🔬 EXPERIMENT: {args.config}")
    _say(quiet, "=" * 60)
    try:
        _say(quiet, "   [1/3] Loading config...")
        config = load_config(args.config)
    except json.JSONDecodeError as exc:
        print(f"❌ Malformed config {args.config} (line {exc.lineno}, column {exc.colno}): {exc.msg}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except ValidationError as exc:
        print(f"❌ Invalid config {args.config}:\n{_format_validation_error(exc)}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except OSError as exc:
        print(f"❌ Could not read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        _say(quiet, f"   [2/3] Running {config.kind.value} on {config.system.family.value}...")
        outcome = run_experiment(config)
    except (InvalidArgument, WrongEvaluator) as exc:
        print(f"❌ Invalid experiment: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except OSError as exc:
        print(f"❌ I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO

    _say(quiet, f"   [3/3] Report written to {outcome.out_dir}")
    for key, value in sorted(outcome.report.to_document()["verdicts"].items()):
        _say(quiet, f"      {key:<32} {value}")
    _say(quiet, f"   {outcome.report.phrasing}")

    if args.check:
        if outcome.failed_expectations:
            for failure in outcome.failed_expectations:
                print(f"❌ EXPECTATION FAILED: {failure}", file=sys.stderr)
            return EXIT_CHECK_FAILED
        _say(quiet, f"✅ All {len(config.expect)} expectations hold.")
    elif outcome.failed_expectations:
        _say(quiet, f"⚠️  {len(outcome.failed_expectations)} expectation(s) unmet (run with --check to gate on them)")
    return EXIT_OK


def _cmd_list(args):
    print(list_systems(), end="")
    return EXIT_OK


def _cmd_reproduce(args):
    quiet = args.quiet
    _say(quiet, "=" * 60)
    _say(quiet, "🧪 ACCEPTANCE SUITE")
    _say(quiet, "=" * 60)
    try:
        relative_output_dir(args.output_dir)
    except ValueError as exc:
        print(f"❌ Invalid output directory: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        summary = reproduce_paper_suite(Path(output_root()) / args.output_dir, args.master_seed,
                                        args.jobs, args.criteria)
    except OSError as exc:
        print(f"❌ I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO

    print(f"{'#':<4} | {'Criterion':<72} | Outcome")
    print("-" * 90)
    for _, row in summary.iterrows():
        outcome = "✅ PASS" if row["passed"] else "❌ FAIL"
        print(f"{row['criterion']:<4} | {row['title']:<72} | {outcome}")
    print("-" * 90)
    passed = int(summary["passed"].sum())
    print(f"FINAL SCORE: {passed}/{len(summary)} criteria reproduced")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Ergodic-averaging laboratory: orbits, Cesaro averages, Ulam, probes")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment config")
    run.add_argument("config", help="Path to a JSON experiment config")
    run.add_argument("--check", action="store_true", help="Exit 1 when an 'expect' entry fails")
    run.add_argument("--quiet", action="store_true", help="Only print errors")
    run.set_defaults(handler=_cmd_run)

    systems = sub.add_parser("list-systems", help="Print the map catalog")
    systems.set_defaults(handler=_cmd_list)

    suite = sub.add_parser("reproduce-paper", help="Run every acceptance criterion")
    suite.add_argument("output_dir", help="Directory (under the output root) for the suite results")
    suite.add_argument("--master-seed", type=int, default=0)
    suite.add_argument("--jobs", type=int, default=1, help="Parallel sub-runs (joblib)")
    suite.add_argument("--criteria", type=int, nargs="*", default=None, help="Subset of criterion numbers")
    suite.add_argument("--quiet", action="store_true")
    suite.set_defaults(handler=_cmd_reproduce)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
