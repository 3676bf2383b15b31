"""
Diagnostics
===========
Numerical probes for typicality, weak ergodicity, naturality, invariance,
wandering and weak tracing. Each probe returns a ``DiagnosticsReport``
carrying its settings, scalar verdicts and a per-sample breakdown table.

Verdicts are evidence at finite n and finite resolution: they are phrased
"consistent with" / "inconsistent with", never as proofs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from averaging import (
    CesaroAccumulator,
    OccupationAccumulator,
    default_resolution,
    pushforward,
)
from space_measures import (
    CSV_FLOAT_FORMAT,
    TWO_PI,
    GridMeasure,
    InvalidArgument,
    Phase,
    PointCloudMeasure,
    as_resolution,
    bin_cloud,
    conditional_on_circle,
    derive_seed,
    dict_discrepancy,
    dictionary_profile,
    dirac,
    grid_to_cloud,
    l1_distance,
    overlap,
    reference_cloud,
    uniform_grid,
    w1_interval,
)
from system_zoo import SystemSpec, WrongEvaluator, support_measure

# =============================================================================
# CONFIGURATION
# =============================================================================
REFERENCE_ATOMS = 10_000        # atoms when a reference measure is used as a cloud
DEFAULT_PARTICLES = 10_000      # particles per seed measure in naturality checks
PERTURBATIONS = 3               # smooth perturbed seeds besides m and m_S
WANDERING_THRESHOLD = 0.05
CONFIDENCE = 0.95
CONTINUITY_OFFSETS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-6)
JUMP_THRESHOLD = 0.1            # output distance that still counts as a jump at the smallest offset
SUPPORT_DENSITY_BOUND = 10.0    # candidate cell mass over m_S cell mass still read as a bounded density

CAUCHY_CAVEAT = ("limits are asymptotic with no rate; a point counts only if its occupation "
                 "at n and n/2 agree within tol (Cauchy guard)")


class ReferenceKind(str, Enum):
    LEBESGUE_INTERVAL = "LebesgueInterval"
    AREA_DISC = "AreaDisc"
    CIRCLE_CONDITIONAL = "CircleConditional"
    CUSTOM = "Custom"


class Metric(str, Enum):
    AUTO = "auto"
    W1 = "w1"
    DICTIONARY = "dictionary"

    def resolve(self, phase: Phase) -> "Metric":
        if self is not Metric.AUTO:
            if self is Metric.W1 and phase is not Phase.INTERVAL:
                raise InvalidArgument("w1 is available on Interval01 only")
            return self
        return Metric.W1 if phase is Phase.INTERVAL else Metric.DICTIONARY


@dataclass(frozen=True)
class ReferenceMeasure:
    """The background measure m (or m_S) that initial points are drawn from."""
    kind: ReferenceKind
    radius: float | None = None
    measure: PointCloudMeasure | GridMeasure | None = None

    @classmethod
    def lebesgue(cls) -> "ReferenceMeasure":
        return cls(ReferenceKind.LEBESGUE_INTERVAL)

    @classmethod
    def area(cls) -> "ReferenceMeasure":
        return cls(ReferenceKind.AREA_DISC)

    @classmethod
    def circle(cls, r: float) -> "ReferenceMeasure":
        if not 0.0 < r < 1.0:
            raise InvalidArgument(f"circle radius must be in (0, 1), got {r}")
        return cls(ReferenceKind.CIRCLE_CONDITIONAL, radius=float(r))

    @classmethod
    def custom(cls, measure: PointCloudMeasure | GridMeasure) -> "ReferenceMeasure":
        return cls(ReferenceKind.CUSTOM, measure=measure)

    @classmethod
    def for_phase(cls, phase: Phase) -> "ReferenceMeasure":
        return cls.lebesgue() if Phase(phase) is Phase.INTERVAL else cls.area()

    @property
    def phase(self) -> Phase:
        if self.kind is ReferenceKind.LEBESGUE_INTERVAL:
            return Phase.INTERVAL
        if self.kind is ReferenceKind.CUSTOM:
            return self.measure.phase
        return Phase.DISC

    @property
    def label(self) -> str:
        if self.kind is ReferenceKind.CIRCLE_CONDITIONAL:
            return f"{self.kind.value}(r={self.radius:g})"
        return self.kind.value

    def sample(self, n: int, seed: int) -> np.ndarray:
        """n points drawn from the measure: (n,) on the interval, (n, 2) on the disc."""
        if n < 1:
            raise InvalidArgument(f"sample size must be >= 1, got {n}")
        rng = np.random.default_rng(seed)
        if self.kind is ReferenceKind.LEBESGUE_INTERVAL:
            return rng.random(n)
        if self.kind is ReferenceKind.AREA_DISC:
            return np.column_stack([TWO_PI * rng.random(n), np.sqrt(rng.random(n))])
        if self.kind is ReferenceKind.CIRCLE_CONDITIONAL:
            return np.column_stack([TWO_PI * rng.random(n), np.full(n, self.radius)])
        cloud = as_cloud(self.measure)
        picks = rng.choice(cloud.n_atoms, size=n, p=cloud.weights)
        return np.array(cloud.points[picks])

    def as_cloud(self, n: int = REFERENCE_ATOMS) -> PointCloudMeasure:
        if self.kind is ReferenceKind.CIRCLE_CONDITIONAL:
            return conditional_on_circle(self.radius, n)
        if self.kind is ReferenceKind.CUSTOM:
            return as_cloud(self.measure)
        return reference_cloud(self.phase, n)


MeasureLike = Union[PointCloudMeasure, GridMeasure, ReferenceMeasure]


def as_cloud(measure: MeasureLike) -> PointCloudMeasure:
    if isinstance(measure, ReferenceMeasure):
        return measure.as_cloud()
    if isinstance(measure, GridMeasure):
        return grid_to_cloud(measure)
    return measure


def measure_distance(mu: MeasureLike, nu: MeasureLike, metric: Metric | str = Metric.AUTO) -> float:
    a, b = as_cloud(mu), as_cloud(nu)
    if a.phase is not b.phase:
        raise InvalidArgument(f"phase mismatch: {a.phase.value} vs {b.phase.value}")
    if Metric(metric).resolve(a.phase) is Metric.W1:
        return w1_interval(a, b)
    return dict_discrepancy(a, b)


# =============================================================================
# REPORT
# =============================================================================

def _plain(value):
    """JSON-ready copy: numpy scalars, tuples, enums and specs become plain values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, SystemSpec):
        return value.model_dump(mode="json")
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


@dataclass
class DiagnosticsReport:
    probe: str
    spec: SystemSpec | None
    settings: dict
    verdicts: dict
    table: pd.DataFrame = field(default_factory=pd.DataFrame)
    phrasing: str = ""
    caveats: list[str] = field(default_factory=list)

    def to_document(self, config: dict | None = None) -> dict:
        doc = {
            "probe": self.probe,
            "system": _plain(self.spec) if self.spec is not None else None,
            "settings": _plain(self.settings),
            "verdicts": _plain(self.verdicts),
            "phrasing": self.phrasing,
            "caveats": list(self.caveats),
        }
        if config is not None:
            doc["config"] = _plain(config)
        return doc

    def to_text(self) -> str:
        header = [f"probe: {self.probe}"]
        if self.spec is not None:
            params = ", ".join(f"{k}={v!r}" for k, v in sorted(self.spec.params.items()))
            header.append(f"system: {self.spec.family.value}({params})")
        header += [f"setting.{k}: {json.dumps(_plain(v), sort_keys=True)}" for k, v in sorted(self.settings.items())]
        header += [f"verdict.{k}: {json.dumps(_plain(v), sort_keys=True)}" for k, v in sorted(self.verdicts.items())]
        header.append(f"phrasing: {self.phrasing}")
        header += [f"caveat: {c}" for c in self.caveats]
        body = self.table.to_csv(index=False, float_format=CSV_FLOAT_FORMAT) if not self.table.empty else ""
        return "\n".join(header) + "\n\n" + body

    def write(self, out_dir, config: dict | None = None) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "report.json": out_dir / "report.json",
            "report.txt": out_dir / "report.txt",
            "breakdown.csv": out_dir / "breakdown.csv",
        }
        paths["report.json"].write_text(json.dumps(self.to_document(config), sort_keys=True, indent=2) + "\n")
        paths["report.txt"].write_text(self.to_text())
        self.table.to_csv(paths["breakdown.csv"], index=False, float_format=CSV_FLOAT_FORMAT)
        return paths


# =============================================================================
# SHARED PIECES
# =============================================================================

def wilson_interval(successes: int, total: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total < 1:
        raise InvalidArgument(f"total must be >= 1, got {total}")
    if not 0 <= successes <= total:
        raise InvalidArgument(f"successes must lie in [0, {total}], got {successes}")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = successes / total
    denom = 1.0 + z * z / total
    centre = (p + z * z / (2.0 * total)) / denom
    half = z * np.sqrt(p * (1.0 - p) / total + z * z / (4.0 * total * total)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def _require_autonomous(spec, probe):
    if spec.measure_dependent:
        raise WrongEvaluator(f"{probe} needs an autonomous family, got {spec.family.value}")


def _point_columns(phase, points):
    if phase is Phase.INTERVAL:
        return {"x0": np.asarray(points).reshape(-1)}
    points = np.asarray(points).reshape(-1, 2)
    return {"phi0": points[:, 0], "r0": points[:, 1]}


def _occupation_distances(spec: SystemSpec, x0s: np.ndarray, n: int, target: PointCloudMeasure,
                          metric: Metric) -> pd.DataFrame:
    """Distance of each occupation measure to the target at n and n/2, and between the two."""
    half = max(1, n // 2)
    keep_points = metric is Metric.W1
    acc = OccupationAccumulator(spec, x0s, keep_points=keep_points)

    acc.advance(half)
    if keep_points:
        at_half = [acc.occupation_cloud(i) for i in range(acc.n_points)]
    else:
        at_half = acc.profiles().copy()
    acc.advance(n - half)

    if keep_points:
        at_n = [acc.occupation_cloud(i) for i in range(acc.n_points)]
        d_n = np.array([w1_interval(mu, target) for mu in at_n])
        d_half = np.array([w1_interval(mu, target) for mu in at_half])
        d_cauchy = np.array([w1_interval(a, b) for a, b in zip(at_n, at_half)])
    else:
        target_profile = dictionary_profile(target, acc.dictionary)
        at_n = acc.profiles()
        d_n = np.max(np.abs(at_n - target_profile), axis=1)
        d_half = np.max(np.abs(at_half - target_profile), axis=1)
        d_cauchy = np.max(np.abs(at_n - at_half), axis=1)

    table = pd.DataFrame(_point_columns(spec.phase, acc.x0s))
    table["d_target_n"] = d_n
    table["d_target_half"] = d_half
    table["d_cauchy"] = d_cauchy
    return table


def _fraction_verdicts(hits):
    successes, total = int(np.sum(hits)), int(len(hits))
    low, high = wilson_interval(successes, total)
    return {"fraction": successes / total, "successes": successes, "total": total,
            "wilson_low": low, "wilson_high": high}


# =============================================================================
# PROBES
# =============================================================================

def typical_set_fraction(spec: SystemSpec, target: MeasureLike, grid_of_x0: int, n: int, tol: float,
                         reference: ReferenceMeasure | None = None, metric: Metric | str = Metric.AUTO,
                         seed: int = 0, x0s=None) -> DiagnosticsReport:
    """
    Monte Carlo estimate of m(Z_target): the share of initial points from the
    reference measure whose occupation measures sit within tol of the target
    at n and at n/2, and within tol of each other.
    """
    _require_autonomous(spec, "typical_set_fraction")
    reference = reference or ReferenceMeasure.for_phase(spec.phase)
    metric = Metric(metric).resolve(spec.phase)
    sample_seed = derive_seed(seed, "typical_set_fraction", "x0")
    points = reference.sample(grid_of_x0, sample_seed) if x0s is None else np.asarray(x0s, dtype=np.float64)

    table = _occupation_distances(spec, points, n, as_cloud(target), metric)
    table["typical"] = (table["d_target_n"] <= tol) & (table["d_target_half"] <= tol) & (table["d_cauchy"] <= tol)
    verdicts = _fraction_verdicts(table["typical"].to_numpy())

    return DiagnosticsReport(
        probe="typical_set_fraction",
        spec=spec,
        settings={"n": n, "tol": tol, "grid_of_x0": int(len(table)), "metric": metric,
                  "reference": reference.label, "seed": seed, "sample_seed": sample_seed,
                  "explicit_x0s": x0s is not None},
        verdicts=verdicts,
        table=table,
        phrasing=(f"estimated m(Z_target) = {verdicts['fraction']:.4f} "
                  f"(95% CI [{verdicts['wilson_low']:.4f}, {verdicts['wilson_high']:.4f}])"),
        caveats=[CAUCHY_CAVEAT],
    )


def weak_ergodicity_fraction(spec: SystemSpec, mu: MeasureLike, samples: int, n: int, tol: float,
                             metric: Metric | str = Metric.AUTO, seed: int = 0) -> DiagnosticsReport:
    """Estimate of mu(Z_mu): initial points drawn from mu itself (atoms resampled by weight)."""
    _require_autonomous(spec, "weak_ergodicity_fraction")
    metric = Metric(metric).resolve(spec.phase)
    sample_seed = derive_seed(seed, "weak_ergodicity_fraction", "x0")
    source = mu if isinstance(mu, ReferenceMeasure) else ReferenceMeasure.custom(mu)
    target = as_cloud(mu)
    points = source.sample(samples, sample_seed)

    table = _occupation_distances(spec, points, n, target, metric)
    guard = table["d_cauchy"] <= tol if n >= 2 else True
    table["typical"] = (table["d_target_n"] <= tol) & (table["d_target_half"] <= tol) & guard
    verdicts = _fraction_verdicts(table["typical"].to_numpy())
    verdicts["weakly_ergodic"] = verdicts["fraction"] == 1.0

    wording = "consistent with" if verdicts["weakly_ergodic"] else "inconsistent with"
    return DiagnosticsReport(
        probe="weak_ergodicity_fraction",
        spec=spec,
        settings={"n": n, "tol": tol, "samples": samples, "metric": metric,
                  "seed": seed, "sample_seed": sample_seed},
        verdicts=verdicts,
        table=table,
        phrasing=(f"estimated mu(Z_mu) = {verdicts['fraction']:.4f}; "
                  f"{wording} weak ergodicity of mu"),
        caveats=[CAUCHY_CAVEAT],
    )


def default_seed_measures(spec: SystemSpec, particles: int = DEFAULT_PARTICLES,
                          seed: int = 0) -> list[tuple[str, PointCloudMeasure]]:
    """
    Seeds for naturality: the reference measure m, smooth perturbations of it
    (first-harmonic density bumps), and m_S when the support measure is known.
    """
    reference = ReferenceMeasure.for_phase(spec.phase)
    base_points = reference.sample(particles, derive_seed(seed, "seed_measures", "base"))
    seeds = [("uniform", PointCloudMeasure.from_points(spec.phase, base_points))]

    for j in range(PERTURBATIONS):
        rng = np.random.default_rng(derive_seed(seed, "seed_measures", "perturbation", j))
        points = reference.sample(particles, derive_seed(seed, "seed_measures", "points", j))
        amplitude, shift = 0.2 + 0.3 * rng.random(), rng.random()
        if spec.phase is Phase.INTERVAL:
            weights = 1.0 + amplitude * np.sin(TWO_PI * (points + shift))
        else:
            radial = 0.2 + 0.3 * rng.random()
            weights = ((1.0 + amplitude * np.cos(points[:, 0] - TWO_PI * shift))
                       * (1.0 + radial * (2.0 * points[:, 1] - 1.0)))
        seeds.append((f"perturbation_{j}", PointCloudMeasure.from_points(spec.phase, points, weights)))

    m_s = support_measure(spec, particles)
    if m_s is not None:
        seeds.append(("m_S", m_s))
    return seeds


def naturality_check(spec: SystemSpec, candidate: MeasureLike,
                     seed_measures: Sequence[tuple[str, PointCloudMeasure]] | None = None,
                     n: int = 10_000, tol: float = 0.05, resolution=None,
                     metric: Metric | str = Metric.AUTO, particles: int = DEFAULT_PARTICLES,
                     seed: int = 0) -> DiagnosticsReport:
    """
    Cesaro pushforwards of every seed measure against the candidate. Both sides
    are compared binned at the same resolution (cell-centre clouds), so an
    invariant candidate fed in as a seed scores exactly its own Cesaro drift.
    """
    _require_autonomous(spec, "naturality_check")
    seeds = list(seed_measures) if seed_measures is not None else default_seed_measures(spec, particles, seed)
    return _naturality_report("naturality_check", spec, candidate, seeds, n, tol, resolution, metric, particles, seed)


def _naturality_report(name, spec, candidate, seeds, n, tol, resolution, metric, particles, seed):
    metric = Metric(metric).resolve(spec.phase)
    resolution = as_resolution(spec.phase, resolution or default_resolution(spec.phase))
    if not seeds:
        raise InvalidArgument(f"{name} needs at least one seed measure")

    candidate_binned = grid_to_cloud(bin_cloud(as_cloud(candidate), resolution))
    rows = []
    half = max(1, n // 2)
    for label, mu0 in seeds:
        acc = CesaroAccumulator(spec, as_cloud(mu0), resolution).advance(half)
        at_half = acc.cesaro_grid
        at_n = acc.advance(n - half).cesaro_grid
        distance = measure_distance(grid_to_cloud(at_n), candidate_binned, metric)
        rows.append({"seed_measure": label, "discrepancy": distance,
                     "cauchy_l1": l1_distance(at_half, at_n), "within_tol": distance <= tol})

    table = pd.DataFrame(rows)
    worst = float(table["discrepancy"].max())
    passed = bool(table["within_tol"].all())
    return DiagnosticsReport(
        probe=name,
        spec=spec,
        settings={"n": n, "tol": tol, "resolution": resolution, "metric": metric,
                  "seeds": [label for label, _ in seeds], "particles": particles, "seed": seed},
        verdicts={"natural": passed, "worst_discrepancy": worst, "seed_count": len(seeds)},
        table=table,
        phrasing=f"{'consistent' if passed else 'inconsistent'} with the candidate being natural "
                 f"(worst Cesaro discrepancy {worst:.4g} against tol {tol:g})",
        caveats=["Cesaro averages are binned; discrepancy is measured between cell-centre clouds"],
    )


def invariance_residual(spec: SystemSpec, mu: MeasureLike, metric: Metric | str = Metric.AUTO) -> float:
    """Distance between mu and T_* mu."""
    cloud = as_cloud(mu)
    return measure_distance(cloud, pushforward(spec, cloud), metric)


def wandering_check(spec: SystemSpec, mu: MeasureLike, k_max: int, resolutions: Sequence,
                    threshold: float = WANDERING_THRESHOLD) -> DiagnosticsReport:
    """
    Pairwise overlaps of binned T_*^j mu, T_*^k mu (0 <= j, k <= k_max) at every
    resolution. Wandering when the finest maximum off-diagonal overlap is below
    threshold and the maxima do not increase under refinement.
    """
    _require_autonomous(spec, "wandering_check")
    return _wandering_report("wandering_check", spec, mu, k_max, resolutions, threshold)


def _wandering_report(name, spec, mu, k_max, resolutions, threshold):
    if k_max < 1:
        raise InvalidArgument(f"k_max must be >= 1, got {k_max}")
    if not resolutions:
        raise InvalidArgument(f"{name} needs at least one resolution")
    grids = sorted((as_resolution(spec.phase, r) for r in resolutions), key=lambda res: int(np.prod(res)))

    images = [as_cloud(mu)]
    for _ in range(k_max):
        images.append(pushforward(spec, images[-1]))

    rows, maxima = [], []
    for res in grids:
        binned = [bin_cloud(image, res) for image in images]
        worst = 0.0
        for j in range(k_max + 1):
            for k in range(k_max + 1):
                value = overlap(binned[j], binned[k])
                if j != k:
                    worst = max(worst, value)
                rows.append({"resolution": "x".join(str(v) for v in res), "j": j, "k": k, "overlap": value})
        maxima.append(worst)

    non_increasing = all(b <= a + 1e-12 for a, b in zip(maxima, maxima[1:]))
    wandering = bool(maxima[-1] < threshold and non_increasing)
    return DiagnosticsReport(
        probe=name,
        spec=spec,
        settings={"k_max": k_max, "resolutions": [list(r) for r in grids], "threshold": threshold},
        verdicts={"wandering": wandering, "max_overlap_by_resolution": maxima,
                  "non_increasing": non_increasing},
        table=pd.DataFrame(rows),
        phrasing=f"{'consistent' if wandering else 'inconsistent'} with mu being wandering",
        caveats=["mutual singularity cannot be decided at finite resolution; "
                 "read the full overlap table, not only the flag"],
    )


def trace_match(spec: SystemSpec, x, support_samples, n: int, tol: float,
                metric: Metric | str = Metric.AUTO) -> DiagnosticsReport:
    """Candidate on S whose occupation statistics are closest to those of x, if within tol."""
    _require_autonomous(spec, "trace_match")
    metric = Metric(metric).resolve(spec.phase)
    candidates = PointCloudMeasure.from_points(spec.phase, support_samples).points
    if len(candidates) == 0:
        raise InvalidArgument("trace_match needs at least one candidate")
    start = PointCloudMeasure.from_points(spec.phase, [x]).points
    batch = np.concatenate([start, candidates])

    keep_points = metric is Metric.W1
    acc = OccupationAccumulator(spec, batch, keep_points=keep_points).advance(n)
    if keep_points:
        own = acc.occupation_cloud(0)
        distances = np.array([w1_interval(own, acc.occupation_cloud(i)) for i in range(1, acc.n_points)])
    else:
        profiles = acc.profiles()
        distances = np.max(np.abs(profiles[1:] - profiles[0]), axis=1)

    table = pd.DataFrame(_point_columns(spec.phase, candidates))
    table["discrepancy"] = distances
    best = int(np.argmin(distances))
    found = bool(distances[best] <= tol)
    best_point = _plain(candidates[best]) if found else None
    return DiagnosticsReport(
        probe="trace_match",
        spec=spec,
        settings={"n": n, "tol": tol, "metric": metric, "candidates": int(len(candidates)),
                  "x": _plain(start[0])},
        verdicts={"match": best_point, "match_index": best if found else None,
                  "best_discrepancy": float(distances[best])},
        table=table,
        phrasing=("a weakly tracing candidate was found" if found
                  else "no candidate traces x within tol"),
        caveats=["the candidate list is finite: 'none' is evidence, not proof"],
    )


def transfer_continuity_probe(spec: SystemSpec, point, offsets: Sequence[float] = CONTINUITY_OFFSETS,
                              metric: Metric | str = Metric.AUTO) -> DiagnosticsReport:
    """
    Distance between T_* delta_{p +/- h} and T_* delta_p as h shrinks. A
    distance that stays large as h -> 0 exhibits a discontinuity of T_* at delta_p.
    """
    _require_autonomous(spec, "transfer_continuity")
    metric = Metric(metric).resolve(spec.phase)
    base = dirac(spec.phase, point)
    pushed_base = pushforward(spec, base)
    p = np.array(base.points[0])

    rows = []
    for h in sorted(offsets, reverse=True):
        for side in (+1.0, -1.0):
            moved = p + side * h if spec.phase is Phase.INTERVAL else p + np.array([0.0, side * h])
            radius = moved if spec.phase is Phase.INTERVAL else moved[1]
            if not 0.0 <= float(radius) <= 1.0:
                continue
            neighbour = dirac(spec.phase, moved)
            rows.append({"offset": h, "side": "+" if side > 0 else "-",
                         "input_distance": measure_distance(neighbour, base, metric),
                         "output_distance": measure_distance(pushforward(spec, neighbour), pushed_base, metric)})

    table = pd.DataFrame(rows)
    smallest = table[table["offset"] == table["offset"].min()]
    jump = float(smallest["output_distance"].max())
    continuous = jump < JUMP_THRESHOLD
    return DiagnosticsReport(
        probe="transfer_continuity",
        spec=spec,
        settings={"point": _plain(p), "offsets": list(offsets), "metric": metric,
                  "jump_threshold": JUMP_THRESHOLD},
        verdicts={"continuous": continuous, "jump_at_smallest_offset": jump,
                  "invariance_residual": measure_distance(base, pushed_base, metric)},
        table=table,
        phrasing=f"{'consistent' if continuous else 'inconsistent'} with continuity of T_* at delta_p",
    )


def condition_checklist(spec: SystemSpec, candidate: MeasureLike, n: int = 10_000, tol: float = 0.05,
                        samples: int = 100, particles: int = DEFAULT_PARTICLES, k_max: int = 6,
                        resolutions: Sequence = (32, 64, 128), metric: Metric | str = Metric.AUTO,
                        seed: int = 0) -> DiagnosticsReport:
    """
    The three hypotheses behind m(Z) * m_S(Z) = 1: (i) naturality over seeds
    from M(m) and M(m_S), (ii) weak ergodicity of the candidate, (iii) no
    wandering measure in M(m_S).
    """
    _require_autonomous(spec, "condition_checklist")
    natural = naturality_check(spec, candidate, n=n, tol=tol, metric=metric, particles=particles, seed=seed)
    ergodic = weak_ergodicity_fraction(spec, candidate, samples=samples, n=n, tol=tol, metric=metric, seed=seed)
    m_s = support_measure(spec, particles)
    wander = wandering_check(spec, m_s if m_s is not None else candidate, k_max=k_max, resolutions=resolutions)

    checks = [
        ("(i) naturality", natural.verdicts["natural"], natural.verdicts["worst_discrepancy"]),
        ("(ii) weak ergodicity", ergodic.verdicts["weakly_ergodic"], ergodic.verdicts["fraction"]),
        ("(iii) no wandering m_S", not wander.verdicts["wandering"], wander.verdicts["max_overlap_by_resolution"][-1]),
    ]
    table = pd.DataFrame([{"condition": name, "holds": bool(ok), "statistic": float(stat)}
                          for name, ok, stat in checks])
    all_hold = bool(table["holds"].all())
    failing = [name for name, ok, _ in checks if not ok]
    phrasing = ("consistent with m(Z) * m_S(Z) = 1" if all_hold
                else f"inconsistent with m(Z) * m_S(Z) = 1: {', '.join(failing)} fail")
    return DiagnosticsReport(
        probe="condition_checklist",
        spec=spec,
        settings={"n": n, "tol": tol, "samples": samples, "particles": particles, "k_max": k_max,
                  "resolutions": [list(as_resolution(spec.phase, r)) for r in resolutions],
                  "metric": Metric(metric).resolve(spec.phase), "seed": seed},
        verdicts={"all_conditions_hold": all_hold,
                  "naturality": natural.verdicts["natural"],
                  "weak_ergodicity": ergodic.verdicts["weakly_ergodic"],
                  "no_wandering": not wander.verdicts["wandering"]},
        table=table,
        phrasing=phrasing,
        caveats=["necessity cannot be certified numerically, only falsified"] + natural.caveats,
    )


# =============================================================================
# SELF-CONSISTENT DIAGNOSTICS
# =============================================================================
# Points are followed along the skew product (x, mu) -> (T_mu x, (T_mu)_* mu):
# the ensemble carries mu and sets E_mu, tagged points ride along without
# entering it. Distances use the dictionary (sup over test functions).

SKEW_PRODUCT_CAVEAT = ("E_mu is closed on a finite ensemble; the exact-measure dynamics can differ "
                       "once finite-ensemble fluctuations of the mean are amplified")


def _require_measure_dependent(spec, name):
    if not spec.measure_dependent:
        raise WrongEvaluator(f"{name} needs a measure-dependent family, got {spec.family.value}")


def _ensemble_cloud(mu, particles):
    return mu.as_cloud(particles) if isinstance(mu, ReferenceMeasure) else as_cloud(mu)


def _tagged_distances(spec, ensemble, tagged, n, target_profile):
    """Tagged time averages against the target at n and n/2, against each other and against the Cesaro average."""
    half = max(1, n // 2)
    acc = CesaroAccumulator(spec, ensemble, tagged=tagged).advance(half)
    at_half = acc.tagged_profiles().copy()
    at_n = acc.advance(n - half).tagged_profiles()

    table = pd.DataFrame(_point_columns(spec.phase, acc.tagged_x0s))
    table["d_target_n"] = np.max(np.abs(at_n - target_profile), axis=1)
    table["d_target_half"] = np.max(np.abs(at_half - target_profile), axis=1)
    table["d_cauchy"] = np.max(np.abs(at_n - at_half), axis=1)
    table["d_cesaro"] = np.max(np.abs(at_n - acc.cesaro_profile()), axis=1)
    return table, acc


def conditional_support_measure(candidate: MeasureLike, resolution) -> PointCloudMeasure:
    """
    m_S at finite resolution: the reference measure restricted to the cells
    the candidate charges, renormalized, as a cell-centre cloud.
    """
    cloud = as_cloud(candidate)
    resolution = as_resolution(cloud.phase, resolution)
    charged = bin_cloud(cloud, resolution).masses > 0.0
    masses = np.where(charged, uniform_grid(cloud.phase, resolution).masses, 0.0)
    return grid_to_cloud(GridMeasure.from_masses(cloud.phase, masses / masses.sum()))


def support_density_ratio(candidate: MeasureLike, resolutions: Sequence) -> list[float]:
    """Largest ratio of candidate cell mass to m_S cell mass, one value per resolution."""
    cloud = as_cloud(candidate)
    ratios = []
    for res in resolutions:
        res = as_resolution(cloud.phase, res)
        masses = bin_cloud(cloud, res).masses
        charged = masses > 0.0
        reference = uniform_grid(cloud.phase, res).masses
        m_s = reference[charged] / reference[charged].sum()
        ratios.append(float(np.max(masses[charged] / m_s)))
    return ratios


def selfconsistent_typical_fraction(spec: SystemSpec, target: MeasureLike, grid_of_x0: int, n: int, tol: float,
                                    ensemble: MeasureLike | None = None, reference: ReferenceMeasure | None = None,
                                    particles: int = DEFAULT_PARTICLES, seed: int = 0) -> DiagnosticsReport:
    """
    Share of reference-drawn points x whose time averages along T^k(x, mu)
    approach the target, with mu the given ensemble (default: m itself).
    """
    _require_measure_dependent(spec, "selfconsistent_typical_fraction")
    reference = reference or ReferenceMeasure.for_phase(spec.phase)
    cloud = _ensemble_cloud(ensemble if ensemble is not None else reference, particles)
    sample_seed = derive_seed(seed, "selfconsistent_typical_fraction", "x0")
    points = reference.sample(grid_of_x0, sample_seed)

    table, acc = _tagged_distances(spec, cloud, points, n, dictionary_profile(as_cloud(target)))
    table["typical"] = (table["d_target_n"] <= tol) & (table["d_target_half"] <= tol) & (table["d_cauchy"] <= tol)
    verdicts = _fraction_verdicts(table["typical"].to_numpy())
    verdicts["last_mean"] = acc.mean_trace[-1]

    return DiagnosticsReport(
        probe="selfconsistent_typical_fraction",
        spec=spec,
        settings={"n": n, "tol": tol, "grid_of_x0": grid_of_x0, "metric": Metric.DICTIONARY,
                  "reference": reference.label, "particles": cloud.n_atoms, "seed": seed,
                  "sample_seed": sample_seed},
        verdicts=verdicts,
        table=table,
        phrasing=(f"estimated m(Z_target) along the skew product = {verdicts['fraction']:.4f} "
                  f"(95% CI [{verdicts['wilson_low']:.4f}, {verdicts['wilson_high']:.4f}])"),
        caveats=[CAUCHY_CAVEAT, SKEW_PRODUCT_CAVEAT],
    )


def selfconsistent_weak_ergodicity(spec: SystemSpec, mu: MeasureLike, samples: int, n: int, tol: float,
                                   particles: int = DEFAULT_PARTICLES, seed: int = 0) -> DiagnosticsReport:
    """
    mu is weakly ergodic for the self-consistent system when time averages
    along T^k(x, mu) converge to mu for mu-almost every x. Points are drawn
    from mu, the ensemble is mu itself. ``cesaro_fraction`` reports the share
    that agrees with the Cesaro average of the ensemble instead.
    """
    _require_measure_dependent(spec, "selfconsistent_weak_ergodicity")
    cloud = _ensemble_cloud(mu, particles)
    source = mu if isinstance(mu, ReferenceMeasure) else ReferenceMeasure.custom(cloud)
    sample_seed = derive_seed(seed, "selfconsistent_weak_ergodicity", "x0")
    points = source.sample(samples, sample_seed)

    table, acc = _tagged_distances(spec, cloud, points, n, dictionary_profile(cloud))
    guard = table["d_cauchy"] <= tol if n >= 2 else True
    table["typical"] = (table["d_target_n"] <= tol) & (table["d_target_half"] <= tol) & guard
    verdicts = _fraction_verdicts(table["typical"].to_numpy())
    verdicts["weakly_ergodic"] = verdicts["fraction"] == 1.0
    verdicts["cesaro_fraction"] = float(np.mean(table["d_cesaro"] <= tol))
    verdicts["last_mean"] = acc.mean_trace[-1]

    wording = "consistent with" if verdicts["weakly_ergodic"] else "inconsistent with"
    return DiagnosticsReport(
        probe="selfconsistent_weak_ergodicity",
        spec=spec,
        settings={"n": n, "tol": tol, "samples": samples, "metric": Metric.DICTIONARY,
                  "particles": cloud.n_atoms, "seed": seed, "sample_seed": sample_seed},
        verdicts=verdicts,
        table=table,
        phrasing=(f"estimated mu(Z_mu) along the skew product = {verdicts['fraction']:.4f}; "
                  f"{wording} weak ergodicity of mu for the self-consistent system"),
        caveats=[CAUCHY_CAVEAT, SKEW_PRODUCT_CAVEAT],
    )


def selfconsistent_naturality(spec: SystemSpec, candidate: MeasureLike,
                              seed_measures: Sequence[tuple[str, PointCloudMeasure]] | None = None,
                              n: int = 10_000, tol: float = 0.05, resolution=None,
                              metric: Metric | str = Metric.AUTO, particles: int = DEFAULT_PARTICLES,
                              seed: int = 0) -> DiagnosticsReport:
    """
    Cesaro averages of the self-consistent pushforwards against the candidate.
    Default seeds cover M(m) (m and its smooth perturbations) and M(m_S), with
    m_S the reference measure restricted to the cells the candidate charges.
    """
    _require_measure_dependent(spec, "selfconsistent_naturality")
    if seed_measures is None:
        grid = resolution or default_resolution(spec.phase)
        seed_measures = default_seed_measures(spec, particles, seed)
        seed_measures.append(("m_S", conditional_support_measure(candidate, grid)))
    return _naturality_report("selfconsistent_naturality", spec, candidate, list(seed_measures), n, tol,
                              resolution, metric, particles, seed)


def selfconsistent_wandering(spec: SystemSpec, mu: MeasureLike, k_max: int, resolutions: Sequence,
                             threshold: float = WANDERING_THRESHOLD) -> DiagnosticsReport:
    """Overlaps of the images T_*^k mu, each step applying the map of the current image."""
    _require_measure_dependent(spec, "selfconsistent_wandering")
    return _wandering_report("selfconsistent_wandering", spec, mu, k_max, resolutions, threshold)


def selfconsistent_checklist(spec: SystemSpec, candidate: MeasureLike, n: int = 10_000, tol: float = 0.05,
                             samples: int = 100, particles: int = DEFAULT_PARTICLES, k_max: int = 6,
                             resolutions: Sequence = (32, 64, 128), metric: Metric | str = Metric.AUTO,
                             seed: int = 0) -> DiagnosticsReport:
    """
    Sufficient conditions for m(Z) * m_S(Z) = 1 in the self-consistent setting:
    (i) Cesaro convergence to the candidate from M(m) and M(m_S), (ii) weak
    ergodicity of the candidate along the skew product, (iii') the candidate
    lies in M(m_S). The weaker (iii), no wandering measure in M(m_S), is
    reported alongside but does not enter the verdict.
    """
    _require_measure_dependent(spec, "selfconsistent_checklist")
    grids = [as_resolution(spec.phase, r) for r in resolutions]
    natural = selfconsistent_naturality(spec, candidate, n=n, tol=tol, metric=metric,
                                        particles=particles, seed=seed)
    ergodic = selfconsistent_weak_ergodicity(spec, candidate, samples=samples, n=n, tol=tol,
                                             particles=particles, seed=seed)
    ratios = support_density_ratio(candidate, grids)
    m_s = conditional_support_measure(candidate, grids[-1])
    wander = selfconsistent_wandering(spec, m_s, k_max=k_max, resolutions=grids)

    in_m_s = ratios[-1] <= SUPPORT_DENSITY_BOUND
    checks = [
        ("(i) naturality", natural.verdicts["natural"], natural.verdicts["worst_discrepancy"], True),
        ("(ii) weak ergodicity", ergodic.verdicts["weakly_ergodic"], ergodic.verdicts["fraction"], True),
        ("(iii') candidate in M(m_S)", in_m_s, ratios[-1], True),
        ("(iii) no wandering m_S", not wander.verdicts["wandering"],
         wander.verdicts["max_overlap_by_resolution"][-1], False),
    ]
    table = pd.DataFrame([{"condition": name, "holds": bool(ok), "statistic": float(stat), "required": required}
                          for name, ok, stat, required in checks])
    failing = [name for name, ok, _, required in checks if required and not ok]
    all_hold = not failing
    phrasing = ("consistent with m(Z) * m_S(Z) = 1" if all_hold
                else f"inconsistent with m(Z) * m_S(Z) = 1: {', '.join(failing)} fail")
    return DiagnosticsReport(
        probe="selfconsistent_checklist",
        spec=spec,
        settings={"n": n, "tol": tol, "samples": samples, "particles": particles, "k_max": k_max,
                  "resolutions": [list(r) for r in grids], "metric": Metric(metric).resolve(spec.phase),
                  "seed": seed, "support_density_bound": SUPPORT_DENSITY_BOUND},
        verdicts={"all_conditions_hold": all_hold,
                  "naturality": natural.verdicts["natural"],
                  "weak_ergodicity": ergodic.verdicts["weakly_ergodic"],
                  "in_conditional_support": in_m_s,
                  "support_density_ratio_by_resolution": ratios,
                  "no_wandering": not wander.verdicts["wandering"]},
        table=table,
        phrasing=phrasing,
        caveats=["only sufficient conditions are known here; a failure is not evidence against "
                 "m(Z) * m_S(Z) = 1"] + natural.caveats + [SKEW_PRODUCT_CAVEAT],
    )
