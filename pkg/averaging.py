"""
Averaging Pipelines
===================
Time averages along orbits (Birkhoff sums, occupation measures) and space
averages of pushforwards (Cesaro histograms), plus the self-consistent
ensemble evolution where the map depends on the current ensemble mean.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
import pandas as pd

from space_measures import (
    CSV_FLOAT_FORMAT,
    Dictionary,
    GridMeasure,
    InvalidArgument,
    Phase,
    PointCloudMeasure,
    TestFunction,
    as_resolution,
    cell_indices,
    default_dictionary,
    dictionary_profile,
    grid_to_cloud,
    l1_distance,
)
from system_zoo import (
    SystemSpec,
    WrongEvaluator,
    map_points,
    map_points_selfconsistent,
)

# =============================================================================
# CONFIGURATION
# =============================================================================
CLOUD_MODE_MAX_STEPS = 100_000    # occupation kept as atoms up to here, then binned
CHUNK_ELEMENTS = 1 << 16          # orbit points evaluated per dictionary block
TELESCOPE_SLACK = 1e-12           # rounding allowance on the 2B/n bound
DEFAULT_RESOLUTION = {
    Phase.INTERVAL: (200,),
    Phase.DISC: (64, 64),
}


def default_resolution(phase: Phase) -> tuple[int, ...]:
    return DEFAULT_RESOLUTION[Phase(phase)]


def _require_autonomous(spec):
    if spec.measure_dependent:
        raise WrongEvaluator(f"{spec.family.value} is measure-dependent; use evolve_ensemble")


def _as_batch(spec: SystemSpec, x0s) -> np.ndarray:
    """Starting points as an (m,) or (m, 2) array, validated through a cloud."""
    cloud = PointCloudMeasure.from_points(spec.phase, x0s)
    return np.array(cloud.points)


def orbit_batch(spec: SystemSpec, x0s, n: int) -> np.ndarray:
    """Orbits of several starting points at once: shape (n, m) or (n, m, 2)."""
    _require_autonomous(spec)
    if n < 1:
        raise InvalidArgument(f"orbit length must be >= 1, got {n}")
    current = _as_batch(spec, x0s)
    out = np.empty((n,) + current.shape)
    for k in range(n):
        out[k] = current
        current = map_points(spec, current)
    return out


# =============================================================================
# ACCUMULATORS
# =============================================================================

class OccupationAccumulator:
    """
    Occupation measures mu_{n,x} = (1/n) sum_{k<n} delta_{T^k x} for a batch of
    starting points, advanced in chunks.

    Dictionary sums are exact in every mode. When ``keep_points`` is set the
    orbit is stored as atoms up to ``cloud_limit`` steps; past that the stored
    atoms are folded into per-point histograms at ``resolution`` and the run
    continues binned.
    """

    def __init__(self, spec: SystemSpec, x0s, dictionary: Dictionary | None = None,
                 resolution=None, keep_points: bool = True,
                 cloud_limit: int = CLOUD_MODE_MAX_STEPS):
        _require_autonomous(spec)
        self.spec = spec
        self.dictionary = dictionary or default_dictionary(spec.phase)
        self.resolution = as_resolution(spec.phase, resolution or default_resolution(spec.phase))
        self.keep_points = keep_points
        self.cloud_limit = cloud_limit

        self._current = _as_batch(spec, x0s)
        self.x0s = self._current.copy()
        self.steps_done = 0
        self.sums = np.zeros((self.n_points, len(self.dictionary.functions)))
        self._chunks: list[np.ndarray] = []
        self._hist: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return int(self._current.shape[0])

    @property
    def binned(self) -> bool:
        return self._hist is not None

    def advance(self, n_steps: int) -> "OccupationAccumulator":
        steps_per_chunk = max(1, CHUNK_ELEMENTS // self.n_points)
        remaining = int(n_steps)
        while remaining > 0:
            size = min(steps_per_chunk, remaining)
            block = np.empty((size,) + self._current.shape)
            for k in range(size):
                block[k] = self._current
                self._current = map_points(self.spec, self._current)
            self._absorb(block)
            remaining -= size
        return self

    def _absorb(self, block: np.ndarray) -> None:
        size = block.shape[0]
        flat = block.reshape((size * self.n_points,) + block.shape[2:])
        values = self.dictionary.evaluate(flat).reshape(size, self.n_points, -1)
        self.sums += values.sum(axis=0)
        self.steps_done += size

        if not self.keep_points:
            return
        if self._hist is None and self.steps_done > self.cloud_limit:
            self._hist = np.zeros((self.n_points, int(np.prod(self.resolution))))
            for stored in self._chunks:
                self._bin_block(stored)
            self._chunks = []
        if self._hist is None:
            self._chunks.append(block)
        else:
            self._bin_block(block)

    def _bin_block(self, block: np.ndarray) -> None:
        n_cells = self._hist.shape[1]
        flat = block.reshape((-1,) + block.shape[2:])
        cells = cell_indices(self.spec.phase, flat, self.resolution)
        owner = np.tile(np.arange(self.n_points), block.shape[0])
        self._hist += np.bincount(owner * n_cells + cells,
                                  minlength=self.n_points * n_cells).reshape(self.n_points, n_cells)

    def profiles(self) -> np.ndarray:
        """Dictionary integrals of every occupation measure, shape (m, n_functions)."""
        if self.steps_done == 0:
            raise InvalidArgument("no steps accumulated yet")
        return self.sums / self.steps_done

    def occupation(self, i: int) -> PointCloudMeasure | GridMeasure:
        if not self.keep_points:
            raise InvalidArgument("accumulator was built with keep_points=False")
        if self.steps_done == 0:
            raise InvalidArgument("no steps accumulated yet")
        if self._hist is not None:
            return GridMeasure.from_masses(self.spec.phase, self._hist[i].reshape(self.resolution))
        points = np.concatenate([chunk[:, i] for chunk in self._chunks])
        return PointCloudMeasure.from_points(self.spec.phase, points)

    def occupation_cloud(self, i: int) -> PointCloudMeasure:
        occ = self.occupation(i)
        return grid_to_cloud(occ) if isinstance(occ, GridMeasure) else occ


class CesaroAccumulator:
    """
    Running average (1/n) sum_{k<n} bin(T_*^k mu_0) of binned pushforwards.

    Works for both kinds of family: measure-dependent specs recompute
    E_mu = sum w_i x_i (fixed order) before every step and record it.

    ``tagged`` points ride along without entering E_mu: each one follows
    x_{k+1} = T_{mu_k} x_k, the skew product started at (x, mu_0), and
    accumulates dictionary time averages. The dictionary integrals of the
    ensemble itself are summed alongside so the two can be compared.
    """

    def __init__(self, spec: SystemSpec, mu0: PointCloudMeasure, resolution=None,
                 tagged=None, dictionary: Dictionary | None = None):
        if mu0.phase is not spec.phase:
            raise InvalidArgument(f"{spec.family.value} lives on {spec.phase.value}, got {mu0.phase.value} cloud")
        self.spec = spec
        self.resolution = as_resolution(spec.phase, resolution or default_resolution(spec.phase))
        self.current_cloud = mu0
        self.steps_done = 0
        self.mean_trace: list[float] = []
        self._mass_sum = np.zeros(int(np.prod(self.resolution)))

        self.dictionary = dictionary or default_dictionary(spec.phase)
        self.tagged = None if tagged is None else _as_batch(spec, tagged)
        self.tagged_x0s = None if tagged is None else self.tagged.copy()
        n_functions = len(self.dictionary.functions)
        self._tagged_sums = None if tagged is None else np.zeros((self.tagged.shape[0], n_functions))
        self._profile_sum = np.zeros(n_functions)

    def advance(self, n_steps: int) -> "CesaroAccumulator":
        for _ in range(int(n_steps)):
            cloud = self.current_cloud
            cells = cell_indices(cloud.phase, cloud.points, self.resolution)
            self._mass_sum += np.bincount(cells, weights=cloud.weights, minlength=self._mass_sum.shape[0])
            if self.tagged is not None:
                self._tagged_sums += self.dictionary.evaluate(self.tagged)
                self._profile_sum += cloud.weights @ self.dictionary.evaluate(cloud.points)
            if self.spec.measure_dependent:
                e_mu = float(np.dot(cloud.weights, cloud.points))
                self.mean_trace.append(e_mu)
                moved = map_points_selfconsistent(self.spec, cloud.points, e_mu)
                if self.tagged is not None:
                    self.tagged = map_points_selfconsistent(self.spec, self.tagged, e_mu)
            else:
                moved = map_points(self.spec, cloud.points)
                if self.tagged is not None:
                    self.tagged = map_points(self.spec, self.tagged)
            self.current_cloud = _with_points(cloud, moved)
            self.steps_done += 1
        return self

    @property
    def cesaro_grid(self) -> GridMeasure:
        if self.steps_done == 0:
            raise InvalidArgument("no steps accumulated yet")
        return GridMeasure.from_masses(self.spec.phase, self._mass_sum.reshape(self.resolution))

    def tagged_profiles(self) -> np.ndarray:
        """Dictionary time averages of every tagged point, shape (m, n_functions)."""
        if self._tagged_sums is None:
            raise InvalidArgument("accumulator was built without tagged points")
        if self.steps_done == 0:
            raise InvalidArgument("no steps accumulated yet")
        return self._tagged_sums / self.steps_done

    def cesaro_profile(self) -> np.ndarray:
        """Dictionary integrals of the (unbinned) Cesaro average; tracked only with tagged points."""
        if self._tagged_sums is None:
            raise InvalidArgument("accumulator was built without tagged points")
        if self.steps_done == 0:
            raise InvalidArgument("no steps accumulated yet")
        return self._profile_sum / self.steps_done


def _with_points(mu, points):
    """Same weights on moved atoms; maps keep atoms in-domain so no re-validation."""
    points = np.asarray(points, dtype=np.float64)
    points.setflags(write=False)
    return PointCloudMeasure(phase=mu.phase, points=points, weights=mu.weights)


# =============================================================================
# OPERATIONS
# =============================================================================

def birkhoff_average(spec: SystemSpec, x0, f: Callable[[np.ndarray], np.ndarray] | TestFunction,
                     n: int) -> float:
    """(1/n) sum_{k<n} f(T^k x0)."""
    _require_autonomous(spec)
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    test = f if isinstance(f, TestFunction) else TestFunction("f", f, 1.0)
    acc = OccupationAccumulator(spec, [x0], Dictionary(spec.phase, (test,)), keep_points=False)
    return float(acc.advance(n).profiles()[0, 0])


def selfconsistent_average(spec: SystemSpec, x0, mu0: PointCloudMeasure,
                           f: Callable[[np.ndarray], np.ndarray] | TestFunction, n: int) -> float:
    """
    (1/n) sum_{k<n} f(x_k) along the skew product started at (x0, mu0):
    x_{k+1} = T_{mu_k} x_k while mu_{k+1} = (T_{mu_k})_* mu_k. The point x0
    does not enter E_mu.
    """
    if not spec.measure_dependent:
        raise WrongEvaluator(f"{spec.family.value} is autonomous; use birkhoff_average")
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    test = f if isinstance(f, TestFunction) else TestFunction("f", f, 1.0)
    acc = CesaroAccumulator(spec, mu0, tagged=[x0], dictionary=Dictionary(spec.phase, (test,)))
    return float(acc.advance(n).tagged_profiles()[0, 0])


def occupation_measure(spec: SystemSpec, x0, n: int) -> PointCloudMeasure:
    """Equal-weight atoms on the first n orbit points."""
    _require_autonomous(spec)
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    points = orbit_batch(spec, [x0], n)[:, 0]
    return PointCloudMeasure.from_points(spec.phase, points)


def pushforward(spec: SystemSpec, mu: PointCloudMeasure) -> PointCloudMeasure:
    """One transfer-operator step; for measure-dependent specs E_mu comes from mu itself."""
    if mu.phase is not spec.phase:
        raise InvalidArgument(f"{spec.family.value} lives on {spec.phase.value}, got {mu.phase.value} measure")
    if spec.measure_dependent:
        e_mu = float(np.dot(mu.weights, mu.points))
        return _with_points(mu, map_points_selfconsistent(spec, mu.points, e_mu))
    return _with_points(mu, map_points(spec, mu.points))


def cesaro_pushforward(spec: SystemSpec, mu0: PointCloudMeasure, n: int, resolution=None) -> GridMeasure:
    _require_autonomous(spec)
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    return CesaroAccumulator(spec, mu0, resolution).advance(n).cesaro_grid


def cesaro_cauchy(spec: SystemSpec, mu0: PointCloudMeasure, n: int, resolution=None) -> float:
    """L1 distance between the Cesaro histograms at n and 2n steps."""
    _require_autonomous(spec)
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    acc = CesaroAccumulator(spec, mu0, resolution).advance(n)
    at_n = acc.cesaro_grid
    return l1_distance(at_n, acc.advance(n).cesaro_grid)


class EnsembleResult(NamedTuple):
    final_cloud: PointCloudMeasure
    cesaro_grid: GridMeasure
    mean_trace: np.ndarray


def evolve_ensemble(spec: SystemSpec, cloud0: PointCloudMeasure, n: int, resolution=None) -> EnsembleResult:
    """Self-consistent evolution: every step freezes E_mu of the current cloud and moves all atoms."""
    if not spec.measure_dependent:
        raise WrongEvaluator(f"{spec.family.value} is autonomous; use cesaro_pushforward")
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    acc = CesaroAccumulator(spec, cloud0, resolution).advance(n)
    return EnsembleResult(acc.current_cloud, acc.cesaro_grid, np.array(acc.mean_trace))


def telescoping_residual(spec: SystemSpec, x0s, n: int, dictionary: Dictionary | None = None) -> pd.DataFrame:
    """
    |int f d(mu_n) - int f d(T_* mu_n)| per starting point and dictionary
    function, against the bound 2B/n that mu_n - T_* mu_n = (delta_x - delta_{T^n x})/n gives.
    """
    _require_autonomous(spec)
    dictionary = dictionary or default_dictionary(spec.phase)
    orbits = orbit_batch(spec, x0s, n)
    rows = []
    for i in range(orbits.shape[1]):
        occupation = PointCloudMeasure.from_points(spec.phase, orbits[:, i])
        pushed = pushforward(spec, occupation)
        residual = np.abs(dictionary_profile(occupation, dictionary) - dictionary_profile(pushed, dictionary))
        for test, value in zip(dictionary.functions, residual):
            bound = 2.0 * test.bound / n
            rows.append({"x0_index": i, "function": test.label, "n": n,
                         "residual": float(value), "bound": bound, "within_bound": bool(value <= bound + TELESCOPE_SLACK)})
    return pd.DataFrame(rows)


def write_trace_csv(values: Sequence[float], path) -> Path:
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    pd.DataFrame({"step": np.arange(values.shape[0]), "value": values}).to_csv(
        path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_trace_csv(path) -> np.ndarray:
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != ["step", "value"]:
        raise InvalidArgument(f"unrecognised trace header {list(df.columns)} in {path}")
    return df["value"].to_numpy()
