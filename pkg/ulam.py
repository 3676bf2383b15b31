"""
Ulam Discretization
===================
Row-stochastic cell-to-cell transition matrix estimated by mapping
stratified samples from each cell, and Cesaro averaging of its powers.
Rows only see what the samples see: a jump on a measure-zero set (x = 0,
R = r) is invisible, so results approximate Cesaro limits of absolutely
continuous measures.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import sparse

from space_measures import (
    CSV_FLOAT_FORMAT,
    TWO_PI,
    GridMeasure,
    InvalidArgument,
    Phase,
    as_resolution,
    cell_indices,
    uniform_grid,
)
from system_zoo import SystemSpec, WrongEvaluator, map_points

# =============================================================================
# CONFIGURATION
# =============================================================================
DEFAULT_SAMPLES_PER_CELL = 64
DEFAULT_N_MAX = 4096
DEFAULT_TOL = 0.01
JITTER_FRACTION = 0.25      # max jitter, as a fraction of one stratum


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class UlamMatrix:
    spec: SystemSpec
    resolution: tuple[int, ...]
    matrix: sparse.csr_matrix
    samples_per_cell: int
    seed: int

    @property
    def n_cells(self) -> int:
        return int(self.matrix.shape[0])

    def row(self, i: int) -> list[tuple[int, float]]:
        start, stop = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return [(int(c), float(p)) for c, p in zip(self.matrix.indices[start:stop], self.matrix.data[start:stop])]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).reshape(-1)

    def power(self, k: int) -> sparse.csr_matrix:
        result = sparse.identity(self.n_cells, format="csr")
        for _ in range(k):
            result = result @ self.matrix
        return result.tocsr()


# =============================================================================
# CONSTRUCTION
# =============================================================================

def _stratified_offsets(samples, rng):
    """Positions in [0, 1): midpoints of `samples` equal strata with a small jitter."""
    jitter = (rng.random(samples) - 0.5) * 2.0 * JITTER_FRACTION
    return (np.arange(samples) + 0.5 + jitter) / samples


def _cell_samples(phase: Phase, resolution: tuple[int, ...], samples: int, seed: int) -> np.ndarray:
    """All sample points, cell-major: the s samples of cell 0, then cell 1, ..."""
    n_cells = int(np.prod(resolution))
    if phase is Phase.INTERVAL:
        n = resolution[0]
        out = np.empty((n_cells, samples))
        for cell in range(n_cells):
            rng = np.random.default_rng([seed, cell])
            out[cell] = (cell + _stratified_offsets(samples, rng)) / n
        return np.clip(out.reshape(-1), 0.0, 1.0)

    n_phi, n_r = resolution
    out = np.empty((n_cells, samples, 2))
    for cell in range(n_cells):
        i_phi, i_r = divmod(cell, n_r)
        rng = np.random.default_rng([seed, cell])
        # Latin-hypercube pairing: strata in phi and in area, matched by a permutation
        u_phi = _stratified_offsets(samples, rng)
        u_area = _stratified_offsets(samples, rng)[rng.permutation(samples)]
        lo, hi = i_r / n_r, (i_r + 1) / n_r
        out[cell, :, 0] = (i_phi + u_phi) * TWO_PI / n_phi
        out[cell, :, 1] = np.sqrt(lo * lo + u_area * (hi * hi - lo * lo))
    out = out.reshape(-1, 2)
    out[:, 1] = np.clip(out[:, 1], 0.0, 1.0)
    return out


def build_ulam(spec: SystemSpec, resolution, samples_per_cell: int = DEFAULT_SAMPLES_PER_CELL,
               seed: int = 0) -> UlamMatrix:
    if spec.measure_dependent:
        raise WrongEvaluator(f"{spec.family.value} is measure-dependent; Ulam needs a fixed map")
    if samples_per_cell < 1:
        raise InvalidArgument(f"samples_per_cell must be >= 1, got {samples_per_cell}")
    res = as_resolution(spec.phase, resolution)
    n_cells = int(np.prod(res))

    samples = _cell_samples(spec.phase, res, samples_per_cell, seed)
    targets = cell_indices(spec.phase, map_points(spec, samples), res)
    sources = np.repeat(np.arange(n_cells), samples_per_cell)
    probs = np.full(sources.shape[0], 1.0 / samples_per_cell)

    # duplicates are summed on conversion
    matrix = sparse.coo_matrix((probs, (sources, targets)), shape=(n_cells, n_cells)).tocsr()
    matrix.sum_duplicates()
    return UlamMatrix(spec=spec, resolution=res, matrix=matrix,
                      samples_per_cell=int(samples_per_cell), seed=int(seed))


# =============================================================================
# ITERATION
# =============================================================================

def _check_density(matrix, density):
    if density.phase is not matrix.spec.phase or density.resolution != matrix.resolution:
        raise InvalidArgument(f"density {density.phase.value}{density.resolution} does not match "
                              f"matrix {matrix.spec.phase.value}{matrix.resolution}")


def ulam_push(matrix: UlamMatrix, density: GridMeasure) -> GridMeasure:
    """p -> p P (left action of the row-stochastic matrix)."""
    _check_density(matrix, density)
    pushed = matrix.matrix.T @ density.masses.reshape(-1)
    return GridMeasure.from_masses(density.phase, pushed.reshape(matrix.resolution))


class UlamCesaroResult(NamedTuple):
    density: GridMeasure
    converged: bool
    iterations: int
    cauchy_trace: pd.DataFrame


def ulam_cesaro_fixed_density(matrix: UlamMatrix, n_max: int = DEFAULT_N_MAX, tol: float = DEFAULT_TOL,
                              start: GridMeasure | None = None) -> UlamCesaroResult:
    """
    Cesaro averages (1/n) sum_{k<n} p P^k from the reference density.

    Successive averages are compared at doubling checkpoints (n against n/2,
    n = 2, 4, 8, ...; n_max is always a final checkpoint). Stops at the first
    checkpoint whose L1 difference is below tol.
    """
    if n_max < 2:
        raise InvalidArgument(f"n_max must be >= 2, got {n_max}")
    start = start or uniform_grid(matrix.spec.phase, matrix.resolution)
    _check_density(matrix, start)

    transpose = matrix.matrix.T.tocsr()
    current = start.masses.reshape(-1).copy()
    running = np.zeros_like(current)
    previous_average = None
    checkpoint = 1
    trace = []

    for n in range(1, n_max + 1):
        running += current
        current = transpose @ current
        if n != checkpoint and n != n_max:
            continue
        average = running / n
        if previous_average is not None:
            diff = float(np.abs(average - previous_average).sum())
            trace.append({"n": n, "l1_change": diff})
            if diff < tol:
                return UlamCesaroResult(_as_grid(matrix, average), True, n, pd.DataFrame(trace))
        previous_average = average
        checkpoint *= 2

    warnings.warn(f"Ulam Cesaro average for {matrix.spec.family.value} not within tol={tol} "
                  f"after n_max={n_max}", ConvergenceWarning, stacklevel=2)
    return UlamCesaroResult(_as_grid(matrix, running / n_max), False, n_max,
                            pd.DataFrame(trace, columns=["n", "l1_change"]))


def _as_grid(matrix: UlamMatrix, flat: np.ndarray) -> GridMeasure:
    return GridMeasure.from_masses(matrix.spec.phase, flat.reshape(matrix.resolution))


# =============================================================================
# CSV
# =============================================================================

def write_matrix_csv(matrix: UlamMatrix, path) -> Path:
    path = Path(path)
    coo = matrix.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    pd.DataFrame({"row": coo.row[order], "col": coo.col[order], "prob": coo.data[order]}).to_csv(
        path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_matrix_csv(path, spec: SystemSpec, resolution, samples_per_cell: int, seed: int) -> UlamMatrix:
    res = as_resolution(spec.phase, resolution)
    n_cells = int(np.prod(res))
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != ["row", "col", "prob"]:
        raise InvalidArgument(f"unrecognised matrix header {list(df.columns)} in {path}")
    matrix = sparse.csr_matrix((df["prob"].to_numpy(), (df["row"].to_numpy(), df["col"].to_numpy())),
                               shape=(n_cells, n_cells))
    return UlamMatrix(spec=spec, resolution=res, matrix=matrix,
                      samples_per_cell=int(samples_per_cell), seed=int(seed))
