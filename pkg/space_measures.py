"""
Phase Spaces & Probability Measures
===================================
Geometry of the two phase spaces (unit interval, unit disc in polar
coordinates), the two measure representations used everywhere else
(weighted atom clouds and histograms), and the discrepancy layer that
stands in for weak-star convergence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.stats import wasserstein_distance

# =============================================================================
# CONFIGURATION
# =============================================================================
TWO_PI = 2.0 * np.pi
MASS_TOL = 1e-12            # total mass must be 1 within this
WEIGHT_FLOOR = 1e-15        # atoms lighter than this are dropped, rest renormalized
DICTIONARY_MODES = 8        # k = 1..8 Fourier terms in the default dictionaries
PROFILE_CHUNK = 65536       # atoms per block when integrating the dictionary
CSV_FLOAT_FORMAT = "%.17g"  # bit-faithful round trip


class InvalidArgument(ValueError):
    """Bad count, out-of-domain point, or mismatched phase/resolution."""


class Phase(str, Enum):
    INTERVAL = "Interval01"
    DISC = "Disc"


# =============================================================================
# MEASURE TYPES
# =============================================================================

@dataclass(frozen=True)
class PointCloudMeasure:
    """
    Probability measure as a finite set of weighted atoms.

    Interval atoms are stored as an (n,) array of x, disc atoms as an (n, 2)
    array of (phi, R). Weights always sum to 1.
    """
    phase: Phase
    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_points(cls, phase: Phase, points, weights=None) -> "PointCloudMeasure":
        phase = Phase(phase)
        pts = _validated_points(phase, points)
        if len(pts) == 0:
            raise InvalidArgument("a measure needs at least one atom")

        if weights is None:
            w = np.full(len(pts), 1.0 / len(pts))
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != len(pts):
                raise InvalidArgument(f"{w.shape[0]} weights for {len(pts)} atoms")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise InvalidArgument("weights must be finite and nonnegative")
            keep = w >= WEIGHT_FLOOR
            if not np.any(keep):
                raise InvalidArgument("all weights are below the drop threshold")
            if not np.all(keep):
                pts, w = pts[keep], w[keep]
            w = w / w.sum()

        pts.setflags(write=False)
        w.setflags(write=False)
        return cls(phase=phase, points=pts, weights=w)

    @property
    def n_atoms(self) -> int:
        return int(self.weights.shape[0])

    @property
    def atoms(self) -> list[tuple]:
        if self.phase is Phase.INTERVAL:
            return [(float(x), float(w)) for x, w in zip(self.points, self.weights)]
        return [((float(p), float(r)), float(w)) for (p, r), w in zip(self.points, self.weights)]


@dataclass(frozen=True)
class GridMeasure:
    """
    Histogram over a uniform partition.

    Interval: N cells [i/N, (i+1)/N). Disc: N_phi x N_R cells of the polar
    rectangle [0, 2pi) x [0, 1]; masses has shape (N_phi, N_R) and flat cell
    index i_phi * N_R + i_R.
    """
    phase: Phase
    resolution: tuple[int, ...]
    masses: np.ndarray

    @classmethod
    def from_masses(cls, phase: Phase, masses) -> "GridMeasure":
        phase = Phase(phase)
        m = np.array(masses, dtype=np.float64)
        expected_ndim = 1 if phase is Phase.INTERVAL else 2
        if m.ndim != expected_ndim:
            raise InvalidArgument(f"{phase.value} grid needs {expected_ndim}-d masses, got {m.ndim}-d")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InvalidArgument("cell masses must be finite and nonnegative")
        total = m.sum()
        if total <= 0:
            raise InvalidArgument("grid carries no mass")
        m = m / total
        m.setflags(write=False)
        return cls(phase=phase, resolution=tuple(int(s) for s in m.shape), masses=m)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))


class TestFunction(NamedTuple):
    label: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    bound: float


@dataclass(frozen=True)
class Dictionary:
    """Finite family of bounded test functions; surrogate for C^0(X)."""
    phase: Phase
    functions: tuple[TestFunction, ...]

    @property
    def labels(self) -> list[str]:
        return [f.label for f in self.functions]

    @property
    def bounds(self) -> np.ndarray:
        return np.array([f.bound for f in self.functions])

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Matrix of f_j(point_i), shape (n_points, n_functions). Scalar results broadcast."""
        pts = np.asarray(points, dtype=np.float64)
        shape = (len(pts),)
        return np.column_stack([np.broadcast_to(np.asarray(f.evaluator(pts), dtype=np.float64), shape)
                                for f in self.functions])


class DiscMean(NamedTuple):
    phi_vector: tuple[float, float]
    phi: float
    radius: float


# =============================================================================
# DICTIONARIES
# =============================================================================

def _interval_dictionary() -> Dictionary:
    funcs = [
        TestFunction("1", lambda x: np.ones_like(x), 1.0),
        TestFunction("x", lambda x: x, 1.0),
        TestFunction("x^2", lambda x: x * x, 1.0),
    ]
    for k in range(1, DICTIONARY_MODES + 1):
        funcs.append(TestFunction(f"cos(2pi*{k}x)", lambda x, k=k: np.cos(TWO_PI * k * x), 1.0))
        funcs.append(TestFunction(f"sin(2pi*{k}x)", lambda x, k=k: np.sin(TWO_PI * k * x), 1.0))
    return Dictionary(Phase.INTERVAL, tuple(funcs))


def _disc_dictionary() -> Dictionary:
    funcs = [
        TestFunction("1", lambda p: np.ones(len(p)), 1.0),
        TestFunction("R", lambda p: p[:, 1], 1.0),
        TestFunction("R^2", lambda p: p[:, 1] ** 2, 1.0),
    ]
    for k in range(1, DICTIONARY_MODES + 1):
        funcs.append(TestFunction(f"cos({k}phi)", lambda p, k=k: np.cos(k * p[:, 0]), 1.0))
        funcs.append(TestFunction(f"sin({k}phi)", lambda p, k=k: np.sin(k * p[:, 0]), 1.0))
    funcs.append(TestFunction("R*cos(phi)", lambda p: p[:, 1] * np.cos(p[:, 0]), 1.0))
    funcs.append(TestFunction("R*sin(phi)", lambda p: p[:, 1] * np.sin(p[:, 0]), 1.0))
    return Dictionary(Phase.DISC, tuple(funcs))


@lru_cache(maxsize=None)
def default_dictionary(phase: Phase) -> Dictionary:
    phase = Phase(phase)
    return _interval_dictionary() if phase is Phase.INTERVAL else _disc_dictionary()


# =============================================================================
# VALIDATION HELPERS
# =============================================================================

def _validated_points(phase: Phase, points) -> np.ndarray:
    pts = np.array(points, dtype=np.float64)
    if phase is Phase.INTERVAL:
        pts = pts.reshape(-1)
        if not np.all(np.isfinite(pts)) or np.any((pts < 0.0) | (pts > 1.0)):
            raise InvalidArgument("interval points must lie in [0, 1]")
        return pts

    pts = pts.reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise InvalidArgument("disc points must be finite")
    radius = pts[:, 1]
    if np.any((radius < 0.0) | (radius > 1.0)):
        raise InvalidArgument("disc radius must lie in [0, 1]")
    pts[:, 0] = reduce_angle(pts[:, 0])
    return pts


def reduce_angle(phi):
    """phi mod 2pi, landing in [0, 2pi) even when mod rounds up to 2pi."""
    out = np.mod(phi, TWO_PI)
    return np.where(out >= TWO_PI, 0.0, out)


def as_resolution(phase: Phase, resolution) -> tuple[int, ...]:
    if phase is Phase.INTERVAL:
        res = (int(np.asarray(resolution).reshape(-1)[0]),)
    elif np.ndim(resolution) == 0:
        res = (int(resolution), int(resolution))
    else:
        res = tuple(int(v) for v in resolution)
        if len(res) != 2:
            raise InvalidArgument(f"disc resolution needs (N_phi, N_R), got {resolution!r}")
    if min(res) < 1:
        raise InvalidArgument(f"resolution must be >= 1 per axis, got {res}")
    return res


def _require_same_phase(a, b) -> None:
    if a.phase is not b.phase:
        raise InvalidArgument(f"phase mismatch: {a.phase.value} vs {b.phase.value}")


def _require_same_grid(a: GridMeasure, b: GridMeasure) -> None:
    _require_same_phase(a, b)
    if a.resolution != b.resolution:
        raise InvalidArgument(f"resolution mismatch: {a.resolution} vs {b.resolution}")


# =============================================================================
# CONSTRUCTORS
# =============================================================================

def uniform_cloud(phase: Phase, n: int, seed: int) -> PointCloudMeasure:
    """n equal-weight atoms drawn from the reference measure (Lebesgue / normalized area)."""
    phase = Phase(phase)
    if n < 1:
        raise InvalidArgument(f"uniform_cloud needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if phase is Phase.INTERVAL:
        return PointCloudMeasure.from_points(phase, rng.random(n))
    phi = TWO_PI * rng.random(n)
    # area measure: P(R <= s) = s^2
    radius = np.sqrt(rng.random(n))
    return PointCloudMeasure.from_points(phase, np.column_stack([phi, radius]))


def reference_cloud(phase: Phase, n: int) -> PointCloudMeasure:
    """Deterministic, evenly spread cloud of the reference measure (midpoints / sunflower)."""
    phase = Phase(phase)
    if n < 1:
        raise InvalidArgument(f"reference_cloud needs n >= 1, got {n}")
    i = np.arange(n, dtype=np.float64)
    if phase is Phase.INTERVAL:
        return PointCloudMeasure.from_points(phase, (i + 0.5) / n)
    golden_angle = np.pi * (3.0 - np.sqrt(5.0))
    radius = np.sqrt((i + 0.5) / n)
    return PointCloudMeasure.from_points(phase, np.column_stack([i * golden_angle, radius]))


def dirac(phase: Phase, point) -> PointCloudMeasure:
    return PointCloudMeasure.from_points(phase, [point], [1.0])


def conditional_on_circle(r: float, n: int) -> PointCloudMeasure:
    """m_C for C = {R = r}: n equal atoms equispaced in phi, radius exactly r."""
    if not 0.0 < r < 1.0:
        raise InvalidArgument(f"circle radius must be in (0, 1), got {r}")
    if n < 1:
        raise InvalidArgument(f"conditional_on_circle needs n >= 1, got {n}")
    phi = TWO_PI * np.arange(n) / n
    return PointCloudMeasure.from_points(Phase.DISC, np.column_stack([phi, np.full(n, float(r))]))


def mixture(measures: Sequence[PointCloudMeasure], weights: Sequence[float]) -> PointCloudMeasure:
    if len(measures) == 0 or len(measures) != len(weights):
        raise InvalidArgument("mixture needs one weight per component")
    phase = measures[0].phase
    for mu in measures[1:]:
        _require_same_phase(measures[0], mu)
    w_in = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w_in)) or np.any(w_in < 0.0) or not w_in.sum() > 0.0:
        raise InvalidArgument(f"mixture weights must be finite, non-negative and not all zero, got {list(weights)}")
    total = float(w_in.sum())
    points = np.concatenate([mu.points for mu in measures])
    w = np.concatenate([mu.weights * (c / total) for mu, c in zip(measures, w_in)])
    return PointCloudMeasure.from_points(phase, points, w)


def uniform_grid(phase: Phase, resolution) -> GridMeasure:
    """Reference measure as a histogram: equal cells on [0,1], area-weighted annular cells on the disc."""
    phase = Phase(phase)
    res = as_resolution(phase, resolution)
    if phase is Phase.INTERVAL:
        return GridMeasure.from_masses(phase, np.full(res[0], 1.0 / res[0]))
    n_phi, n_r = res
    edges = np.arange(n_r + 1, dtype=np.float64) / n_r
    ring = np.diff(edges ** 2)
    return GridMeasure.from_masses(phase, np.tile(ring / n_phi, (n_phi, 1)))


# =============================================================================
# STATISTICS
# =============================================================================

def mean(mu: PointCloudMeasure):
    """Weighted mean; on the disc a circular mean of phi next to the mean radius."""
    if mu.phase is Phase.INTERVAL:
        return float(np.dot(mu.weights, mu.points))
    phi, radius = mu.points[:, 0], mu.points[:, 1]
    cx = float(np.dot(mu.weights, np.cos(phi)))
    sy = float(np.dot(mu.weights, np.sin(phi)))
    return DiscMean(phi_vector=(cx, sy),
                    phi=float(reduce_angle(np.arctan2(sy, cx))),
                    radius=float(np.dot(mu.weights, radius)))


def cell_indices(phase: Phase, points: np.ndarray, resolution) -> np.ndarray:
    """Flat cell index per point; cells are [left, right) with the last one closed."""
    phase = Phase(phase)
    res = as_resolution(phase, resolution)
    pts = np.asarray(points, dtype=np.float64)
    if phase is Phase.INTERVAL:
        n = res[0]
        return np.clip(np.floor(pts.reshape(-1) * n).astype(np.int64), 0, n - 1)
    n_phi, n_r = res
    pts = pts.reshape(-1, 2)
    i_phi = np.clip(np.floor(pts[:, 0] / TWO_PI * n_phi).astype(np.int64), 0, n_phi - 1)
    i_r = np.clip(np.floor(pts[:, 1] * n_r).astype(np.int64), 0, n_r - 1)
    return i_phi * n_r + i_r


def bin_cloud(mu: PointCloudMeasure, resolution) -> GridMeasure:
    res = as_resolution(mu.phase, resolution)
    idx = cell_indices(mu.phase, mu.points, res)
    masses = np.bincount(idx, weights=mu.weights, minlength=int(np.prod(res)))
    return GridMeasure.from_masses(mu.phase, masses.reshape(res))


def grid_to_cloud(grid: GridMeasure) -> PointCloudMeasure:
    """Cell-centre atoms carrying the cell masses (empty cells skipped)."""
    if grid.phase is Phase.INTERVAL:
        n = grid.resolution[0]
        centres = (np.arange(n) + 0.5) / n
        keep = grid.masses > 0
        return PointCloudMeasure.from_points(grid.phase, centres[keep], grid.masses[keep])
    n_phi, n_r = grid.resolution
    phi_c = (np.arange(n_phi) + 0.5) * TWO_PI / n_phi
    r_c = (np.arange(n_r) + 0.5) / n_r
    pp, rr = np.meshgrid(phi_c, r_c, indexing="ij")
    flat = grid.masses.reshape(-1)
    keep = flat > 0
    points = np.column_stack([pp.reshape(-1)[keep], rr.reshape(-1)[keep]])
    return PointCloudMeasure.from_points(grid.phase, points, flat[keep])


def dictionary_profile(mu: PointCloudMeasure, dictionary: Dictionary | None = None) -> np.ndarray:
    """Vector of integrals  int f_j dmu  over the dictionary."""
    dictionary = dictionary or default_dictionary(mu.phase)
    if dictionary.phase is not mu.phase:
        raise InvalidArgument(f"phase mismatch: {dictionary.phase.value} dictionary for {mu.phase.value} measure")
    profile = np.zeros(len(dictionary.functions))
    for start in range(0, mu.n_atoms, PROFILE_CHUNK):
        stop = start + PROFILE_CHUNK
        profile += mu.weights[start:stop] @ dictionary.evaluate(mu.points[start:stop])
    return profile


def dict_discrepancy(mu: PointCloudMeasure, nu: PointCloudMeasure,
                     dictionary: Dictionary | None = None) -> float:
    _require_same_phase(mu, nu)
    dictionary = dictionary or default_dictionary(mu.phase)
    return float(np.max(np.abs(dictionary_profile(mu, dictionary) - dictionary_profile(nu, dictionary))))


def w1_interval(mu: PointCloudMeasure, nu: PointCloudMeasure) -> float:
    """Exact 1-Wasserstein distance between atomic measures on [0, 1] (CDF-difference integral)."""
    _require_same_phase(mu, nu)
    if mu.phase is not Phase.INTERVAL:
        raise InvalidArgument("w1_interval is defined on Interval01 only")
    return float(wasserstein_distance(mu.points, nu.points, mu.weights, nu.weights))


def overlap(a: GridMeasure, b: GridMeasure) -> float:
    """Sum of cellwise minima: 1 for identical histograms, 0 for disjoint supports."""
    _require_same_grid(a, b)
    return float(np.minimum(a.masses, b.masses).sum())


def l1_distance(a: GridMeasure, b: GridMeasure) -> float:
    _require_same_grid(a, b)
    return float(np.abs(a.masses - b.masses).sum())


# =============================================================================
# SEEDS
# =============================================================================

def derive_seed(master: int, *labels) -> int:
    """Per-task seed: SHA-256 of the master seed and the task labels, cut to 63 bits."""
    text = "/".join([str(int(master))] + [str(label) for label in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# =============================================================================
# CSV
# =============================================================================

def cloud_to_frame(mu: PointCloudMeasure) -> pd.DataFrame:
    if mu.phase is Phase.INTERVAL:
        return pd.DataFrame({"x": mu.points, "weight": mu.weights})
    return pd.DataFrame({"phi": mu.points[:, 0], "r": mu.points[:, 1], "weight": mu.weights})


def write_cloud_csv(mu: PointCloudMeasure, path) -> Path:
    path = Path(path)
    cloud_to_frame(mu).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_cloud_csv(path) -> PointCloudMeasure:
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) == ["x", "weight"]:
        return PointCloudMeasure.from_points(Phase.INTERVAL, df["x"].to_numpy(), df["weight"].to_numpy())
    if list(df.columns) == ["phi", "r", "weight"]:
        return PointCloudMeasure.from_points(Phase.DISC, df[["phi", "r"]].to_numpy(), df["weight"].to_numpy())
    raise InvalidArgument(f"unrecognised cloud header {list(df.columns)} in {path}")


def grid_to_frame(grid: GridMeasure) -> pd.DataFrame:
    flat = grid.masses.reshape(-1)
    return pd.DataFrame({"cell_index": np.arange(flat.shape[0]), "mass": flat})


def write_grid_csv(grid: GridMeasure, path) -> Path:
    path = Path(path)
    grid_to_frame(grid).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_grid_csv(path, phase: Phase, resolution) -> GridMeasure:
    phase = Phase(phase)
    res = as_resolution(phase, resolution)
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != ["cell_index", "mass"]:
        raise InvalidArgument(f"unrecognised grid header {list(df.columns)} in {path}")
    if len(df) != int(np.prod(res)):
        raise InvalidArgument(f"{len(df)} cells in {path}, resolution {res} needs {int(np.prod(res))}")
    masses = np.zeros(int(np.prod(res)))
    masses[df["cell_index"].to_numpy()] = df["mass"].to_numpy()
    return GridMeasure.from_masses(phase, masses.reshape(res))
