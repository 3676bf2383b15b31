"""
System Zoo
==========
Every example map behind one evaluation interface.

Autonomous families go through ``eval_map`` / ``map_points``; the
measure-dependent (self-consistent) families go through
``eval_selfconsistent`` / ``map_points_selfconsistent`` with the ensemble
mean frozen for the step. Calling the wrong one raises ``WrongEvaluator``.

Floating-point conventions
--------------------------
* Exceptional sets (x = 0 for SquareJump, {0, 1} for GiGi, R = r for the
  jump / no-rotation discs) are reached only by points placed on them. A
  generic-branch result that rounds onto the set is moved one representable
  step off it, toward the side it came from.
* Expanding branches (doubling, x / E with E < 1, the tent) lose one mantissa
  bit per wrap. The wrapped value gets a deterministic sub-ulp refill from a
  SplitMix64 hash of the pre-wrap value's bits, so orbits do not collapse to
  0 while the map stays a pure function. Only iteration uses it
  (``map_points``, ``orbit`` and the ensembles, all with ``refill=True`` by
  default). ``eval_map`` and ``eval_selfconsistent`` evaluate the formula
  exactly, so dyadic points keep their exact orbits (Doubling sends 0.5 to 0).
"""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from space_measures import (
    TWO_PI,
    InvalidArgument,
    Phase,
    PointCloudMeasure,
    conditional_on_circle,
    dirac,
    mixture,
    reduce_angle,
)

# =============================================================================
# CONFIGURATION
# =============================================================================
DEFAULT_ALPHA = float(np.sqrt(2.0) - 1.0)   # irrational rotation number
DEFAULT_BETA = 0.3
DEFAULT_GAMMA = 0.5
DEFAULT_RADIUS = 0.5
DEFAULT_JUMP = 0.5          # c in SquareJump
DEFAULT_EPSILON = 0.05      # coupling strength in TentAdditive
SUPPORT_ATOMS = 10_000      # atoms in the analytic circle measure m_S

_TINY = np.nextafter(0.0, 1.0)
_BELOW_ONE = np.nextafter(1.0, 0.0)


class WrongEvaluator(TypeError):
    """Autonomous evaluator on a measure-dependent family, or the reverse."""


class Family(str, Enum):
    HALVING = "Halving"
    DISC_ROTATION = "DiscRotation"
    DISC_NO_ROTATION = "DiscNoRotation"
    DISC_JUMP = "DiscJump"
    SQUARE_JUMP = "SquareJump"
    GIGI = "GiGi"
    DISCONT_INTERVAL = "DiscontInterval"
    DOUBLING = "Doubling"
    TENT_ADDITIVE = "TentAdditive"
    MULT_A = "MultA"
    MULT_B = "MultB"


class ParamSpec(NamedTuple):
    name: str
    low: float
    high: float
    low_open: bool
    high_open: bool
    default: float

    def contains(self, value: float) -> bool:
        above = value > self.low if self.low_open else value >= self.low
        below = value < self.high if self.high_open else value <= self.high
        return bool(np.isfinite(value) and above and below)

    @property
    def range_text(self) -> str:
        left = "(" if self.low_open else "["
        right = ")" if self.high_open else "]"
        return f"{left}{self.low:g}, {self.high:g}{right}"


class FamilyInfo(NamedTuple):
    family: Family
    phase: Phase
    params: tuple[ParamSpec, ...]
    measure_dependent: bool
    formula: str


_DISC_PARAMS = (
    ParamSpec("alpha", 0.0, 1.0, True, True, DEFAULT_ALPHA),
    ParamSpec("beta", 0.0, 1.0, True, True, DEFAULT_BETA),
    ParamSpec("gamma", 0.0, 1.0, True, True, DEFAULT_GAMMA),
    ParamSpec("r", 0.0, 1.0, True, True, DEFAULT_RADIUS),
)

_CATALOG: dict[Family, FamilyInfo] = {
    info.family: info for info in [
        FamilyInfo(Family.HALVING, Phase.INTERVAL, (), False,
                   "x -> x/2"),
        FamilyInfo(Family.DISC_ROTATION, Phase.DISC, _DISC_PARAMS, False,
                   "(phi, R) -> (phi + 2pi*alpha + beta(R - r) mod 2pi, gamma(R - r) + r)"),
        FamilyInfo(Family.DISC_NO_ROTATION, Phase.DISC, _DISC_PARAMS, False,
                   "(phi, R) -> (phi + 2pi*alpha if R = r else phi, gamma(R - r) + r)"),
        FamilyInfo(Family.DISC_JUMP, Phase.DISC, _DISC_PARAMS, False,
                   "as DiscRotation if R != r; (phi + 2pi*alpha mod 2pi, (1 + r)/2) if R = r"),
        FamilyInfo(Family.SQUARE_JUMP, Phase.INTERVAL,
                   (ParamSpec("c", 0.0, 1.0, False, True, DEFAULT_JUMP),), False,
                   "x -> 1 - c if x = 0 else x^2"),
        FamilyInfo(Family.GIGI, Phase.INTERVAL, (), False,
                   "x -> (1 - sin(pi*x - pi/2))/2 on (0, 1); x on {0, 1}"),
        FamilyInfo(Family.DISCONT_INTERVAL, Phase.INTERVAL, (), False,
                   "x -> x/2 + 1/4 if x <= 1/2 else 2x - 1"),
        FamilyInfo(Family.DOUBLING, Phase.INTERVAL, (), False,
                   "x -> 2x mod 1"),
        FamilyInfo(Family.TENT_ADDITIVE, Phase.INTERVAL,
                   (ParamSpec("epsilon", 0.0, 1.0, False, False, DEFAULT_EPSILON),), True,
                   "x -> 1 - 2|x - 1/2| + epsilon*E_mu mod 1"),
        FamilyInfo(Family.MULT_A, Phase.INTERVAL, (), True,
                   "x -> x*E_mu mod 1"),
        FamilyInfo(Family.MULT_B, Phase.INTERVAL, (), True,
                   "x -> x/E_mu mod 1 (1/0 mod 1 = 0)"),
    ]
}

_MEASURE_DEPENDENT = frozenset(f for f, info in _CATALOG.items() if info.measure_dependent)


def catalog() -> list[FamilyInfo]:
    """Family metadata in enum order."""
    return [_CATALOG[f] for f in Family]


# =============================================================================
# SYSTEM SPEC
# =============================================================================

class SystemSpec(BaseModel):
    """A family plus its parameters; missing parameters take their defaults."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Family
    params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="before")
    @classmethod
    def fill_and_check_params(cls, data):
        if not isinstance(data, dict) or "family" not in data:
            return data
        family = Family(data["family"])
        given = dict(data.get("params") or {})
        allowed = {p.name: p for p in _CATALOG[family].params}

        unknown = sorted(set(given) - set(allowed))
        if unknown:
            raise ValueError(f"unknown parameter(s) {unknown} for {family.value}; "
                             f"expected {sorted(allowed) or 'none'}")

        resolved = {}
        for name, spec in allowed.items():
            value = float(given.get(name, spec.default))
            if not spec.contains(value):
                raise ValueError(f"{family.value}.{name}={value} outside {spec.range_text}")
            resolved[name] = value
        return {**data, "family": family, "params": resolved}

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    @property
    def phase(self) -> Phase:
        return _CATALOG[self.family].phase

    @property
    def measure_dependent(self) -> bool:
        return self.family in _MEASURE_DEPENDENT


def is_measure_dependent(spec: SystemSpec) -> bool:
    return spec.measure_dependent


def phase_of(spec: SystemSpec) -> Phase:
    return spec.phase


def _require_autonomous(spec):
    if spec.measure_dependent:
        raise WrongEvaluator(f"{spec.family.value} is measure-dependent; use eval_selfconsistent / evolve_ensemble")


def _require_measure_dependent(spec):
    if not spec.measure_dependent:
        raise WrongEvaluator(f"{spec.family.value} is autonomous; use eval_map")


# =============================================================================
# FLOATING-POINT HELPERS
# =============================================================================
_SM_INCREMENT = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL_1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL_2 = np.uint64(0x94D049BB133111EB)


def _splitmix_unit(values: np.ndarray) -> np.ndarray:
    """Uniform-looking u in [0, 1) from the bit pattern of each float64."""
    z = np.ascontiguousarray(values, dtype=np.float64).view(np.uint64) + _SM_INCREMENT
    z = (z ^ (z >> np.uint64(30))) * _SM_MUL_1
    z = (z ^ (z >> np.uint64(27))) * _SM_MUL_2
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def _wrap_expanding(y: np.ndarray, refill: bool = True) -> np.ndarray:
    """
    y mod 1 for y >= 0. With ``refill`` the bits lost whenever a wrap happens
    are replaced by a deterministic sub-ulp offset; without it the result is
    the plain floating-point remainder.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        frac = y - np.floor(y)
        if refill:
            frac = np.where(y >= 1.0, np.mod(frac + _splitmix_unit(y) * np.spacing(y), 1.0), frac)
    out = np.minimum(frac, _BELOW_ONE)
    # x / E overflows for E near 0; same limit as 1/0 mod 1 = 0
    return np.where(np.isfinite(out), out, 0.0)


def _wrap_with_endpoint(y: np.ndarray, mean: float) -> np.ndarray | None:
    """
    Endpoint rule for the multiplicative families: a pre-wrap value of exactly
    1.0 at mean exactly 1.0 stays 1.0, so delta_1 is a fixed point. Returns the
    mask of such entries, or None when the rule cannot fire.
    """
    if mean != 1.0:
        return None
    return y == 1.0


def _keep_off_circle(radius_in, radius_out, r):
    landed = (radius_in != r) & (radius_out == r)
    if not np.any(landed):
        return radius_out
    return np.where(landed, np.nextafter(r, radius_in), radius_out)


# =============================================================================
# AUTONOMOUS MAPS (vectorized)
# =============================================================================

def _halving(spec, x, refill=True):
    return x / 2.0


def _square_jump(spec, x, refill=True):
    jump_to = np.mod(1.0 - spec["c"], 1.0)
    squared = np.maximum(x * x, _TINY)
    return np.where(x == 0.0, jump_to, squared)


def _gigi(spec, x, refill=True):
    interior = (1.0 - np.sin(np.pi * x - np.pi / 2.0)) / 2.0
    interior = np.clip(interior, _TINY, _BELOW_ONE)
    return np.where((x == 0.0) | (x == 1.0), x, interior)


def _discont_interval(spec, x, refill=True):
    return np.where(x <= 0.5, x / 2.0 + 0.25, 2.0 * x - 1.0)


def _doubling(spec, x, refill=True):
    return _wrap_expanding(2.0 * x, refill)


def _disc_rotation(spec, phi, radius):
    alpha, beta, gamma, r = spec["alpha"], spec["beta"], spec["gamma"], spec["r"]
    new_phi = reduce_angle(phi + TWO_PI * alpha + beta * (radius - r))
    return new_phi, gamma * (radius - r) + r


def _disc_no_rotation(spec, phi, radius):
    alpha, gamma, r = spec["alpha"], spec["gamma"], spec["r"]
    on_circle = radius == r
    new_phi = np.where(on_circle, reduce_angle(phi + TWO_PI * alpha), phi)
    new_radius = _keep_off_circle(radius, gamma * (radius - r) + r, r)
    return new_phi, np.where(on_circle, r, new_radius)


def _disc_jump(spec, phi, radius):
    alpha, r = spec["alpha"], spec["r"]
    on_circle = radius == r
    gen_phi, gen_radius = _disc_rotation(spec, phi, radius)
    gen_radius = _keep_off_circle(radius, gen_radius, r)
    jump_phi = reduce_angle(phi + TWO_PI * alpha)
    return (np.where(on_circle, jump_phi, gen_phi),
            np.where(on_circle, (1.0 + r) / 2.0, gen_radius))


_INTERVAL_MAPS = {
    Family.HALVING: _halving,
    Family.SQUARE_JUMP: _square_jump,
    Family.GIGI: _gigi,
    Family.DISCONT_INTERVAL: _discont_interval,
    Family.DOUBLING: _doubling,
}

_DISC_MAPS = {
    Family.DISC_ROTATION: _disc_rotation,
    Family.DISC_NO_ROTATION: _disc_no_rotation,
    Family.DISC_JUMP: _disc_jump,
}


def map_points(spec: SystemSpec, points: np.ndarray, refill: bool = True) -> np.ndarray:
    """
    Apply an autonomous map to an array of in-domain points ((n,) or (n, 2)).
    ``refill=False`` evaluates the formula exactly, with no sub-ulp refill on
    expanding branches.
    """
    _require_autonomous(spec)
    pts = np.asarray(points, dtype=np.float64)
    if spec.phase is Phase.INTERVAL:
        return _INTERVAL_MAPS[spec.family](spec, pts, refill)
    phi, radius = _DISC_MAPS[spec.family](spec, pts[..., 0], pts[..., 1])
    return np.stack([phi, radius], axis=-1)


# =============================================================================
# MEASURE-DEPENDENT MAPS (vectorized)
# =============================================================================

def _tent_additive(spec, x, mean, refill=True):
    w = 2.0 * x
    tent = np.where(w <= 1.0, w, 2.0 - w)
    if refill:
        # 2 - 2x drops the bit 2x carried past 1
        tent = np.where(w > 1.0, np.minimum(tent + _splitmix_unit(w) * np.spacing(w), 1.0), tent)
    y = tent + spec["epsilon"] * mean
    return np.minimum(y - np.floor(y), _BELOW_ONE)


def _mult_a(spec, x, mean, refill=True):
    y = x * mean
    out = np.mod(y, 1.0)
    keep = _wrap_with_endpoint(y, mean)
    return out if keep is None else np.where(keep, 1.0, out)


def _mult_b(spec, x, mean, refill=True):
    if mean == 0.0:
        return np.zeros_like(x)
    keep = _wrap_with_endpoint(x / mean, mean)
    out = _wrap_expanding(x / mean, refill)
    return out if keep is None else np.where(keep, 1.0, out)


_SELFCONSISTENT_MAPS = {
    Family.TENT_ADDITIVE: _tent_additive,
    Family.MULT_A: _mult_a,
    Family.MULT_B: _mult_b,
}


def map_points_selfconsistent(spec: SystemSpec, points: np.ndarray, current_mean: float,
                              refill: bool = True) -> np.ndarray:
    _require_measure_dependent(spec)
    if not 0.0 <= current_mean <= 1.0:
        raise InvalidArgument(f"current_mean must lie in [0, 1], got {current_mean}")
    return _SELFCONSISTENT_MAPS[spec.family](spec, np.asarray(points, dtype=np.float64),
                                             float(current_mean), refill)


# =============================================================================
# POINTWISE API
# =============================================================================

def _point_array(spec: SystemSpec, point) -> tuple[np.ndarray, bool]:
    """Validated (n,) / (n, 2) array plus whether the caller passed a single point."""
    pts = np.asarray(point, dtype=np.float64)
    if spec.phase is Phase.INTERVAL:
        single = pts.ndim == 0
        pts = pts.reshape(-1)
        if not np.all(np.isfinite(pts)) or np.any((pts < 0.0) | (pts > 1.0)):
            raise InvalidArgument(f"{spec.family.value} point outside [0, 1]: {point!r}")
        return pts, single

    single = pts.ndim == 1
    pts = pts.reshape(-1, 2).copy()
    if not np.all(np.isfinite(pts)) or np.any((pts[:, 1] < 0.0) | (pts[:, 1] > 1.0)):
        raise InvalidArgument(f"{spec.family.value} point outside the unit disc: {point!r}")
    pts[:, 0] = reduce_angle(pts[:, 0])
    return pts, single


def _unwrap(spec: SystemSpec, out: np.ndarray, single: bool):
    if not single:
        return out
    if spec.phase is Phase.INTERVAL:
        return float(out[0])
    return float(out[0, 0]), float(out[0, 1])


def eval_map(spec: SystemSpec, point):
    """Exact T(point) for an autonomous family; a float / (phi, R) tuple in gives the same back."""
    _require_autonomous(spec)
    pts, single = _point_array(spec, point)
    return _unwrap(spec, map_points(spec, pts, refill=False), single)


def eval_selfconsistent(spec: SystemSpec, point, current_mean: float):
    """Exact T_mu(point) with E_mu frozen at current_mean."""
    _require_measure_dependent(spec)
    pts, single = _point_array(spec, point)
    return _unwrap(spec, map_points_selfconsistent(spec, pts, current_mean, refill=False), single)


def orbit(spec: SystemSpec, x0, n: int, refill: bool = True) -> np.ndarray:
    """
    [x0, T x0, ..., T^(n-1) x0] as an (n,) or (n, 2) array. Long orbits of
    expanding maps need the refill; ``refill=False`` iterates the exact formula.
    """
    _require_autonomous(spec)
    if n < 1:
        raise InvalidArgument(f"orbit length must be >= 1, got {n}")
    pts, _ = _point_array(spec, x0)
    current = pts[:1]
    out = np.empty((n,) + current.shape[1:])
    for k in range(n):
        out[k] = current[0]
        current = map_points(spec, current, refill)
    return out


def support_measure(spec: SystemSpec, n: int = SUPPORT_ATOMS) -> PointCloudMeasure | None:
    """
    Analytic conditional measure m_S on the attractor support, or None when
    the support is the whole space (Doubling) or the family is measure-dependent.
    """
    family = spec.family
    if family in _DISC_MAPS:
        return conditional_on_circle(spec["r"], n)
    if family in (Family.HALVING, Family.SQUARE_JUMP):
        return dirac(Phase.INTERVAL, 0.0)
    if family is Family.GIGI:
        return mixture([dirac(Phase.INTERVAL, 0.0), dirac(Phase.INTERVAL, 1.0)], [0.5, 0.5])
    if family is Family.DISCONT_INTERVAL:
        return dirac(Phase.INTERVAL, 0.5)
    return None
