import numpy as np
import pytest
from pydantic import ValidationError

from space_measures import InvalidArgument, Phase
from system_zoo import (
    DEFAULT_ALPHA,
    Family,
    SystemSpec,
    WrongEvaluator,
    catalog,
    eval_map,
    eval_selfconsistent,
    map_points,
    map_points_selfconsistent,
    orbit,
    support_measure,
)


def spec(family, **params):
    return SystemSpec(family=family, params=params)


# TC-01: autonomous maps at hand-checkable points
def test_tc01_eval_map_reference_points():
    assert eval_map(spec(Family.HALVING), 0.8) == 0.4
    assert eval_map(spec(Family.GIGI), 0.5) == 0.5
    assert eval_map(spec(Family.GIGI), 0.0) == 0.0
    assert eval_map(spec(Family.GIGI), 1.0) == 1.0
    assert eval_map(spec(Family.SQUARE_JUMP, c=0.25), 0.0) == 0.75
    assert eval_map(spec(Family.DISCONT_INTERVAL), 0.5) == 0.5
    assert eval_map(spec(Family.DISCONT_INTERVAL), 0.75) == 0.5

    phi, radius = eval_map(spec(Family.DISC_ROTATION, alpha=0.3, beta=0.3, gamma=0.5, r=0.5), (0.0, 0.5))
    assert phi == pytest.approx(2 * np.pi * 0.3)
    assert radius == 0.5

    phi, radius = eval_map(spec(Family.DISC_JUMP, r=0.5), (0.0, 0.5))
    assert phi == pytest.approx(2 * np.pi * DEFAULT_ALPHA)
    assert radius == 0.75


# TC-02: measure-dependent maps with a frozen mean
def test_tc02_eval_selfconsistent_reference_points():
    assert eval_selfconsistent(spec(Family.MULT_B), 0.3, 0.5) == pytest.approx(0.6)
    assert eval_selfconsistent(spec(Family.MULT_B), 0.7, 0.0) == 0.0
    assert eval_selfconsistent(spec(Family.MULT_A), 0.8, 0.5) == pytest.approx(0.4)
    assert eval_selfconsistent(spec(Family.TENT_ADDITIVE, epsilon=0.1), 0.25, 0.5) == pytest.approx(0.55)
    with pytest.raises(InvalidArgument):
        map_points_selfconsistent(spec(Family.MULT_A), np.array([0.2]), 1.5)


# TC-03: evaluator kind and domain are enforced
def test_tc03_wrong_evaluator_and_domain():
    with pytest.raises(WrongEvaluator):
        eval_map(spec(Family.MULT_A), 0.3)
    with pytest.raises(WrongEvaluator):
        eval_selfconsistent(spec(Family.HALVING), 0.3, 0.5)
    with pytest.raises(WrongEvaluator):
        orbit(spec(Family.MULT_B), 0.3, 10)
    with pytest.raises(InvalidArgument):
        eval_map(spec(Family.HALVING), 1.5)
    with pytest.raises(InvalidArgument):
        eval_map(spec(Family.DISC_ROTATION), (0.0, 1.2))


# TC-04: spec validation fills defaults and rejects bad parameters
def test_tc04_spec_validation():
    disc = spec(Family.DISC_ROTATION)
    assert disc.params == {"alpha": DEFAULT_ALPHA, "beta": 0.3, "gamma": 0.5, "r": 0.5}
    assert disc.phase is Phase.DISC
    assert not disc.measure_dependent
    assert spec(Family.TENT_ADDITIVE, epsilon=1.0)["epsilon"] == 1.0
    assert SystemSpec.model_validate(disc.model_dump(mode="json")) == disc

    with pytest.raises(ValidationError, match="alpha_"):
        SystemSpec(family="DiscRotation", params={"alpha_": 0.2})
    with pytest.raises(ValidationError):
        spec(Family.DISC_ROTATION, alpha=1.0)
    with pytest.raises(ValidationError):
        spec(Family.SQUARE_JUMP, c=1.0)
    with pytest.raises(ValidationError):
        spec(Family.DISC_ROTATION, r=0.0)
    with pytest.raises(ValidationError):
        SystemSpec(family="Tent")


# TC-05: orbits, and the affine radial recursion of the rotation
def test_tc05_orbits():
    assert list(orbit(spec(Family.HALVING), 1.0, 3)) == [1.0, 0.5, 0.25]

    rot = spec(Family.DISC_ROTATION)
    path = orbit(rot, (1.0, 0.9), 51)
    assert path.shape == (51, 2)
    for k in range(51):
        assert abs(path[k, 1] - rot["r"]) == pytest.approx(0.5 ** k * 0.4, abs=1e-15)


# TC-06: the SquareJump jump fires only at exact 0
def test_tc06_square_jump_from_zero():
    path = orbit(spec(Family.SQUARE_JUMP, c=0.5), 0.0, 200)
    assert list(path[:4]) == [0.0, 0.5, 0.25, 0.0625]
    assert np.all(path[1:] > 0.0)


# TC-07: every family maps the domain into itself
@pytest.mark.parametrize("family", list(Family))
def test_tc07_domain_closure(family):
    rng = np.random.default_rng(11)
    s = spec(family)
    n = 100_000
    if s.phase is Phase.DISC:
        points = np.column_stack([2 * np.pi * rng.random(n), np.sqrt(rng.random(n))])
        out = map_points(s, points)
        assert np.all((out[:, 0] >= 0) & (out[:, 0] < 2 * np.pi))
        assert np.all((out[:, 1] >= 0) & (out[:, 1] <= 1))
        return
    points = rng.random(n)
    if s.measure_dependent:
        for mean in (0.0, 1e-3, 0.5, 1.0):
            out = map_points_selfconsistent(s, points, mean)
            assert np.all((out >= 0) & (out <= 1))
    else:
        out = map_points(s, points)
        assert np.all((out >= 0) & (out <= 1))


# TC-08: GiGi fixed points
def test_tc08_gigi_fixed_points():
    out = map_points(spec(Family.GIGI), np.array([0.0, 0.5, 1.0]))
    assert list(out) == [0.0, 0.5, 1.0]


# TC-09: MultB frozen at 1/2 is the doubling map, bit for bit
def test_tc09_multb_at_half_is_doubling():
    x = np.random.default_rng(12).random(50_000)
    doubled = map_points(spec(Family.DOUBLING), x)
    assert np.array_equal(map_points_selfconsistent(spec(Family.MULT_B), x, 0.5), doubled)


# TC-10: DiscNoRotation leaves the angle alone off the circle
def test_tc10_no_rotation_keeps_phi_off_circle():
    s = spec(Family.DISC_NO_ROTATION)
    points = np.array([[1.0, 0.9], [2.0, 0.1], [3.0, 0.5]])
    out = map_points(s, points)
    assert out[0, 0] == 1.0 and out[1, 0] == 2.0
    assert out[2, 0] == pytest.approx(3.0 + 2 * np.pi * DEFAULT_ALPHA)
    assert out[2, 1] == 0.5


# TC-11: generic orbits never fall into the exceptional sets by rounding
def test_tc11_generic_orbits_stay_off_exceptional_sets():
    radii = orbit(spec(Family.DISC_NO_ROTATION), (0.3, 0.9), 300)[:, 1]
    assert np.all(radii > 0.5)
    radii = orbit(spec(Family.DISC_JUMP), (0.3, 0.1), 300)[:, 1]
    assert np.all(radii < 0.5)

    assert np.all(orbit(spec(Family.SQUARE_JUMP), 0.3, 300) > 0.0)
    gigi = orbit(spec(Family.GIGI), 0.3, 300)
    assert np.all((gigi > 0.0) & (gigi < 1.0))

    doubling = orbit(spec(Family.DOUBLING), 0.3, 2_000)
    assert np.count_nonzero(doubling) == 2_000
    assert 0.4 < doubling.mean() < 0.6


# TC-12: the endpoint rule keeps delta_1 fixed for the multiplicative maps
def test_tc12_endpoint_rule():
    assert eval_selfconsistent(spec(Family.MULT_A), 1.0, 1.0) == 1.0
    assert eval_selfconsistent(spec(Family.MULT_B), 1.0, 1.0) == 1.0
    assert eval_selfconsistent(spec(Family.MULT_A), 1.0, 0.5) == 0.5
    assert eval_selfconsistent(spec(Family.MULT_A), 0.5, 1.0) == 0.5


# TC-13: analytic support measures
def test_tc13_support_measures():
    circle = support_measure(spec(Family.DISC_JUMP, r=0.4), 100)
    assert circle.n_atoms == 100 and np.all(circle.points[:, 1] == 0.4)
    assert support_measure(spec(Family.HALVING)).atoms == [(0.0, 1.0)]
    assert support_measure(spec(Family.GIGI)).atoms == [(0.0, 0.5), (1.0, 0.5)]
    assert support_measure(spec(Family.DISCONT_INTERVAL)).atoms == [(0.5, 1.0)]
    assert support_measure(spec(Family.DOUBLING)) is None
    assert support_measure(spec(Family.MULT_B)) is None


# TC-14: the catalog lists every family once
def test_tc14_catalog():
    entries = catalog()
    assert [e.family for e in entries] == list(Family)
    dependent = {e.family for e in entries if e.measure_dependent}
    assert dependent == {Family.TENT_ADDITIVE, Family.MULT_A, Family.MULT_B}
    disc = next(e for e in entries if e.family is Family.DISC_ROTATION)
    assert [p.name for p in disc.params] == ["alpha", "beta", "gamma", "r"]


# TC-15: DiscJump agrees with DiscRotation away from the circle
def test_tc15_disc_jump_matches_rotation_off_circle():
    rng = np.random.default_rng(13)
    points = np.column_stack([2 * np.pi * rng.random(1000), np.sqrt(rng.random(1000))])
    points = points[points[:, 1] != 0.5]
    jump = map_points(spec(Family.DISC_JUMP), points)
    rotation = map_points(spec(Family.DISC_ROTATION), points)
    assert np.array_equal(jump[:, 0], rotation[:, 0])
    assert np.max(np.abs(jump[:, 1] - rotation[:, 1])) <= 1e-16


# TC-16: pointwise evaluation applies the formula exactly
def test_tc16_exact_pointwise_evaluation():
    doubling = spec(Family.DOUBLING)
    assert eval_map(doubling, 0.5) == 0.0
    assert eval_map(doubling, 0.75) == 0.5
    assert eval_map(doubling, 0.9) == 0.8
    assert eval_selfconsistent(spec(Family.MULT_B), 0.8, 0.5) == 1.6 - 1.0
    assert eval_selfconsistent(spec(Family.MULT_B), 0.8, 0.5) == eval_map(doubling, 0.8)
    assert eval_selfconsistent(spec(Family.TENT_ADDITIVE, epsilon=0.0), 0.75, 0.3) == 0.5

    assert list(orbit(doubling, 0.5, 3, refill=False)) == [0.5, 0.0, 0.0]
    assert list(orbit(doubling, 0.375, 4, refill=False)) == [0.375, 0.75, 0.5, 0.0]

    x = np.random.default_rng(16).random(200)
    exact = map_points(doubling, x, refill=False)
    assert np.array_equal(exact, [eval_map(doubling, v) for v in x])
    assert np.max(np.abs(map_points(doubling, x) - exact)) <= np.spacing(2.0)
