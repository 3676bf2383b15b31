import json

import numpy as np
import pytest

from diagnostics import (
    Metric,
    ReferenceMeasure,
    condition_checklist,
    default_seed_measures,
    invariance_residual,
    naturality_check,
    selfconsistent_checklist,
    selfconsistent_naturality,
    selfconsistent_typical_fraction,
    selfconsistent_wandering,
    selfconsistent_weak_ergodicity,
    support_density_ratio,
    trace_match,
    transfer_continuity_probe,
    typical_set_fraction,
    wandering_check,
    weak_ergodicity_fraction,
    wilson_interval,
)
from space_measures import (
    InvalidArgument,
    Phase,
    conditional_on_circle,
    dirac,
    mixture,
    reference_cloud,
    uniform_cloud,
)
from system_zoo import Family, SystemSpec, WrongEvaluator

INTERVAL, DISC = Phase.INTERVAL, Phase.DISC


def spec(family, **params):
    return SystemSpec(family=family, params=params)


CIRCLE = conditional_on_circle(0.5, 2_000)


# TC-01: every Halving orbit is typical for delta_0
def test_tc01_halving_typical_for_delta0():
    report = typical_set_fraction(spec(Family.HALVING), dirac(INTERVAL, 0.0), 20, 10_000, 0.01)
    assert report.verdicts["fraction"] == 1.0
    assert report.verdicts["successes"] == report.verdicts["total"] == 20
    assert report.verdicts["wilson_low"] < 1.0
    assert report.verdicts["wilson_high"] == pytest.approx(1.0)
    assert report.settings["metric"] is Metric.W1
    assert list(report.table.columns) == ["x0", "d_target_n", "d_target_half", "d_cauchy", "typical"]


# TC-02: irrational rotation: area-typical points are typical for the circle measure
def test_tc02_rotation_typical_for_circle():
    report = typical_set_fraction(spec(Family.DISC_ROTATION), ReferenceMeasure.circle(0.5), 10, 20_000, 0.05)
    assert report.verdicts["fraction"] >= 0.9
    assert {"phi0", "r0"} <= set(report.table.columns)


# TC-03: without rotation off-circle points are not typical for the circle measure
def test_tc03_no_rotation_not_typical():
    report = typical_set_fraction(spec(Family.DISC_NO_ROTATION), CIRCLE, 20, 5_000, 0.05)
    assert report.verdicts["fraction"] <= 0.05


# TC-04: the GiGi mixture is not weakly ergodic
def test_tc04_gigi_mixture_not_weakly_ergodic():
    halves = mixture([dirac(INTERVAL, 0.0), dirac(INTERVAL, 1.0)], [0.5, 0.5])
    report = weak_ergodicity_fraction(spec(Family.GIGI), halves, 50, 1_000, 0.05)
    assert report.verdicts["fraction"] == 0.0
    assert report.verdicts["weakly_ergodic"] is False
    assert report.phrasing.endswith("inconsistent with weak ergodicity of mu")


# TC-05: delta_0 is weakly ergodic for SquareJump although it is not invariant
def test_tc05_square_jump_delta0_weakly_ergodic():
    report = weak_ergodicity_fraction(spec(Family.SQUARE_JUMP, c=0.5), dirac(INTERVAL, 0.0), 10, 1_000, 0.05)
    assert report.verdicts["fraction"] == 1.0
    assert report.verdicts["weakly_ergodic"] is True


# TC-06: the circle measure is weakly ergodic for the irrational rotation
def test_tc06_rotation_circle_weakly_ergodic():
    report = weak_ergodicity_fraction(spec(Family.DISC_ROTATION), ReferenceMeasure.circle(0.5), 10, 20_000, 0.05)
    assert report.verdicts["fraction"] >= 0.9


# TC-07: one step against a tolerance as large as the space always succeeds
def test_tc07_degenerate_bound():
    mu = uniform_cloud(INTERVAL, 100, seed=1)
    report = weak_ergodicity_fraction(spec(Family.DOUBLING), mu, 25, 1, 1.0)
    assert report.verdicts["fraction"] == 1.0


# TC-08: enlarging tol never lowers the typical fraction
def test_tc08_fraction_monotone_in_tol():
    target = reference_cloud(INTERVAL, 1_000)
    fractions = [typical_set_fraction(spec(Family.DOUBLING), target, 30, 500, tol, seed=3).verdicts["fraction"]
                 for tol in (0.005, 0.02, 0.1)]
    assert fractions == sorted(fractions)


# TC-09: Halving is not natural for delta_1/2
def test_tc09_halving_naturality_fails():
    report = naturality_check(spec(Family.HALVING), dirac(INTERVAL, 0.5), n=200, particles=1_000)
    assert report.verdicts["natural"] is False
    assert report.verdicts["worst_discrepancy"] == pytest.approx(0.5, abs=0.01)
    assert report.verdicts["seed_count"] == 5


# TC-10: SquareJump: delta_0 is natural
def test_tc10_square_jump_delta0_natural():
    report = naturality_check(spec(Family.SQUARE_JUMP, c=0.5), dirac(INTERVAL, 0.0), n=2_000,
                              resolution=100, particles=2_000)
    assert report.verdicts["natural"] is True
    assert list(report.table["seed_measure"]) == ["uniform", "perturbation_0", "perturbation_1",
                                                  "perturbation_2", "m_S"]


# TC-11: the circle measure is natural for a rational rotation too
def test_tc11_rational_rotation_circle_natural():
    report = naturality_check(spec(Family.DISC_ROTATION, alpha=1.0 / 3.0), conditional_on_circle(0.5, 10_000),
                              n=500, particles=10_000)
    assert report.verdicts["natural"] is True
    assert report.verdicts["seed_count"] >= 4


# TC-12: invariance residuals
def test_tc12_invariance_residuals():
    assert invariance_residual(spec(Family.HALVING), dirac(INTERVAL, 0.0)) == 0.0
    assert invariance_residual(spec(Family.SQUARE_JUMP, c=0.5), dirac(INTERVAL, 0.0)) == pytest.approx(0.5, abs=1e-12)
    assert invariance_residual(spec(Family.DISC_ROTATION), conditional_on_circle(0.5, 10_000)) < 0.01
    with pytest.raises(InvalidArgument):
        invariance_residual(spec(Family.DISC_ROTATION), CIRCLE, Metric.W1)


# TC-13: DiscJump pushes the circle measure through disjoint annuli
def test_tc13_disc_jump_circle_wandering():
    report = wandering_check(spec(Family.DISC_JUMP), CIRCLE, 6, [32, 64, 128])
    assert report.verdicts["wandering"] is True
    assert report.verdicts["max_overlap_by_resolution"][-1] < 0.05
    assert report.verdicts["non_increasing"] is True

    table = report.table
    finest = table[table["resolution"] == "128x128"].pivot(index="j", columns="k", values="overlap").to_numpy()
    assert np.allclose(finest, finest.T)
    assert np.allclose(np.diag(finest), 1.0)


# TC-14: invariant and nested measures are not wandering
def test_tc14_not_wandering():
    assert wandering_check(spec(Family.DISC_ROTATION), CIRCLE, 4, [16, 32]).verdicts["wandering"] is False
    assert wandering_check(spec(Family.HALVING), reference_cloud(INTERVAL, 1_000), 4, [32, 128]).verdicts["wandering"] is False


# TC-15: points off the circle are traced by circle points under the rotation
def test_tc15_trace_match_rotation():
    candidates = conditional_on_circle(0.5, 32).points
    report = trace_match(spec(Family.DISC_ROTATION), (1.0, 0.8), candidates, 20_000, 0.05)
    assert report.verdicts["match"] is not None
    assert report.verdicts["best_discrepancy"] <= 0.05


# TC-16: no circle point traces an off-circle point without rotation
def test_tc16_trace_match_no_rotation():
    candidates = conditional_on_circle(0.5, 32).points
    report = trace_match(spec(Family.DISC_NO_ROTATION), (1.0, 0.8), candidates, 5_000, 0.05)
    assert report.verdicts["match"] is None
    assert report.verdicts["match_index"] is None
    assert report.phrasing == "no candidate traces x within tol"


# TC-17: a point of S traces itself
def test_tc17_trace_match_self():
    report = trace_match(spec(Family.HALVING), 0.0, [0.0, 0.25], 100, 0.01)
    assert report.verdicts["match"] == 0.0
    assert report.verdicts["best_discrepancy"] == 0.0


# TC-18: the transfer operator jumps at the invariant measure of the discontinuous map
def test_tc18_transfer_continuity():
    report = transfer_continuity_probe(spec(Family.DISCONT_INTERVAL), 0.5)
    assert report.verdicts["continuous"] is False
    assert report.verdicts["jump_at_smallest_offset"] == pytest.approx(0.5, abs=1e-5)
    assert report.verdicts["invariance_residual"] == 0.0
    assert transfer_continuity_probe(spec(Family.HALVING), 0.3).verdicts["continuous"] is True


# TC-19: the checklist phrases its outcome from the three conditions
def test_tc19_condition_checklist():
    square = condition_checklist(spec(Family.SQUARE_JUMP, c=0.5), dirac(INTERVAL, 0.0), n=500, samples=10,
                                 particles=2_000, k_max=3, resolutions=(32, 64))
    assert square.verdicts["naturality"] is True
    assert square.verdicts["weak_ergodicity"] is True
    assert square.verdicts["no_wandering"] is False
    assert square.phrasing.startswith("inconsistent with m(Z) * m_S(Z) = 1")

    rotation = condition_checklist(spec(Family.DISC_ROTATION), CIRCLE, n=500, samples=10,
                                   particles=2_000, k_max=3, resolutions=(16, 32))
    assert rotation.verdicts["all_conditions_hold"] is True
    assert rotation.phrasing == "consistent with m(Z) * m_S(Z) = 1"
    assert list(rotation.table["condition"]) == ["(i) naturality", "(ii) weak ergodicity", "(iii) no wandering m_S"]


# TC-20: reports are written as JSON, text and CSV, and reruns are identical
def test_tc20_report_files_and_determinism(tmp_path):
    def run():
        return typical_set_fraction(spec(Family.DOUBLING), reference_cloud(INTERVAL, 500), 10, 300, 0.1, seed=42)

    paths = run().write(tmp_path / "a", config={"kind": "typical_set_fraction"})
    run().write(tmp_path / "b", config={"kind": "typical_set_fraction"})
    document = json.loads(paths["report.json"].read_text())
    assert set(document) == {"probe", "system", "settings", "verdicts", "phrasing", "caveats", "config"}
    assert document["system"] == {"family": "Doubling", "params": {}}
    assert document["settings"]["metric"] == "w1"
    for name in ("report.json", "report.txt", "breakdown.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "report.txt").read_text().startswith("probe: typical_set_fraction\n")


# TC-21: Wilson interval edge cases
def test_tc21_wilson_interval():
    low, high = wilson_interval(0, 10)
    assert low == pytest.approx(0.0, abs=1e-12) and 0.0 < high < 0.35
    low, high = wilson_interval(10, 10)
    assert high == pytest.approx(1.0) and 0.65 < low < 1.0
    low, high = wilson_interval(50, 100)
    assert 0.5 - low == pytest.approx(high - 0.5)
    with pytest.raises(InvalidArgument):
        wilson_interval(3, 0)
    with pytest.raises(InvalidArgument):
        wilson_interval(5, 4)


# TC-22: metric resolution and reference measures
def test_tc22_metrics_and_references():
    assert Metric.AUTO.resolve(INTERVAL) is Metric.W1
    assert Metric.AUTO.resolve(DISC) is Metric.DICTIONARY
    with pytest.raises(InvalidArgument):
        Metric.W1.resolve(DISC)

    circle = ReferenceMeasure.circle(0.3)
    points = circle.sample(50, seed=5)
    assert np.all(points[:, 1] == 0.3)
    assert np.array_equal(points, circle.sample(50, seed=5))
    assert ReferenceMeasure.for_phase(DISC).label == "AreaDisc"
    custom = ReferenceMeasure.custom(dirac(INTERVAL, 0.25))
    assert custom.phase is INTERVAL and np.all(custom.sample(5, seed=1) == 0.25)


# TC-23: probes refuse measure-dependent systems
def test_tc23_probes_need_autonomous_systems():
    with pytest.raises(WrongEvaluator):
        typical_set_fraction(spec(Family.MULT_A), dirac(INTERVAL, 0.0), 5, 10, 0.1)
    with pytest.raises(WrongEvaluator):
        wandering_check(spec(Family.TENT_ADDITIVE), dirac(INTERVAL, 0.0), 2, [8])


# TC-24: default seeds cover m, three smooth perturbations and m_S
def test_tc24_default_seed_measures():
    seeds = default_seed_measures(spec(Family.DISC_JUMP), 500, seed=2)
    assert [label for label, _ in seeds] == ["uniform", "perturbation_0", "perturbation_1", "perturbation_2", "m_S"]
    assert all(mu.weights.sum() == pytest.approx(1.0) for _, mu in seeds)
    assert len(default_seed_measures(spec(Family.DOUBLING), 500)) == 4


# TC-25: an invariant candidate fed in as its own seed scores no more than its Cauchy drift
@pytest.mark.parametrize("family, mu", [
    (Family.HALVING, dirac(INTERVAL, 0.0)),
    (Family.GIGI, mixture([dirac(INTERVAL, 0.0), dirac(INTERVAL, 1.0)], [0.5, 0.5])),
    (Family.DISCONT_INTERVAL, dirac(INTERVAL, 0.5)),
])
def test_tc25_invariant_candidate_within_cauchy_drift(family, mu):
    s = spec(family)
    assert invariance_residual(s, mu) == 0.0
    report = naturality_check(s, mu, [("candidate", mu)], n=50, resolution=20)
    row = report.table.iloc[0]
    assert row["discrepancy"] <= row["cauchy_l1"] + 1e-12
    assert report.verdicts["natural"] is True


# TC-26: delta_0 is weakly ergodic along the skew product for both multiplicative maps
@pytest.mark.parametrize("family", [Family.MULT_A, Family.MULT_B])
def test_tc26_selfconsistent_weak_ergodicity_of_delta0(family):
    report = selfconsistent_weak_ergodicity(spec(family), dirac(INTERVAL, 0.0), samples=5, n=100, tol=0.01)
    assert report.verdicts["weakly_ergodic"] is True
    assert report.verdicts["cesaro_fraction"] == 1.0
    assert report.verdicts["last_mean"] == 0.0
    assert list(report.table.columns) == ["x0", "d_target_n", "d_target_half", "d_cauchy", "d_cesaro", "typical"]


# TC-27: MultA carries m-typical points to delta_0, so Lebesgue is not weakly ergodic
def test_tc27_multa_skew_product_typicality():
    s = spec(Family.MULT_A)
    typical = selfconsistent_typical_fraction(s, dirac(INTERVAL, 0.0), 20, 1_000, 0.05, particles=2_000)
    assert typical.verdicts["fraction"] == 1.0
    assert typical.verdicts["last_mean"] < 1e-3

    lebesgue = selfconsistent_weak_ergodicity(s, ReferenceMeasure.lebesgue(), samples=20, n=1_000, tol=0.05,
                                              particles=2_000)
    assert lebesgue.verdicts["fraction"] == 0.0
    assert lebesgue.verdicts["weakly_ergodic"] is False
    assert lebesgue.verdicts["cesaro_fraction"] == 1.0


# TC-28: self-consistent wandering follows the map of each image
def test_tc28_selfconsistent_wandering():
    s = spec(Family.MULT_A)
    squares = selfconsistent_wandering(s, dirac(INTERVAL, 0.7), 3, [32, 64, 128])
    assert squares.verdicts["wandering"] is True
    assert squares.verdicts["max_overlap_by_resolution"] == [0.0, 0.0, 0.0]
    assert squares.probe == "selfconsistent_wandering"

    shrinking = selfconsistent_wandering(s, reference_cloud(INTERVAL, 2_000), 3, [32, 64])
    assert shrinking.verdicts["wandering"] is False


# TC-29: the self-consistent checklist on MultA
def test_tc29_selfconsistent_checklist():
    s = spec(Family.MULT_A)
    delta = selfconsistent_checklist(s, dirac(INTERVAL, 0.0), n=500, samples=10, particles=2_000,
                                     k_max=3, resolutions=(32, 64))
    assert delta.verdicts["all_conditions_hold"] is True
    assert delta.verdicts["support_density_ratio_by_resolution"] == [1.0, 1.0]
    assert delta.verdicts["no_wandering"] is True
    assert delta.phrasing == "consistent with m(Z) * m_S(Z) = 1"
    assert list(delta.table["condition"]) == ["(i) naturality", "(ii) weak ergodicity",
                                              "(iii') candidate in M(m_S)", "(iii) no wandering m_S"]

    lebesgue = selfconsistent_checklist(s, ReferenceMeasure.lebesgue(), n=500, samples=10, particles=2_000,
                                        k_max=3, resolutions=(32, 64))
    assert lebesgue.verdicts["naturality"] is False
    assert lebesgue.verdicts["weak_ergodicity"] is False
    assert lebesgue.verdicts["in_conditional_support"] is True
    assert lebesgue.phrasing.startswith("inconsistent with m(Z) * m_S(Z) = 1: (i) naturality")


# TC-30: self-consistent naturality seeds M(m) and M(m_S); support ratios of a smooth measure stay near 1
def test_tc30_selfconsistent_naturality_seeds_and_support_ratio():
    report = selfconsistent_naturality(spec(Family.MULT_A), dirac(INTERVAL, 0.0), n=300, particles=1_000)
    assert list(report.table["seed_measure"]) == ["uniform", "perturbation_0", "perturbation_1",
                                                  "perturbation_2", "m_S"]
    assert report.verdicts["natural"] is True
    ratios = support_density_ratio(reference_cloud(INTERVAL, 6_400), [32, 64])
    assert ratios == [pytest.approx(1.0), pytest.approx(1.0)]


# TC-31: self-consistent diagnostics refuse autonomous systems
def test_tc31_selfconsistent_diagnostics_need_measure_dependent_systems():
    with pytest.raises(WrongEvaluator):
        selfconsistent_weak_ergodicity(spec(Family.HALVING), dirac(INTERVAL, 0.0), 5, 10, 0.1)
    with pytest.raises(WrongEvaluator):
        selfconsistent_wandering(spec(Family.DOUBLING), dirac(INTERVAL, 0.3), 2, [8])
    with pytest.raises(WrongEvaluator):
        selfconsistent_checklist(spec(Family.DISC_ROTATION), CIRCLE)
