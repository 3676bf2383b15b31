import numpy as np
import pytest

from averaging import cesaro_pushforward
from space_measures import GridMeasure, InvalidArgument, Phase, l1_distance, uniform_cloud, uniform_grid
from system_zoo import Family, SystemSpec, WrongEvaluator
from ulam import (
    ConvergenceWarning,
    build_ulam,
    read_matrix_csv,
    ulam_cesaro_fixed_density,
    ulam_push,
    write_matrix_csv,
)

INTERVAL, DISC = Phase.INTERVAL, Phase.DISC
HALVING = SystemSpec(family=Family.HALVING)
DOUBLING = SystemSpec(family=Family.DOUBLING)


def cell_mass(index, n):
    return GridMeasure.from_masses(INTERVAL, np.eye(n)[index])


# TC-01: a linear contraction sends a whole cell into one cell
def test_tc01_halving_row():
    matrix = build_ulam(HALVING, 10, 64, seed=0)
    assert matrix.row(8) == [(4, pytest.approx(1.0))]


# TC-02: the doubling map splits the first cell in two
def test_tc02_doubling_row_split():
    row = dict(build_ulam(DOUBLING, 10, 1000, seed=0).row(0))
    assert set(row) == {0, 1}
    assert row[0] == pytest.approx(0.5, abs=0.01)
    assert row[1] == pytest.approx(0.5, abs=0.01)


# TC-03: rows are stochastic, also for matrix powers
@pytest.mark.parametrize("system,resolution", [
    (HALVING, 20),
    (SystemSpec(family=Family.SQUARE_JUMP), 20),
    (SystemSpec(family=Family.GIGI), 20),
    (SystemSpec(family=Family.DISC_ROTATION), (8, 8)),
])
def test_tc03_rows_stochastic(system, resolution):
    matrix = build_ulam(system, resolution, 16, seed=1)
    assert np.allclose(matrix.row_sums(), 1.0, atol=1e-9)
    assert np.all(matrix.matrix.data >= 0)
    for k in (2, 4, 8):
        sums = np.asarray(matrix.power(k).sum(axis=1)).reshape(-1)
        assert np.allclose(sums, 1.0, atol=1e-9)


# TC-04: pushing densities conserves mass; Lebesgue is fixed by doubling
def test_tc04_push_conserves_mass():
    matrix = build_ulam(DOUBLING, 20, 64, seed=2)
    pushed = ulam_push(matrix, uniform_grid(INTERVAL, 20))
    assert pushed.masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(pushed.masses - 1 / 20)) <= 2 / 64 / 20

    rng = np.random.default_rng(3)
    density = GridMeasure.from_masses(INTERVAL, rng.random(20))
    assert ulam_push(matrix, density).masses.sum() == pytest.approx(1.0, abs=1e-12)

    halving = build_ulam(HALVING, 10, 64, seed=2)
    assert ulam_push(halving, cell_mass(8, 10)).masses[4] == pytest.approx(1.0)


# TC-05: doubling converges to the uniform density
def test_tc05_doubling_fixed_density():
    result = ulam_cesaro_fixed_density(build_ulam(DOUBLING, 100, 64, seed=4), tol=0.01)
    assert result.converged
    assert l1_distance(result.density, uniform_grid(INTERVAL, 100)) < 0.05
    assert list(result.cauchy_trace.columns) == ["n", "l1_change"]


# TC-06: halving piles the density into cell 0
def test_tc06_halving_fixed_density():
    result = ulam_cesaro_fixed_density(build_ulam(HALVING, 100, 64, seed=5))
    assert result.converged
    assert result.density.masses[0] >= 0.99


# TC-07: the jump at exactly 0 is invisible to cell sampling
def test_tc07_square_jump_fixed_density():
    result = ulam_cesaro_fixed_density(build_ulam(SystemSpec(family=Family.SQUARE_JUMP, params={"c": 0.5}),
                                                  100, 64, seed=6))
    assert result.density.masses[0] >= 0.95


# TC-08: non-convergence is a flag and a warning, never an exception
def test_tc08_non_convergence_warns():
    matrix = build_ulam(HALVING, 100, 64, seed=7)
    with pytest.warns(ConvergenceWarning):
        result = ulam_cesaro_fixed_density(matrix, n_max=8, tol=1e-9)
    assert not result.converged
    assert result.iterations == 8
    assert result.density.masses.sum() == pytest.approx(1.0, abs=1e-12)


# TC-09: guards
def test_tc09_guards():
    with pytest.raises(WrongEvaluator):
        build_ulam(SystemSpec(family=Family.MULT_B), 10)
    with pytest.raises(InvalidArgument):
        build_ulam(HALVING, 10, 0)
    matrix = build_ulam(HALVING, 10, 4)
    with pytest.raises(InvalidArgument):
        ulam_cesaro_fixed_density(matrix, n_max=1)
    with pytest.raises(InvalidArgument):
        ulam_push(matrix, uniform_grid(INTERVAL, 20))


# TC-10: matrices round-trip through row,col,prob triples
def test_tc10_matrix_csv(tmp_path):
    matrix = build_ulam(DOUBLING, 12, 8, seed=8)
    path = write_matrix_csv(matrix, tmp_path / "matrix.csv")
    assert path.read_text().splitlines()[0] == "row,col,prob"
    back = read_matrix_csv(path, DOUBLING, 12, 8, 8)
    assert np.array_equal(back.matrix.toarray(), matrix.matrix.toarray())


# TC-11: construction is deterministic per seed; disc grids are N_phi x N_R
def test_tc11_deterministic_and_disc_shape():
    system = SystemSpec(family=Family.DISC_JUMP)
    a = build_ulam(system, (8, 6), 9, seed=9)
    b = build_ulam(system, (8, 6), 9, seed=9)
    assert a.n_cells == 48 and a.resolution == (8, 6)
    assert np.array_equal(a.matrix.toarray(), b.matrix.toarray())


# TC-12: Ulam and particle pipelines agree for doubling
def test_tc12_ulam_matches_particles():
    ulam_density = ulam_cesaro_fixed_density(build_ulam(DOUBLING, 50, 64, seed=10)).density
    particles = cesaro_pushforward(DOUBLING, uniform_cloud(INTERVAL, 20_000, seed=11), 200, 50)
    assert l1_distance(ulam_density, particles) < 0.1
