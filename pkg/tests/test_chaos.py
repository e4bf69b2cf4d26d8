import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdelab.chaos import (
    ChaosError,
    ChaosGrid,
    SemigroupEngine,
    SimplexRule,
    apply_Q,
    apply_T,
    chaos_terms,
    default_bump,
    rotation_experiment,
    variance_oracle,
)
from sdelab.fields import MatrixField, ScalarField

GRID = ChaosGrid((0.0, 0.0), 8.0, 128)
SIGMA_I = MatrixField("identity", 2)
X1 = ScalarField("monomial", 2, {"exponents": [1, 0]})
X1SQ = ScalarField("monomial", 2, {"exponents": [2, 0]})


def inner(arr, frac=0.25):
    # drop a band near the edges, where zero padding and one-sided differences act
    n = arr.shape[-1]
    k = int(n * frac)
    return arr[..., k:n - k, k:n - k]


@pytest.fixture(scope="module")
def eng():
    return SemigroupEngine(GRID)


def gauss(grid):
    p = grid.points()
    return np.exp(-np.sum(p ** 2, axis=-1) / 2)


def test_T_identity_at_zero_gap(eng):
    v = gauss(GRID)
    np.testing.assert_array_equal(apply_T(eng, v, 0.3, 0.3), v)


@pytest.mark.parametrize("tau", [0.25, 1.0, 2.0])
def test_T_of_gaussian_closed_form(eng, tau):
    p = GRID.points()
    exact = np.exp(-np.sum(p ** 2, axis=-1) / (2 * (1 + tau))) / (1 + tau)
    got = apply_T(eng, gauss(GRID), 0.0, tau)
    assert np.max(np.abs(inner(got - exact))) < 1e-4


def test_T_semigroup(eng):
    v = gauss(GRID)
    once = apply_T(eng, v, 0.0, 1.0)
    twice = apply_T(eng, apply_T(eng, v, 0.0, 0.5), 0.5, 1.0)
    assert np.max(np.abs(inner(once - twice))) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_T_positive_and_mass_preserving(seed, tau):
    # support [-2, 2]^2 on a half-width 8 grid: at least 6 std devs of padding for tau <= 1
    grid = ChaosGrid((0.0, 0.0), 8.0, 64)
    eng = SemigroupEngine(grid)
    rng = np.random.default_rng(seed)
    v = np.zeros((64, 64))
    v[24:40, 24:40] = rng.uniform(size=(16, 16))
    out = eng.apply(v, tau)
    assert out.min() >= 0
    assert abs(out.sum() - v.sum()) < 1e-6 * v.sum()


def test_T_rejects_backwards(eng):
    with pytest.raises(ChaosError):
        apply_T(eng, gauss(GRID), 1.0, 0.5)


def test_engine_rejects_bad_matrix():
    with pytest.raises(ChaosError):
        SemigroupEngine(GRID, [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ChaosError):
        SemigroupEngine(GRID, [[1.0, 0.5], [0.0, 1.0]])


def test_T_nondiagonal_covariance():
    a = np.array([[1.0, 0.5], [0.5, 1.0]])
    eng = SemigroupEngine(GRID, a)
    v = gauss(GRID)
    p = GRID.points()
    # Gaussian with covariance I + a tau, evaluated by the closed form
    C = np.eye(2) + 0.5 * a
    Ci = np.linalg.inv(C)
    exact = np.exp(-0.5 * np.einsum("...i,ij,...j->...", p, Ci, p)) / math.sqrt(np.linalg.det(C))
    assert np.max(np.abs(inner(eng.apply(v, 0.5) - exact))) < 1e-4


def test_Q_of_linear(eng):
    q1 = apply_Q(eng, 0, X1, 0.0, 0.5, SIGMA_I)
    q2 = apply_Q(eng, 1, X1, 0.0, 0.5, SIGMA_I)
    np.testing.assert_allclose(inner(q1), 1.0, atol=1e-5)
    np.testing.assert_allclose(inner(q2), 0.0, atol=1e-5)


def test_Q_of_square(eng):
    q1 = apply_Q(eng, 0, X1SQ, 0.0, 0.5, SIGMA_I)
    x = GRID.points()[..., 0]
    np.testing.assert_allclose(inner(q1), inner(2 * x), rtol=1e-5, atol=1e-5)


def test_Q_tangential_kills_radial():
    # centred differences are tangentially orthogonal up to O(dx^2)
    f = ScalarField("gaussian_bump", 2, {"width": 1.0})
    rot = MatrixField("rotation_sigma", 2)
    err = []
    for n in (128, 256):
        eng = SemigroupEngine(ChaosGrid((0.0, 0.0), 8.0, n))
        radial = np.max(np.abs(apply_Q(eng, 0, f, 0.0, 0.5, rot)))
        err.append(np.max(np.abs(apply_Q(eng, 1, f, 0.0, 0.5, rot))) / radial)
    assert err[0] < 1e-3
    assert err[1] < err[0] / 3


def test_Q_needs_smoothing(eng):
    with pytest.raises(ChaosError):
        apply_Q(eng, 0, X1, 0.5, 0.5, SIGMA_I)


@pytest.mark.parametrize("t0", [0.5, 1.0])
def test_variance_oracle(t0):
    x0 = (1.0, 0.0)
    grid = ChaosGrid.default(x0, t0)
    eng = SemigroupEngine(grid)
    assert variance_oracle(eng, ScalarField("constant", 2, {"value": 3.0}), t0) == pytest.approx(0, abs=1e-9)
    assert variance_oracle(eng, X1, t0) == pytest.approx(t0, rel=1e-7)
    assert variance_oracle(eng, X1SQ, t0) == pytest.approx(4 * t0 + 2 * t0 ** 2, rel=1e-6)


def test_chaos_linear_is_first_order():
    tab = chaos_terms(X1, (0.3, -0.2), 1.0, 2, rule=SimplexRule(nodes=4))
    assert tab.V == pytest.approx(1.0, rel=1e-7)
    assert tab.S[0] == pytest.approx(1.0, rel=1e-6)
    assert tab.remainder[0] == pytest.approx(0.0, abs=1e-6)


def test_chaos_square_two_orders():
    tab = chaos_terms(X1SQ, (1.0, 0.0), 1.0, 2, rule=SimplexRule(nodes=8))
    assert tab.V == pytest.approx(6.0, rel=1e-3)
    assert tab.S[0] == pytest.approx(4.0, rel=1e-3)
    assert tab.S[1] == pytest.approx(2.0, rel=1e-3)
    assert abs(tab.remainder[1]) < 1e-3 * tab.V


@settings(max_examples=5, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.3, 1.5))
def test_chaos_polynomial_remainder_vanishes(x, t0):
    tab = chaos_terms(X1SQ, (x, 0.0), t0, 2, rule=SimplexRule(nodes=8))
    assert abs(tab.remainder[1]) < 1e-3 * tab.V
    assert all(s >= 0 for s in tab.S)


def test_chaos_bump_remainders_decrease():
    tab = chaos_terms(default_bump(), (0.0, 0.0), 1.0, 3, rule=SimplexRule(nodes=4),
                      grid=ChaosGrid.default((0.0, 0.0), 1.0, 64))
    r = tab.remainder
    assert all(s >= 0 for s in tab.S)
    assert r[0] > r[1] > r[2] > 0
    assert r[2] / tab.V < r[0] / tab.V


def test_chaos_errors():
    with pytest.raises(ChaosError):
        chaos_terms(X1, (0.0, 0.0), 0.0)
    with pytest.raises(ChaosError, match="budget"):
        chaos_terms(X1, (0.0, 0.0), 1.0, 3, rule=SimplexRule(nodes=40, max_chains=1000))


def test_chaos_table_export(tmp_path):
    tab = chaos_terms(X1, (0.0, 0.0), 1.0, 1, rule=SimplexRule(nodes=3),
                      grid=ChaosGrid.default((0.0, 0.0), 1.0, 32))
    tab.write_json(tmp_path / "c.json")
    tab.write_csv(tmp_path / "c.csv")
    d = json.loads((tmp_path / "c.json").read_text())
    assert set(d) >= {"t0", "x0", "V", "S", "remainder"}
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "m,S,remainder,relative_remainder"


def test_rotation_separates_origin_from_far_point():
    rep = rotation_experiment([(0.0, 0.0), (4.0, 0.0)], 1.0, 2, rule=SimplexRule(nodes=4), n=64)
    at0 = rep.ratio("rotation_sigma", (0.0, 0.0))
    far = rep.ratio("rotation_sigma", (4.0, 0.0))
    assert at0[1] >= 2 * far[1]
    assert all(r["V"] > 0 for r in rep.rows)
    ctrl = [rep.ratio("identity", x)[1] for x in ((0.0, 0.0), (4.0, 0.0))]
    assert max(ctrl) / min(ctrl) < 2
