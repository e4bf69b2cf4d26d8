import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdelab.fields import MatrixField, VectorField
from sdelab.green import (
    GreenError,
    GreenGrid,
    GreenGridSpec,
    a_infty_check,
    analytic_green_bm,
    ball_family,
    doubling_scan,
    dyadic_cylinders,
    green_histogram,
    negative_power_integral,
    random_subsets,
    reverse_holder_scan,
)
from sdelab.morrey import Cylinder
from sdelab.sde import SimSpec

GRID = GreenGridSpec(t_max=1.0, n_t=8, x_lo=(-2.0, -2.0), x_hi=(2.0, 2.0), n_x=16)


def bm(**kw):
    return SimSpec(MatrixField("identity", 2), VectorField("zero", 2), (0.0, 0.0), **kw)


def const_grid(c=2.0, grid=GRID):
    return GreenGrid(1.0, grid, np.full(grid.shape, c))


def interior(grid):
    m = np.zeros(grid.shape, bool)
    m[1:, 2:-2, 2:-2] = True
    return m


@pytest.fixture(scope="module")
def mc():
    return green_histogram(bm(h=0.01, n_paths=50_000, seed=3), 1.0, GRID)


def test_histogram_mass_bounded(mc):
    assert 0 < mc.mass <= 1.0
    assert mc.n_paths == 50_000


def test_histogram_matches_matched_sum(mc):
    oracle = analytic_green_bm(1.0, GRID, h=0.01)
    m = interior(GRID) & (mc.std_error > 0)
    z = np.abs(mc.density - oracle.density)[m] / mc.std_error[m]
    assert z.max() < 4.5
    assert np.mean(z > 3) < 0.01


def test_histogram_symmetric_for_radial_drift():
    # one time slab keeps cell counts large enough for plug-in standard errors; odd n_x puts
    # the start point (which carries the t = 0 quadrature mass) at a cell centre
    slab = GreenGridSpec(t_max=1.0, n_t=1, n_x=15)
    spec = SimSpec(MatrixField("identity", 2), VectorField("remark_1_28_1", 2, {"c": 0.5}),
                   (0.0, 0.0), h=0.01, n_paths=20_000, seed=4)
    G = green_histogram(spec, 1.0, slab)
    flip = G.density[:, ::-1, :]
    se = np.hypot(G.std_error, G.std_error[:, ::-1, :])
    m = np.zeros(slab.shape, bool)
    m[:, 2:7, 2:-2] = True
    z = np.abs(G.density - flip)[m] / se[m]
    assert z.max() < 4


def test_histogram_rejects_bad_input():
    with pytest.raises(GreenError):
        green_histogram(bm(n_paths=10), 0.0, GRID)
    with pytest.raises(GreenError):
        GreenGridSpec(n_t=0)
    with pytest.raises(GreenError):
        green_histogram(bm(n_paths=10), 1.0, GreenGridSpec(x_lo=(-1.0,), x_hi=(1.0,)))


def test_analytic_mass_approaches_inverse_lambda():
    big = GreenGridSpec(t_max=12.0, n_t=24, x_lo=(-25.0, -25.0), x_hi=(25.0, 25.0), n_x=50)
    G = analytic_green_bm(1.0, big)
    assert G.mass == pytest.approx(1.0 - math.exp(-12.0), rel=1e-6)
    assert analytic_green_bm(1.0, GRID).mass < G.mass


def test_analytic_marginal_is_radial():
    g = analytic_green_bm(1.0, GRID).marginal()
    np.testing.assert_allclose(g, g.T, rtol=1e-12)
    np.testing.assert_allclose(g, g[::-1, :], rtol=1e-12)


def test_marginal_matches_mc():
    # with a single time slab the histogram is the spatial marginal, with per-path errors
    slab = GreenGridSpec(t_max=1.0, n_t=1, n_x=16)
    G = green_histogram(bm(h=0.01, n_paths=20_000, seed=5), 1.0, slab)
    oracle = analytic_green_bm(1.0, GRID, h=0.01).marginal()
    np.testing.assert_allclose(analytic_green_bm(1.0, slab, h=0.01).marginal(), oracle, rtol=1e-10)
    se = G.std_error[0] * slab.t_max
    m = np.zeros((16, 16), bool)
    m[2:-2, 2:-2] = True
    assert np.max(np.abs(G.marginal() - oracle)[m] / se[m]) < 4


def test_export(tmp_path, mc):
    mc.write_csv(tmp_path / "g.csv")
    mc.write_json(tmp_path / "g.json")
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "t,x0,x1,G,std_error"
    assert len(rows) == 1 + 8 * 16 * 16
    assert json.loads((tmp_path / "g.json").read_text())["lam"] == 1.0


def test_reverse_holder_constant_is_one():
    rep = reverse_holder_scan(const_grid(), 3.0, dyadic_cylinders(GRID, 50))
    assert all(row["ratio"] == pytest.approx(1.0, rel=1e-12) for row in rep.table)


def test_reverse_holder_analytic_stable_under_refinement():
    a = analytic_green_bm(1.0, GRID)
    b = analytic_green_bm(1.0, GRID.refined())
    fam = dyadic_cylinders(GRID, 100)
    ra = reverse_holder_scan(a, 3.0, fam)
    rb = reverse_holder_scan(b, 3.0, fam)
    assert math.isfinite(ra.value) and ra.value > 0
    assert rb.value == pytest.approx(ra.value, rel=0.1)
    assert all(row["ratio"] > 0 for row in ra.table)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.2, 6.0), st.floats(1.2, 6.0))
def test_reverse_holder_antitone_in_p(p1, p2):
    G = analytic_green_bm(1.0, GRID, n_quad=16)
    fam = dyadic_cylinders(GRID, 20)
    lo, hi = sorted((p1, p2))
    a = reverse_holder_scan(G, lo, fam).table
    b = reverse_holder_scan(G, hi, fam).table
    for x, y in zip(a, b):
        assert y["ratio"] <= x["ratio"] * (1 + 1e-12)


def test_reverse_holder_rejects_small_p():
    with pytest.raises(GreenError):
        reverse_holder_scan(const_grid(), 1.0, dyadic_cylinders(GRID, 5))


def test_doubling_constant_is_volume_ratio():
    g = const_grid().marginal_grid()
    rep = doubling_scan(g, ball_family(GRID))
    assert rep.value == pytest.approx(4.0, rel=1e-12)


def test_doubling_analytic_finite_and_stable():
    balls = ball_family(GRID)
    a = doubling_scan(analytic_green_bm(1.0, GRID).marginal_grid(), balls)
    b = doubling_scan(analytic_green_bm(1.0, GRID.refined()).marginal_grid(), balls)
    assert math.isfinite(a.value)
    assert b.value == pytest.approx(a.value, rel=0.1)
    assert all(row["ratio"] >= 1.0 for row in a.table)


def test_a_infty_whole_ball():
    g = analytic_green_bm(1.0, GRID).marginal_grid()
    sub = random_subsets(g, (0.0, 0.0), 1.0, 1, seed=0)
    whole = [np.ones_like(sub[0])]
    rep = a_infty_check(g, (0.0, 0.0), 1.0, whole)
    assert rep.N_hat == pytest.approx(1.0)
    assert rep.violations == 0


def test_a_infty_half_ball_constant():
    g = const_grid().marginal_grid()
    x = g.x_centers(0)
    half = np.broadcast_to((x > 0)[:, None], (16, 16)).copy()
    rep = a_infty_check(g, (0.0, 0.0), 1.0, [half], mu_grid=[1.0])
    assert rep.samples[0]["g_ratio"] == pytest.approx(0.5)
    assert rep.N_hat == pytest.approx(1.0)
    assert rep.violations == 0


def test_a_infty_analytic_random_sets():
    g = analytic_green_bm(1.0, GRID).marginal_grid()
    subs = random_subsets(g, (0.0, 0.0), 1.0, 25, seed=1) \
        + random_subsets(g, (0.0, 0.0), 1.0, 25, seed=2, kind="balls")
    rep = a_infty_check(g, (0.0, 0.0), 1.0, subs)
    assert math.isfinite(rep.mu_hat) and math.isfinite(rep.N_hat)
    assert rep.violations == 0


def test_negative_power_constant():
    region = Cylinder(0.0, (0.0, 0.0), 1.0)
    c = 2.0
    G = const_grid(c)
    r = negative_power_integral(G, 0.5, region, 0.05)
    assert r.value == pytest.approx(c ** -0.5 * r.volume)
    assert negative_power_integral(G, 0.0, region, 0.05).value == pytest.approx(r.volume)
    assert r.zero_cells == 0


def test_negative_power_analytic_finite():
    G = analytic_green_bm(1.0, GRID.refined())
    r = negative_power_integral(G, 0.2, Cylinder(0.0, (0.0, 0.0), 1.0), 0.05)
    assert math.isfinite(r.value) and r.value > 0
    assert r.zero_cells == 0


def test_negative_power_counts_starved_cells():
    G = const_grid()
    G.density[3, 8, 8] = 0.0
    r = negative_power_integral(G, 0.3, Cylinder(0.0, (0.0, 0.0), 1.0), 0.05)
    assert r.zero_cells == 1
    with pytest.raises(GreenError):
        negative_power_integral(G, 0.3, Cylinder(0.0, (0.0, 0.0), 1.0), 0.0)
