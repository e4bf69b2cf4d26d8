import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdelab import sde
from sdelab.fields import MatrixField, VectorField
from sdelab.rng import normals, philox4x32, uniforms
from sdelab.sde import (
    Ball,
    ClosedBall,
    Complement,
    Cylinder,
    DriftPolicy,
    SimSpec,
    SimulationError,
    first_exit,
    hit_before_exit,
    hitting_time,
    load_trajectories,
    export_trajectories,
    path_functional,
    refine_study,
    simulate,
)


def bm(d=2, **kw):
    kw.setdefault("x0", (0.0,) * d)
    return SimSpec(MatrixField("identity", d), VectorField("zero", d), **kw)


@pytest.mark.parametrize(
    "ctr,key,out",
    [
        ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
        ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
        ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
         (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
    ],
)
def test_philox_known_answers(ctr, key, out):
    assert tuple(int(v) for v in philox4x32(*ctr, *key)) == out


def test_streams_independent_of_batch_composition():
    a = normals(3, 17, np.arange(100), 3)
    b = normals(3, 17, np.array([5, 50, 99]), 3)
    np.testing.assert_array_equal(a[[5, 50, 99]], b)
    u = uniforms(3, 17, np.arange(10))
    assert np.all((u >= 0) & (u < 1))


def test_one_step_gaussian_moments():
    h = 0.01
    n = 100_000
    batch = simulate(bm(h=h, horizon=h, n_paths=n, seed=1))
    x = batch.states[:, -1]
    se_mean = math.sqrt(h / n)
    se_var = h * math.sqrt(2 / n)
    assert np.all(np.abs(x.mean(axis=0)) < 3 * se_mean)
    assert np.all(np.abs(x.var(axis=0) - h) < 3 * se_var)


def test_increments_normality_over_steps():
    n = 100_000
    batch = simulate(bm(d=1, h=0.1, horizon=0.5, n_paths=n, seed=2))
    inc = np.diff(batch.states[:, :, 0], axis=1) / math.sqrt(0.1)
    for j in range(inc.shape[1]):
        assert abs(inc[:, j].mean()) < 4 / math.sqrt(n)
        assert abs(inc[:, j].var() - 1) < 4 * math.sqrt(2 / n)


def test_deterministic_drift_exact():
    v = (0.5, -1.25)
    spec = SimSpec(MatrixField("identity", 2, {"scale": 0.0}), VectorField("constant", 2, {"v": list(v)}),
                   (1.0, 2.0), horizon=2.0, h=0.01, n_paths=3, policy=DriftPolicy("none"))
    x = simulate(spec).states[:, -1]
    np.testing.assert_allclose(x, np.tile([1.0 + 0.5 * 2.0, 2.0 - 1.25 * 2.0], (3, 1)), atol=1e-12)


def test_trajectory_length():
    spec = bm(h=0.03, horizon=1.0, n_paths=4)
    assert simulate(spec).states.shape == (4, math.ceil(1.0 / 0.03) + 1, 2)


@pytest.mark.parametrize("threads", [1, 3])
def test_bit_exact_replay(threads):
    spec = SimSpec(MatrixField("rotation_sigma", 2), VectorField("remark_1_28_1", 2),
                   (0.1, 0.0), h=0.01, n_paths=40_000, seed=9)
    a = simulate(spec, threads=1)
    b = simulate(spec, threads=threads)
    np.testing.assert_array_equal(a.states, b.states)


def test_bad_spec_rejected():
    with pytest.raises(SimulationError):
        bm(h=0.0)
    with pytest.raises(SimulationError):
        bm(h=0.1, horizon=0.01)
    with pytest.raises(SimulationError):
        bm(n_paths=0)


def test_exit_mean_brownian_disk():
    # E tau = rho^2 / d from E|x_tau|^2 = d E tau; the 1e5-path run lives in the acceptance suite
    spec = bm(h=2e-3, horizon=8.0, n_paths=20_000, seed=7)
    rec = first_exit(simulate(spec, store_stride=None), Ball((0.0, 0.0), 1.0), boundary="bridge")
    assert not rec.censored.any()
    se = rec.time.std() / math.sqrt(rec.time.size)
    assert abs(rec.time.mean() - 0.5) < 3 * se + 0.005


def test_grid_exit_overshoots():
    spec = bm(h=1e-2, horizon=4.0, n_paths=20_000, seed=7)
    batch = simulate(spec, store_stride=None)
    grid = first_exit(batch, Ball((0.0, 0.0), 1.0)).time.mean()
    bridge = first_exit(batch, Ball((0.0, 0.0), 1.0), boundary="bridge").time.mean()
    assert grid > bridge


def test_start_outside_exits_at_zero():
    spec = bm(x0=(2.0, 0.0), h=0.01, n_paths=10)
    rec = first_exit(simulate(spec, store_stride=None), Ball((0.0, 0.0), 1.0))
    assert np.all(rec.step == 0)


def test_deterministic_crossing_step():
    h = 0.01
    spec = SimSpec(MatrixField("identity", 1, {"scale": 0.0}), VectorField("constant", 1, {"v": [1.0]}),
                   (0.0,), horizon=2.0, h=h, n_paths=2, policy=DriftPolicy("none"))
    rec = first_exit(simulate(spec, store_stride=None), Ball((0.0,), 0.555))
    assert abs(int(rec.step[0]) - math.ceil(0.555 / h)) <= 1


def test_short_horizon_censoring():
    rho = 1.0
    spec = bm(h=1e-3, horizon=rho ** 2 / 100, n_paths=5000)
    rec = first_exit(simulate(spec, store_stride=None), Ball((0.0, 0.0), rho))
    assert rec.censored.mean() >= 0.9


def test_cylinder_exit_capped_at_lid():
    spec = bm(h=1e-2, horizon=2.0, n_paths=5000, seed=4)
    rho = 0.5
    rec = first_exit(simulate(spec, store_stride=None), Cylinder(0.0, (0.0, 0.0), rho))
    assert np.all(rec.time <= rho ** 2 + spec.h + 1e-12)
    assert rec.capped.any()


def test_hitting_start_inside():
    spec = bm(h=0.01, n_paths=10)
    rec = hitting_time(simulate(spec, store_stride=None), ClosedBall((0.0, 0.0), 0.5))
    assert np.all(rec.step == 0)


def test_hitting_complement_equals_exit():
    spec = bm(h=0.01, horizon=3.0, n_paths=2000, seed=5)
    batch = simulate(spec, store_stride=None)
    ball = Ball((0.0, 0.0), 1.0)
    np.testing.assert_array_equal(hitting_time(batch, Complement(ball)).step, first_exit(batch, ball).step)


def test_hit_small_ball_before_exit_stable():
    # grid detection misses O(sqrt h) crossings of the 1/16 ball, so the ladder starts well below 1/16^2
    probs = []
    for h in (2e-4, 1e-4):
        spec = bm(h=h, horizon=5.0, n_paths=5000, seed=8)
        hit = hit_before_exit(simulate(spec, store_stride=None), ClosedBall((0.25, 0.0), 1 / 16),
                              Ball((0.0, 0.0), 1.0))
        probs.append((hit.mean(), math.sqrt(hit.mean() * (1 - hit.mean()) / hit.size)))
    (p1, s1), (p2, s2) = probs
    assert p1 > 0 and p2 > 0
    assert abs(p1 - p2) < 2 * math.hypot(s1, s2)


def test_refine_sup_norm_stable():
    spec = bm(horizon=1.0, n_paths=20_000, seed=3)
    reps = refine_study(spec, {"name": "sup_norm"}, [0.02, 0.01, 0.005])
    for a, b in zip(reps, reps[1:]):
        assert abs(a.value - b.value) < 3 * math.hypot(a.std_error, b.std_error) + 0.05 * a.value


def test_refine_bounded_drift_integral_cap():
    spec = SimSpec(MatrixField("identity", 2), VectorField("sine", 2), (0.0, 0.0), horizon=1.0,
                   n_paths=500)
    for rep in refine_study(spec, {"name": "drift_integral"}, [0.1, 0.05]):
        assert rep.value <= 1.0 * 1.0 + 1e-12


def test_refine_radial_drift_grows():
    d = 3
    spec = SimSpec(MatrixField("identity", d, {"scale": math.sqrt(2)}),
                   VectorField("example_12_21_01", d, {"c": d}), (0.0,) * d, horizon=1.0,
                   n_paths=2000, seed=1)
    vals = [r.value for r in refine_study(spec, {"name": "drift_integral"}, [0.04, 0.02, 0.01, 0.005])]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_refine_empty_ladder():
    with pytest.raises(SimulationError):
        refine_study(bm(), {"name": "sup_norm"}, [])


def test_policy_in_fingerprint():
    a = bm(policy=DriftPolicy("cap_displacement")).fingerprint()
    b = bm(policy=DriftPolicy("floor_radius")).fingerprint()
    assert a["policy"] != b["policy"]
    assert a["spec"] != b["spec"]


def test_moment_bound_shape():
    spec = SimSpec(MatrixField("identity", 2), VectorField("remark_1_28_1", 2, {"c": 0.3}), (0.0, 0.0),
                   h=2e-3, n_paths=5000, seed=6)
    Ns = []
    for t in (0.1, 0.5, 1.0):
        vals, stats, _ = path_functional(spec.replace(horizon=t), {"name": "sup_norm", "power": 4})
        Ns.append(vals.mean() / (t ** 2 + t ** 4))
    assert all(math.isfinite(n) and n > 0 for n in Ns)
    assert max(Ns) / min(Ns) < 5


def test_trajectory_dump_round_trip(tmp_path):
    batch = simulate(bm(h=0.1, n_paths=7, seed=2), store_stride=2)
    export_trajectories(tmp_path / "t.bin", batch)
    states, h, stride = load_trajectories(tmp_path / "t.bin")
    np.testing.assert_array_equal(states, batch.states)
    assert (h, stride) == (0.1, 2)


def test_divergence_flagged_not_dropped():
    spec = SimSpec(MatrixField("identity", 1), VectorField("constant", 1, {"v": [1e308]}), (0.0,),
                   h=0.5, horizon=2.0, n_paths=4, policy=DriftPolicy("none"))
    vals, stats, _ = path_functional(spec, {"name": "sup_norm"})
    assert stats.diverged.all()
    assert np.all(stats.diverged_step > 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 40))
def test_path_independent_of_ensemble_size(seed, n):
    big = simulate(bm(h=0.1, n_paths=40, seed=seed))
    small = simulate(bm(h=0.1, n_paths=n, seed=seed))
    np.testing.assert_array_equal(big.states[:n], small.states)
