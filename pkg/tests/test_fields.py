import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdelab.fields import (
    FieldError,
    MatrixField,
    ScalarField,
    SingularityError,
    VectorField,
    catalog,
    eval_a,
    eval_drift,
    eval_scalar,
    eval_sigma,
    parabolic_dilate,
)


def test_radial_drift_unit_radius():
    b = VectorField("example_12_21_01", 3, {"c": 3.0})
    np.testing.assert_allclose(eval_drift(b, 0.0, [1.0, 0.0, 0.0]), [-3.0, 0.0, 0.0])


def test_radial_drift_default_c_is_dimension():
    b = VectorField("example_12_21_01", 3)
    np.testing.assert_allclose(eval_drift(b, 0.0, [0.0, 2.0, 0.0]), [0.0, -1.5, 0.0])


def test_time_space_singular_drift_at_unit_point():
    b = VectorField("example_3_22_1", 2, {"alpha": 0.5, "beta": 0.5})
    np.testing.assert_allclose(eval_drift(b, 1.0, [1.0, 0.0]), [-1.0, 0.0])


def test_time_space_singular_drift_vanishes_after_unit_time():
    b = VectorField("example_3_22_1", 2)
    np.testing.assert_allclose(eval_drift(b, 1.5, [0.3, 0.2]), [0.0, 0.0])


def test_power_drift_magnitude_at_time_zero():
    # c / (|x|^g (|x| + sqrt t)^(1-g)) with t -> 0+, |x| = 2
    b = VectorField("remark_1_28_1", 2, {"gamma": 0.8, "c": 1.0})
    x = np.array([2.0 / math.sqrt(2), 2.0 / math.sqrt(2)])
    v = eval_drift(b, 0.0, x)
    oracle = 1.0 / (2.0 ** 0.8 * 2.0 ** 0.2)
    assert np.linalg.norm(v) == pytest.approx(oracle, rel=1e-12)
    # directed to the origin
    assert np.dot(v, x) < 0


def test_sign_drift_values():
    b = VectorField("example_3_22_2", 2, {"q": 1.5})
    t = 0.25
    np.testing.assert_allclose(eval_drift(b, t, [0.5, 3.0]), [t ** (-1 / 1.5), 0.0])
    np.testing.assert_allclose(eval_drift(b, t, [-0.5, 3.0]), [-t ** (-1 / 1.5), 0.0])
    np.testing.assert_allclose(eval_drift(b, t, [1.5, 0.0]), [0.0, 0.0])


def test_one_coordinate_drift():
    b = VectorField("example_5_23_1", 2, {"alpha": 0.5})
    np.testing.assert_allclose(eval_drift(b, 0.0, [0.25, 7.0]), [-2.0, 0.0])
    np.testing.assert_allclose(eval_drift(b, 0.0, [-0.25, 7.0]), [2.0, 0.0])


@pytest.mark.parametrize(
    "b,point",
    [
        (VectorField("example_12_21_01", 2), (0.0, [0.0, 0.0])),
        (VectorField("example_3_22_1", 2), (0.5, [0.0, 0.0])),
        (VectorField("example_5_23_1", 2), (0.0, [0.0, 1.0])),
    ],
)
def test_singular_point_raises(b, point):
    with pytest.raises(SingularityError):
        eval_drift(b, *point)


def test_rotation_sigma_at_unit_vector():
    s = MatrixField("rotation_sigma", 2)
    sig = eval_sigma(s, 0.0, [1.0, 0.0])
    np.testing.assert_allclose(sig @ sig.T, np.eye(2), atol=1e-15)


def test_rotation_sigma_origin_convention():
    s = MatrixField("rotation_sigma", 2)
    np.testing.assert_allclose(eval_sigma(s, 0.0, [0.0, 0.0]), np.eye(2))


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_rotation_sigma_gives_identity_diffusion(x1, x2):
    a = eval_a(MatrixField("rotation_sigma", 2), 0.0, [x1, x2])
    np.testing.assert_allclose(a, np.eye(2), atol=1e-12)


def test_identity_sigma():
    s = MatrixField("identity", 3)
    np.testing.assert_allclose(eval_sigma(s, 0.3, [1.0, -2.0, 0.5]), np.eye(3))


def test_block_sigma_reduces_to_identity():
    s = MatrixField("eq_6_3_4", 3, {"alpha": 1.0, "beta": 0.0})
    sig = eval_sigma(s, 0.0, [0.3, -0.1, 2.0])
    assert sig.shape == (3, 12)
    np.testing.assert_allclose(sig[:, :3], np.eye(3))
    np.testing.assert_allclose(sig[:, 3:], 0.0)
    np.testing.assert_allclose(eval_a(s, 0.0, [0.3, -0.1, 2.0]), np.eye(3))


@pytest.mark.parametrize(
    "sigma",
    [
        MatrixField("identity", 2, {"scale": 1.5}),
        MatrixField("rotation_sigma", 2),
        MatrixField("eq_6_3_4", 3, {"alpha": 1.0, "beta": 0.7}),
        MatrixField("log_oscillating", 2),
        MatrixField("log_oscillating", 3),
    ],
    ids=lambda s: f"{s.kind}-{s.dim}",
)
def test_ellipticity_on_random_points(sigma):
    rng = np.random.default_rng(0)
    d = sigma.dim
    x = rng.normal(size=(1000, d)) * rng.choice([1e-3, 0.1, 1.0], size=(1000, 1))
    t = rng.uniform(0, 2, 1000)
    a = eval_a(sigma, t, x)
    xi = rng.normal(size=(100, d))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    quad = np.einsum("ki,nij,kj->nk", xi, a, xi)
    delta = sigma.ellipticity
    assert 0 < delta <= 1
    assert quad.min() >= delta * (1 - 1e-12)
    assert quad.max() <= (1 + 1e-12) / delta


def test_dilate_radial_is_scale_invariant():
    b = VectorField("example_12_21_01", 2, {"c": 1.0})
    bh = parabolic_dilate(b, 0.5)
    x = np.array([0.7, -1.3])
    np.testing.assert_allclose(eval_drift(bh, 0.2, x), -x / np.dot(x, x))


def test_dilate_time_space_drift_scales_by_power():
    # c b(c^2 t, c x) = c^(1 - 2 alpha - beta) b(t, x) = c^-alpha b(t, x) when alpha + beta = 1
    b = VectorField("example_3_22_1", 2)
    bh = parabolic_dilate(b, 0.25)
    np.testing.assert_allclose(eval_drift(bh, 1.0, [1.0, 0.0]), [-2.0, 0.0])


def test_dilate_constant_drift():
    b = VectorField("constant", 2, {"v": [1.0, -2.0]})
    np.testing.assert_allclose(eval_drift(parabolic_dilate(b, 0.3), 0.0, [5.0, 5.0]), [0.3, -0.6])


def test_dilate_rejects_nonpositive():
    with pytest.raises(FieldError):
        parabolic_dilate(VectorField("zero", 2), 0.0)


_points = st.tuples(st.floats(0.01, 0.99), st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3),
                    st.floats(-3, 3))


@settings(max_examples=50)
@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), _points)
def test_dilations_compose(c1, c2, pt):
    t, x1, x2 = pt
    for b in (VectorField("remark_1_28_1", 2), VectorField("example_3_22_2", 2),
              VectorField("sine", 2)):
        once = parabolic_dilate(b, c1 * c2)
        twice = parabolic_dilate(parabolic_dilate(b, c1), c2)
        np.testing.assert_allclose(eval_drift(twice, t, [x1, x2]), eval_drift(once, t, [x1, x2]),
                                   rtol=1e-12, atol=1e-300)


@settings(max_examples=50)
@given(st.floats(0.05, 1.0), _points)
def test_radial_drift_is_dilation_fixed_point(c, pt):
    t, x1, x2 = pt
    b = VectorField("example_12_21_01", 2)
    np.testing.assert_allclose(eval_drift(parabolic_dilate(b, c), t, [x1, x2]),
                               eval_drift(b, t, [x1, x2]), rtol=1e-12)


@settings(max_examples=50)
@given(st.floats(0.05, 1.0), st.floats(0.05, 0.5), _points)
def test_time_space_drift_dilation_exponent(c, alpha, pt):
    t, x1, x2 = pt
    b = VectorField("example_3_22_1", 2, {"alpha": alpha, "beta": 1 - alpha})
    np.testing.assert_allclose(eval_drift(parabolic_dilate(b, c), t, [x1, x2]),
                               c ** -alpha * eval_drift(b, t, [x1, x2]), rtol=1e-12)


@given(st.sampled_from([r["kind"] for r in catalog() if r["category"] == "drift"]),
       st.integers(1, 3))
def test_descriptor_json_round_trip(kind, d):
    b = VectorField(kind, d, {"alpha": 0.25})
    assert VectorField.from_dict(b.to_dict()) == b
    assert b.fingerprint() == VectorField.from_dict(b.to_dict()).fingerprint()


def test_scalar_nonnegative_flags():
    assert ScalarField("ball_indicator", 2).nonnegative
    assert not ScalarField("monomial", 2).nonnegative
    v = eval_scalar(ScalarField("gaussian_bump", 2, {"width": 0.5}), 0.0, [[0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(v, [1.0, math.exp(-2.0)])


def test_catalog_contents():
    kinds = {r["kind"] for r in catalog()}
    assert {"example_3_22_1", "rotation_sigma", "example_12_21_01", "example_3_22_2",
            "remark_1_28_1", "example_5_23_1", "eq_6_3_4", "log_oscillating"} <= kinds
    assert len(kinds) >= 10
