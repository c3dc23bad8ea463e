import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbdrift import drifts, mollify
from fbdrift.drifts import DriftSpec, TimeEnvelope
from fbdrift.errors import DomainError


def test_zero_field_everywhere():
    z = drifts.zero(3, 1.0)
    pts = np.random.default_rng(0).normal(size=(20, 3))
    assert np.all(drifts.eval_drift(z, 0.3, pts) == 0.0)


def test_hardy_eval_plateau_point():
    # coefficient 0.5 gives -0.5 along e1 at radius 1 (inside the plateau)
    spec = drifts.hardy_attractor(0.5, 3, 4.0)
    v = drifts.eval_drift(spec, 0.0, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(v, [-0.5, 0.0, 0.0], atol=0, rtol=0)


def test_scaled_is_exact_multiple():
    base = drifts.hardy_attractor(0.5, 3, 4.0)
    spec = drifts.scaled(2.0, base)
    v = drifts.eval_drift(spec, 0.0, np.array([1.0, 0.0, 0.0]))
    assert np.array_equal(v, np.array([-1.0, 0.0, 0.0]))


def test_hardy_origin_is_zero_vector():
    spec = drifts.hardy_attractor(1.0, 3, 2.0)
    assert np.all(drifts.eval_drift(spec, 0.0, np.zeros(3)) == 0.0)


def test_dimension_mismatch_raises():
    spec = drifts.hardy_attractor(1.0, 4, 2.0)
    with pytest.raises(ValueError):
        drifts.eval_drift(spec, 0.0, np.zeros(3))


@st.composite
def simple_specs(draw):
    d = 3
    kind = draw(st.sampled_from(["zero", "hardy", "linear", "scaled", "sum",
                                 "mollified"]))
    radius = draw(st.floats(0.5, 3.0))
    if kind == "zero":
        return drifts.zero(d, radius)
    if kind == "hardy":
        return drifts.hardy_attractor(draw(st.floats(0.1, 2.0)), d, radius)
    if kind == "linear":
        lam = draw(st.floats(-2.0, 2.0))
        return drifts.linear(lam * np.eye(d), radius)
    if kind == "scaled":
        return drifts.scaled(draw(st.floats(-3.0, 3.0)),
                             drifts.hardy_attractor(1.0, d, radius))
    if kind == "sum":
        return drifts.drift_sum(drifts.hardy_attractor(0.5, d, radius),
                                drifts.linear(-np.eye(d), radius))
    return mollify.mollify_spec(drifts.hardy_attractor(1.0, d, radius),
                                draw(st.floats(2.0, 20.0)),
                                draw(st.floats(0.02, 0.2)), 0.9)


@given(simple_specs(), st.floats(1.01, 4.0), st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_exact_zero_outside_support(spec, rho, salt):
    gen = np.random.default_rng(salt)
    u = gen.normal(size=(8, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = u * rho * drifts.support_radius(spec)
    assert np.all(drifts.eval_drift(spec, 0.1, pts) == 0.0)


def test_grad_zero_and_linear():
    z = drifts.zero(3, 1.0)
    assert np.all(drifts.grad_drift(z, 0.0, np.ones(3)) == 0.0)
    lin = drifts.linear(-np.eye(3), 4.0)
    G = drifts.grad_drift(lin, 0.0, np.array([0.5, 0.1, -0.3]))
    assert np.allclose(G, -np.eye(3), atol=1e-14)


def test_grad_hardy_matches_finite_differences():
    spec = drifts.hardy_attractor(0.7, 3, 2.0)
    x = np.array([0.4, -0.2, 0.1])
    G = drifts.grad_drift(spec, 0.0, x)
    step = 1e-6
    fd = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        fd[:, j] = (drifts.eval_drift(spec, 0.0, x + e)
                    - drifts.eval_drift(spec, 0.0, x - e)) / (2 * step)
    assert np.allclose(G, fd, atol=1e-6)


def test_grad_hardy_singular_at_origin():
    spec = drifts.hardy_attractor(1.0, 3, 2.0)
    with pytest.raises(DomainError):
        drifts.grad_drift(spec, 0.0, np.zeros(3))


def test_grad_mollified_far_from_origin_matches_inner():
    # far from the singularity and the truncation set, smoothing barely
    # moves the field: the Jacobian approaches the analytic inner one
    inner = drifts.hardy_attractor(0.5, 3, 8.0)
    bm = mollify.mollify_spec(inner, 100.0, 0.02, 1.0)
    x = np.array([[1.5, 0.4, -0.2]])
    G_m = drifts.grad_drift(bm, 0.0, x)[0]
    G_i = drifts.grad_drift(inner, 0.0, x)[0]
    assert np.max(np.abs(G_m - G_i)) < 5e-3


@given(st.floats(0.1, 2.0), st.floats(0.5, 3.0), st.floats(-2, 2),
       st.integers(2, 40))
@settings(max_examples=25, deadline=None)
def test_serialization_roundtrip(c, radius, lam, m):
    spec = drifts.scaled(lam, mollify.mollify_spec(
        drifts.hardy_attractor(c, 3, radius), float(m), 0.05, 0.9))
    back = DriftSpec.from_dict(spec.to_dict())
    assert back.key() == spec.key()
    pts = np.random.default_rng(3).normal(size=(5, 3)) * 0.4
    assert np.array_equal(drifts.eval_drift(spec, 0.0, pts),
                          drifts.eval_drift(back, 0.0, pts))


def test_envelope_kinds():
    cos = TimeEnvelope("cosine", value=0.5, amplitude=0.25, omega=2.0)
    assert np.isclose(cos(0.0), 0.75)
    tel = TimeEnvelope("telegraph", step=0.1, seed=7)
    vals = np.array([tel(t) for t in np.arange(0.0, 2.0, 0.05)])
    assert set(np.unique(vals)) <= {-1.0, 1.0}
    tel2 = TimeEnvelope("telegraph", step=0.1, seed=7)
    assert all(tel(t) == tel2(t) for t in (0.0, 0.31, 1.7))
    assert TimeEnvelope.from_dict(tel.to_dict()).to_dict() == tel.to_dict()


def test_envelope_scales_field():
    env = TimeEnvelope("cosine", value=0.0, amplitude=1.0, omega=np.pi)
    spec = drifts.hardy_attractor(1.0, 3, 4.0, envelope=env)
    x = np.array([1.0, 0.0, 0.0])
    v0 = drifts.eval_drift(spec, 0.0, x)
    v1 = drifts.eval_drift(spec, 1.0, x)   # cos(pi) = -1
    assert np.allclose(v1, -v0)


def test_structural_queries():
    assert drifts.sup_bound(drifts.zero(3, 1.0)) == 0.0
    assert np.isinf(drifts.sup_bound(drifts.hardy_attractor(1.0, 3, 1.0)))
    bm = mollify.mollify_spec(drifts.hardy_attractor(1.0, 3, 1.0), 10.0, 0.05, 0.9)
    assert drifts.sup_bound(bm) == pytest.approx(9.0)
    assert drifts.variation_scale(bm) == pytest.approx(0.05)
    assert not drifts.sde_admissible(drifts.hardy_attractor(1.0, 3, 1.0))
    assert drifts.sde_admissible(bm)
    assert not drifts.sde_admissible(mollify.cutoff_by_level(
        drifts.hardy_attractor(1.0, 3, 1.0), 5.0))


def test_sampled_grid_interpolation():
    # constant field over the grid interpolates exactly inside the box
    vals = np.ones((9, 9, 9, 3)) * np.array([0.5, -0.25, 0.0])
    spec = drifts.sampled_grid(vals, 1.0)
    pts = np.random.default_rng(1).uniform(-0.9, 0.9, size=(50, 3))
    out = drifts.eval_drift(spec, 0.0, pts)
    assert np.allclose(out, np.array([0.5, -0.25, 0.0]), atol=1e-12)
    outside = drifts.eval_drift(spec, 0.0, np.array([[1.5, 0.0, 0.0]]))
    assert np.all(outside == 0.0)


def test_radial_profile_agreement():
    spec = drifts.scaled(1.5, drifts.hardy_attractor(0.8, 3, 2.0))
    g = drifts.radial_profile(spec, 0.0)
    r = np.array([0.3, 0.7, 1.2])
    pts = np.stack([r, np.zeros(3), np.zeros(3)], axis=1)
    v = drifts.eval_drift(spec, 0.0, pts)
    assert np.allclose(v[:, 0], g(r))
