import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from fbdrift import drifts, formbound, mollify
from fbdrift.errors import NumericsError


# -- closed-form bound -------------------------------------------------------

def test_hardy_delta_coefficient_formula():
    # b = -((d-2)/2) sqrt(delta) x/|x|^2  <=>  delta = (2c/(d-2))^2
    assert formbound.hardy_delta(1.0, 4) == pytest.approx(1.0)
    assert formbound.hardy_delta(0.0, 5) == 0.0
    assert formbound.hardy_delta(0.5, 3) == pytest.approx(1.0)
    assert formbound.hardy_delta(0.25, 3) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        formbound.hardy_delta(1.0, 2)


def test_sobolev_constant_d3():
    # 1/S with S = 3 (pi/2)^{4/3} the sharp gradient constant in d = 3
    oracle = 1.0 / (3.0 * (math.pi / 2.0) ** (4.0 / 3.0))
    assert formbound.sobolev_constant(3) == pytest.approx(oracle, rel=1e-12)


# -- Rayleigh-quotient estimator ---------------------------------------------

@pytest.fixture(scope="module")
def family():
    return formbound.reference_family(3, 2.0)


def test_estimator_zero_field(family):
    rep = formbound.estimate_form_bound(drifts.zero(3, 2.0), family)
    assert rep.delta_hat == 0.0
    assert all(q == 0.0 for (_, _, q) in rep.quotients)


def test_estimator_hardy_band_and_consistency(family):
    c = 0.5
    delta = formbound.hardy_delta(c, 3)
    rep = formbound.estimate_form_bound(drifts.hardy_attractor(c, 3, 2.0), family)
    assert 0.8 * delta <= rep.delta_hat <= 1.0 * delta
    # every quotient sits below the sharp bound up to quadrature tolerance
    assert all(q <= delta * (1 + 1e-3) for (_, _, q) in rep.quotients)
    assert rep.argmax_id[0].startswith("hardy-quasi")


def test_estimator_quadratic_homogeneity_exact(family):
    base = drifts.hardy_attractor(0.3, 3, 2.0)
    r1 = formbound.estimate_form_bound(base, family)
    r2 = formbound.estimate_form_bound(drifts.scaled(2.0, base), family)
    for (_, _, q1), (_, _, q2) in zip(r1.quotients, r2.quotients):
        assert q2 == 4.0 * q1
    assert r2.delta_hat == 4.0 * r1.delta_hat


@given(st.floats(0.5, 3.0))
@settings(max_examples=10, deadline=None)
def test_estimator_homogeneity_generic_factor(lam):
    fam = formbound.radial_family(3, 2.0)
    base = drifts.hardy_attractor(0.4, 3, 2.0)
    r1 = formbound.estimate_form_bound(base, fam)
    r2 = formbound.estimate_form_bound(drifts.scaled(lam, base), fam)
    assert r2.delta_hat == pytest.approx(lam**2 * r1.delta_hat, rel=1e-12)


def test_empty_family_rejected():
    fam = formbound.TestFunctionFamily([], "empty", 3)
    with pytest.raises(ValueError):
        formbound.estimate_form_bound(drifts.zero(3, 1.0), fam)


# -- Sobolev route -----------------------------------------------------------

def test_sobolev_delta_zero():
    assert formbound.sobolev_delta(drifts.zero(3, 1.0)) == 0.0


def test_sobolev_delta_linear_oracle():
    # independent quadrature of || |A x| chi ||_3 with A = I, R = 2
    R = 2.0
    spec = drifts.linear(np.eye(3), R)

    def chi(r):
        s = min(max((2 * r - R) / R, 0.0), 1.0)
        return 1.0 - s**3 * (10 - 15 * s + 6 * s**2)

    val, _ = quad(lambda r: (r * chi(r)) ** 3 * 4 * math.pi * r**2, 0, R)
    oracle = formbound.sobolev_constant(3) * val ** (2.0 / 3.0)
    assert formbound.sobolev_delta(spec) == pytest.approx(oracle, rel=1e-4)


def test_sobolev_delta_scaling():
    spec = drifts.linear(np.eye(3), 2.0)
    base = formbound.sobolev_delta(spec)
    assert formbound.sobolev_delta(drifts.scaled(3.0, spec)) == \
        pytest.approx(9.0 * base, rel=1e-12)


def test_sobolev_delta_hardy_not_integrable():
    with pytest.raises(NumericsError):
        formbound.sobolev_delta(drifts.hardy_attractor(1.0, 3, 2.0))


# -- Morrey norm -------------------------------------------------------------

def test_morrey_zero():
    assert formbound.morrey_norm(drifts.zero(3, 2.0), 0.1,
                                 [np.zeros(3)], [0.5]) == 0.0


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.3])
def test_morrey_hardy_oracle(eps):
    # centered ball inside the plateau: r (avg |c/x|^{2+eps})^{1/(2+eps)}
    # = (d/(d-eps))^{1/(2+eps)} * c  for d = 3
    c, R = 1.0, 2.0
    spec = drifts.hardy_attractor(c, 3, R)
    # (1/|B_r|) int_0^r (c/s)^{2+eps} 4 pi s^2 ds = 3 c^{2+eps} r^{-(2+eps)}/(1-eps)
    oracle = (3.0 / (1.0 - eps)) ** (1.0 / (2.0 + eps)) * c
    got = formbound.morrey_norm(spec, eps, [np.zeros(3)], [0.4])
    assert got == pytest.approx(oracle, rel=1e-3)


def test_morrey_eps_to_zero_approaches_sqrt3():
    spec = drifts.hardy_attractor(1.0, 3, 2.0)
    got = formbound.morrey_norm(spec, 1e-3, [np.zeros(3)], [0.4])
    assert got == pytest.approx(math.sqrt(3.0), rel=5e-3)


def test_morrey_scale_invariance_hardy():
    radii = np.geomspace(2e-3, 0.8, 8)
    h1 = drifts.hardy_attractor(1.0, 3, 2.0)
    h2 = drifts.hardy_attractor(1.0, 3, 1.0)     # the dilated field
    centers1 = [np.zeros(3), np.array([0.4, 0.0, 0.0])]
    centers2 = [np.zeros(3), np.array([0.2, 0.0, 0.0])]
    m1 = formbound.morrey_norm(h1, 0.1, centers1, radii.tolist())
    m2 = formbound.morrey_norm(h2, 0.1, centers2, (radii / 2).tolist())
    assert abs(m1 - m2) / m1 <= 1e-6


def test_morrey_scale_invariance_linear():
    # lambda b(lambda x) for b = A x chi_R equals lambda^2 A x chi_{R/lam}
    radii = np.geomspace(1e-2, 0.9, 6)
    A = np.diag([1.0, -0.5, 0.25])
    b1 = drifts.linear(A, 2.0)
    b2 = drifts.scaled(4.0, drifts.linear(A, 1.0))
    m1 = formbound.morrey_norm(b1, 0.2, [np.zeros(3)], radii.tolist())
    m2 = formbound.morrey_norm(b2, 0.2, [np.zeros(3)], (radii / 2).tolist())
    assert abs(m1 - m2) / m1 <= 1e-6


def test_morrey_validation():
    with pytest.raises(ValueError):
        formbound.morrey_norm(drifts.zero(3, 1.0), -0.1, [np.zeros(3)], [0.5])
    with pytest.raises(ValueError):
        formbound.morrey_norm(drifts.zero(3, 1.0), 0.1, [], [0.5])


# -- weak Lebesgue norm ------------------------------------------------------

def test_weak_norm_zero():
    assert formbound.weak_ld_norm(drifts.zero(3, 2.0), [0.5, 1.0]) == 0.0


def test_weak_norm_inverse_radius_oracle():
    # |b| = 1/|x| on the plateau: s |{1/|x| > s}|^{1/3} = (4 pi / 3)^{1/3}
    spec = drifts.hardy_attractor(1.0, 3, 8.0)
    oracle = (4.0 * math.pi / 3.0) ** (1.0 / 3.0)
    got = formbound.weak_ld_norm(spec, [0.5, 1.0, 2.0])
    assert got == pytest.approx(oracle, rel=1e-3)


def test_weak_norm_scaling():
    spec = drifts.hardy_attractor(1.0, 3, 8.0)
    base = formbound.weak_ld_norm(spec, [1.0, 2.0])
    doubled = formbound.weak_ld_norm(drifts.scaled(2.0, spec), [2.0, 4.0])
    assert doubled == pytest.approx(2.0 * base, rel=1e-9)


@given(st.integers(0, 10**6))
@settings(max_examples=15, deadline=None)
def test_weak_dominated_by_lebesgue_same_grid(salt):
    gen = np.random.default_rng(salt)
    vals = gen.normal(size=(7, 7, 7, 3)) * gen.uniform(0.2, 3.0)
    spec = drifts.sampled_grid(vals, 1.0)
    levels = np.geomspace(0.05, 5.0, 9)
    weak, ld = formbound.weak_vs_lebesgue_on_grid(spec, levels, 1.2, n=20)
    assert weak <= ld + 1e-15


# -- family construction -----------------------------------------------------

def test_family_members_are_nondegenerate(family):
    for m in family.members:
        assert np.isfinite(m.l2_norm_sq) and m.l2_norm_sq > 0
        assert np.isfinite(m.grad_norm_sq) and m.grad_norm_sq > 0


def test_report_serialization(family):
    rep = formbound.estimate_form_bound(
        drifts.hardy_attractor(0.25, 3, 2.0), family)
    doc = rep.to_dict()
    assert doc["delta_hat"] == rep.delta_hat
    assert len(doc["quotients"]) == len(rep.quotients)
    assert doc["argmax"]["member"] == rep.argmax_id[0]
