import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbdrift import drifts, formbound, mollify
from fbdrift.mollify import MollifySchedule


def test_truncation_of_zero_is_zero():
    z = drifts.zero(3, 1.0)
    assert mollify.cutoff_by_level(z, 5.0).kind == "zero"


def test_truncation_above_sup_is_identity_on_plateau():
    b = drifts.hardy_attractor(1.0, 3, 2.0)
    bm = mollify.cutoff_by_level(b, 1000.0)   # |b| <= 1/0.001 only below r=1e-3
    pts = np.array([[0.5, 0.0, 0.0], [0.0, 0.8, 0.0]])
    assert np.array_equal(drifts.eval_drift(bm, 0.0, pts),
                          drifts.eval_drift(b, 0.0, pts))


def test_truncation_zeroes_inner_ball():
    # |b| = 1/r > 10 exactly when r < 0.1
    b = drifts.hardy_attractor(1.0, 3, 2.0)
    bm = mollify.cutoff_by_level(b, 10.0)
    inside = np.array([[0.05, 0.0, 0.0], [0.0, 0.0, 0.09]])
    outside = np.array([[0.11, 0.0, 0.0]])
    assert np.all(drifts.eval_drift(bm, 0.0, inside) == 0.0)
    assert np.linalg.norm(drifts.eval_drift(bm, 0.0, outside)) > 0.0


def test_mollify_of_zero_is_zero():
    z = drifts.zero(3, 1.0)
    assert mollify.friedrichs_mollify(z, 0.1).kind == "zero"


def test_kernel_unit_mass_and_symmetry():
    for with_time in (False, True):
        offs, wts = mollify.kernel_nodes(3, 6, with_time=with_time)
        assert wts.sum() == pytest.approx(1.0, abs=1e-14)
        # odd moments vanish by node symmetry
        assert np.allclose(offs.T @ wts, 0.0, atol=1e-15)


def test_mollified_linear_exact_on_plateau():
    A = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.5], [0.0, 0.0, 2.0]])
    lin = drifts.linear(A, radius=10.0)
    bm = mollify.friedrichs_mollify(lin, 0.05)
    pts = np.array([[0.5, 0.2, -0.3], [1.0, -1.0, 0.5]])
    got = drifts.eval_drift(bm, 0.0, pts)
    assert np.allclose(got, pts @ A.T, atol=1e-12)


def test_truncation_error_matches_analytic():
    # || 1_m b - b ||_{L^2}^2 = 4 pi c^3 / m for the attracting field
    c = 1.0
    b = drifts.hardy_attractor(c, 3, 2.0)
    for m in (10.0, 100.0):
        dist2 = mollify.l2_distance(mollify.cutoff_by_level(b, m), b, 2.0) ** 2
        assert dist2 == pytest.approx(4 * math.pi * c**3 / m, rel=0.02)


@given(st.floats(2.0, 50.0), st.floats(0.01, 0.2), st.floats(0.3, 1.0))
@settings(max_examples=20, deadline=None)
def test_sup_bound_of_level(m, eps, c_m):
    bm = mollify.mollify_spec(drifts.hardy_attractor(1.0, 3, 2.0), m, eps, c_m)
    sup = mollify.sup_norm(bm, n_radial=50_000)
    assert sup <= c_m * m * (1 + 1e-9)


def test_support_inflates_by_width():
    b = drifts.hardy_attractor(1.0, 3, 2.0)
    bm = mollify.mollify_spec(b, 10.0, 0.1, 1.0)
    assert drifts.support_radius(bm) == pytest.approx(2.1)
    shell = np.array([[2.2, 0.0, 0.0]])
    assert np.all(drifts.eval_drift(bm, 0.0, shell) == 0.0)


def test_radial_profile_matches_direct_kernel_sum():
    # cross-check the tabulated fast path against an independently coded
    # kernel-node quadrature; points sit away from the truncation kink,
    # where the tensor rule's angular anisotropy is negligible
    b = drifts.hardy_attractor(0.8, 3, 2.0)
    m, eps, c_m = 12.0, 0.07, 0.9
    bm = mollify.mollify_spec(b, m, eps, c_m)
    pts = np.array([[0.3, 0.1, -0.2], [0.5, -0.25, 0.3], [1.1, -0.6, 0.4]])
    fast = drifts.eval_drift(bm, 0.0, pts)
    offs, wts = mollify.kernel_nodes(3, 6, with_time=False)
    direct = np.zeros_like(pts)
    for off, w in zip(offs, wts):
        v = drifts.eval_drift(b, 0.0, pts - eps * off)
        mag = np.linalg.norm(v, axis=-1)
        v = np.where((mag <= m)[:, None], v, 0.0)
        direct += w * v
    direct *= c_m
    assert np.max(np.abs(fast - direct)) < 2e-3


def test_schedule_validation():
    with pytest.raises(ValueError):
        MollifySchedule((2.0, 1.0), (0.1, 0.05), (0.5, 0.6))     # m not increasing
    with pytest.raises(ValueError):
        MollifySchedule((1.0, 2.0), (0.05, 0.1), (0.5, 0.6))     # eps not decreasing
    with pytest.raises(ValueError):
        MollifySchedule((1.0, 2.0), (0.1, 0.05), (0.5, 1.2))     # c_m > 1
    with pytest.raises(ValueError):
        MollifySchedule((), (), ())


def test_default_schedule_shape():
    sched = MollifySchedule.default(4)
    assert list(sched.levels) == [2.0, 4.0, 8.0, 16.0]
    assert all(a > b for a, b in zip(sched.widths, sched.widths[1:]))
    assert all(0 < c <= 1 for c in sched.mass_scales)
    assert MollifySchedule.from_dict(sched.to_dict()).rows() == sched.rows()


def test_build_sequence_zero_field():
    rep = mollify.build_approx_sequence(
        drifts.zero(3, 1.0), MollifySchedule((2.0, 4.0), (0.1, 0.05), (0.5, 0.75),
                                             tolerance=1e-12),
        box_half_width=1.0, family=formbound.radial_family(3, 1.0))
    assert all(r.l2_distance == 0.0 for r in rep.rows)
    assert rep.converged


def test_build_sequence_smooth_field_distance_tracks_width():
    # once m exceeds sup|b|, the only error is the smoothing itself
    lin = drifts.linear(-0.5 * np.eye(3), radius=2.0)
    sched = MollifySchedule((10.0, 20.0, 40.0), (0.2, 0.1, 0.05),
                            (1.0, 1.0, 1.0), tolerance=0.2)
    fam = formbound.radial_family(3, 2.0)
    rep = mollify.build_approx_sequence(lin, sched, 2.5, family=fam)
    dists = [r.l2_distance for r in rep.rows]
    assert dists[0] > dists[1] > dists[2]
    # O(eps) or better: halving eps at least halves the distance (with slack)
    assert dists[1] <= 0.75 * dists[0]
    assert dists[2] <= 0.75 * dists[1]
    assert rep.converged


def test_build_sequence_form_bound_preserved():
    b = drifts.hardy_attractor(1.0, 3, 2.0)
    sched = MollifySchedule((8.0, 32.0), (0.05, 0.02), (0.9, 0.97),
                            tolerance=1.5)
    fam = formbound.radial_family(3, 2.0)
    rep = mollify.build_approx_sequence(b, sched, 2.0, family=fam,
                                        form_bound_slack=0.01)
    assert rep.all_form_bounds_ok
    assert all(r.delta_hat <= rep.base_delta_hat * 1.01 for r in rep.rows)


def test_non_monotone_distances_reported_not_fatal():
    # widths chosen so the sequence is not monotone; only the final level
    # must meet the tolerance
    b = drifts.hardy_attractor(1.0, 3, 2.0)
    sched = MollifySchedule((4.0, 100.0), (0.3, 1e-4), (0.6, 0.99),
                            tolerance=0.6)
    fam = formbound.radial_family(3, 2.0)
    rep = mollify.build_approx_sequence(b, sched, 2.0, family=fam)
    assert rep.converged  # final distance small even if earlier rows are odd


def test_constructor_validation():
    b = drifts.hardy_attractor(1.0, 3, 2.0)
    with pytest.raises(ValueError):
        mollify.cutoff_by_level(b, -1.0)
    with pytest.raises(ValueError):
        mollify.friedrichs_mollify(b, 0.0)
