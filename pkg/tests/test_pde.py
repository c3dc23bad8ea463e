import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from fbdrift import drifts, formbound, mollify, pde
from fbdrift.drifts import TimeEnvelope
from fbdrift.errors import InfeasibleError


def small_grid(n=21, L=2.0):
    return pde.GridSettings(half_width=L, n=n)


def test_zero_source_zero_solution():
    sol = pde.solve_terminal(None, None, 0.0, 0.2, small_grid())
    assert all(np.all(f == 0.0) for f in sol.frames)
    assert pde.energy_identity_residual(sol) == 0.0


def test_spatially_constant_source():
    # u(t, x) = int_t^T1 g(s) ds away from the boundary, for any drift
    b = drifts.linear(-0.4 * np.eye(3), radius=1.0)
    g = lambda t, pts: np.full(pts.shape[:-1], np.cos(3.0 * t))
    sol = pde.solve_terminal(b, g, 0.0, 0.2, small_grid(n=17), frame_stride=10**9)
    exact = (math.sin(0.6) - math.sin(0.0)) / 3.0
    center = sol.frames[-1][8, 8, 8]
    assert abs(center - exact) <= 4.0 * sol.dt


def test_terminal_condition_is_exact():
    g = lambda t, pts: np.ones(pts.shape[:-1])
    sol = pde.solve_terminal(None, g, 0.0, 0.1, small_grid(n=13), frame_stride=1)
    assert np.all(sol.frames[0] == 0.0)          # march start = terminal time
    assert sol.physical_times[0] == pytest.approx(0.1)


def test_stability_bound_rejects_large_dt():
    with pytest.raises(ValueError):
        pde.solve_terminal(None, None, 0.0, 0.2, small_grid(n=33), dt=0.1)


def test_discrete_maximum_principle():
    # nonnegative source, advection, explicit diffusion: u stays >= 0 exactly
    b = drifts.linear(np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0],
                                [0.5, 0.0, -1.0]]), radius=1.5)

    def g(t, pts):
        r2 = np.sum(pts * pts, axis=-1)
        return np.exp(-r2) * (1.0 + 0.5 * math.sin(5 * t))

    sol = pde.solve_terminal(b, g, 0.0, 0.15, small_grid(n=17), frame_stride=1)
    assert all(f.min() >= 0.0 for f in sol.frames)


def test_energy_residual_refinement():
    w, t1 = 0.5, 0.2

    def g(t, pts):
        r2 = np.sum(pts * pts, axis=-1)
        return (t1 - t) * np.exp(-r2 / (2 * w * w))

    res = []
    for n in (13, 25):
        sol = pde.solve_terminal(None, g, 0.0, t1, small_grid(n=n),
                                 frame_stride=10**9)
        res.append(pde.energy_identity_residual(sol))
    assert res[1] <= res[0] / 2.5


def test_reversed_problem_indicator_structure():
    # G vanishes strictly beyond the reversed window
    marker = lambda t, pts: np.full(pts.shape[:-1], 1.0 + t)
    B_at, G = pde.build_reversed_problem(None, marker, t0=0.3, t1=0.5, )
    pts = np.zeros((2, 3))
    assert G(0.1, pts) is not None
    assert G(0.19999, pts) is not None
    assert G(0.21, pts) is None
    # time-constant drift replays to the same physical times
    assert B_at(0.05) == pytest.approx(0.45)
    assert B_at(0.35) == pytest.approx(0.15)


def test_reversal_identity_with_time_dependent_drift():
    env = TimeEnvelope("cosine", value=1.0, amplitude=0.5, omega=4.0)
    b = drifts.linear(-0.5 * np.eye(3), radius=1.5, envelope=env)

    def g1(t, pts):
        r2 = np.sum(pts * pts, axis=-1)
        return (1.0 + math.sin(2 * t)) * np.exp(-r2)

    err = pde.reversal_identity_error(b, g1, 0.1, 0.3, small_grid(n=17))
    # both marches share the stepper; the only mismatch is coefficient
    # sampling at reflected times, an O(dt) effect
    assert err <= 1e-10


def test_cascade_zero_sources_degenerate():
    z = pde.ScalarBump(0.0, 0.3, 3, 1.0)
    cfg = pde.CascadeConfig(drift=drifts.zero(3, 1.0), sources=[z, z],
                            alphas=[1, 2], t0=0.0, t1=0.2,
                            grid=small_grid(n=13), delta_hat=0.0, nu_hat=0.0)
    res = pde.run_cascade(cfg)
    assert res.degenerate
    assert res.u2_terminal == 0.0
    assert all(e == 0.0 for e in res.energies.values())


def test_cascade_infeasible_constants():
    src = pde.ScalarBump(0.5, 0.3, 3, 1.0)
    cfg = pde.CascadeConfig(drift=drifts.zero(3, 1.0), sources=[src],
                            alphas=[1], t0=0.0, t1=0.1, grid=small_grid(n=13),
                            delta_hat=0.04, nu_hat=0.01, delta_max=0.05,
                            nu_max=0.05, eps_q=0.1, beta_q=0.1)
    with pytest.raises(InfeasibleError):
        pde.run_cascade(cfg)


def test_cascade_smallness_threshold_checked():
    src = pde.ScalarBump(0.5, 0.3, 3, 1.0)
    cfg = pde.CascadeConfig(drift=drifts.zero(3, 1.0), sources=[src],
                            alphas=[1], t0=0.0, t1=0.1, grid=small_grid(n=13),
                            delta_hat=0.2, nu_hat=0.01, delta_max=0.05)
    with pytest.raises(InfeasibleError):
        pde.run_cascade(cfg)


def test_cascade_heat_kernel_oracle():
    # depth 1 with zero drift: <U^2(T1)> equals the closed-form heat
    # accumulation of the source gradient
    w, amp, span = 0.3, 0.4, 0.2
    src = pde.ScalarBump(amp, w, 3, 1.0)
    cfg = pde.CascadeConfig(drift=drifts.zero(3, 1.0), sources=[src],
                            alphas=[1], t0=0.0, t1=span,
                            grid=pde.GridSettings(half_width=2.2, n=29),
                            delta_hat=0.0, nu_hat=None, nu_max=0.05)
    res = pde.run_cascade(cfg)

    n_tau, n_r = 400, 3000
    taus = np.linspace(0, span, n_tau + 1)
    taus = 0.5 * (taus[1:] + taus[:-1])
    dtau = span / n_tau
    s2 = w * w + taus
    ampl = amp * (w * w / s2) ** 1.5
    r = np.linspace(1e-6, 10.0, n_r)
    dphi = np.zeros_like(r)
    for a, s in zip(ampl, s2):
        dphi += dtau * a * (-r / s) * np.exp(-r * r / (2 * s))
    oracle = 4 * math.pi * np.trapezoid(dphi**2 * r * r, r) / 3.0
    assert res.u2_terminal == pytest.approx(oracle, rel=0.03)


def test_cascade_contraction_bound_monotone_in_delta():
    fam = formbound.radial_family(3, 2.0)
    base = mollify.mollify_spec(drifts.hardy_attractor(0.05, 3, 1.0), 4.0, 0.1, 1.0)
    d0 = formbound.estimate_form_bound(base, fam).delta_hat
    src = pde.ScalarBump(0.3, 0.35, 3, 1.0)
    k_bounds = []
    for target in (0.01, 0.04):
        cfg = pde.CascadeConfig(
            drift=drifts.scaled(math.sqrt(target / d0), base), sources=[src, src],
            alphas=[1, 2], t0=0.0, t1=0.15, grid=small_grid(n=15),
            nu_hat=0.01, delta_max=0.05, family=fam)
        k_bounds.append(pde.run_cascade(cfg).k_bound)
    assert k_bounds[0] <= k_bounds[1]


def test_product_estimate_degenerate_flag():
    z = pde.ScalarBump(0.0, 0.3, 3, 1.0)
    cfg = pde.CascadeConfig(drift=drifts.zero(3, 1.0), sources=[z],
                            alphas=[1], t0=0.0, t1=0.2, grid=small_grid(n=13),
                            delta_hat=0.0, nu_hat=0.0)
    rep = pde.product_estimate_check(cfg, [0.1, 0.2])
    assert rep.degenerate
    assert rep.slope_in_length is None


def test_weighted_norm_zero_field():
    assert pde.weighted_norm_rho(drifts.zero(3, 1.0), 0.0, 1.0) == 0.0


class _IndicatorBall:
    """|f| = 1 on the unit ball, time-constant (formbound protocol)."""

    dimension = 3
    support_radius = 1.0
    has_inverse_radius_head = False

    def eval_magnitude(self, t, X):
        return (np.sum(X * X, axis=-1) <= 1.0).astype(float)

    def magnitude_profile(self, t):
        return lambda r: (np.asarray(r, float) <= 1.0).astype(float)


def test_weighted_norm_indicator_oracle():
    # theta=2, kappa=0.01, centered lattice point dominates:
    # value^2 = int_{B_1} (1 + 0.01 |x|^2)^{-2} dx  over a unit time window
    val = pde.weighted_norm_rho(_IndicatorBall(), 0.0, 1.0, kappa=0.01,
                                theta=2.0, n_grid=64)
    oracle2, _ = quad(lambda r: (1 + 0.01 * r * r) ** (-2) * 4 * math.pi * r * r,
                      0.0, 1.0)
    assert val == pytest.approx(math.sqrt(oracle2), rel=5e-3)


def test_weighted_norm_centered_beats_far_center():
    # rho_z decays with |x - z|: the origin cell dominates any far center
    f = _IndicatorBall()
    full = pde.weighted_norm_rho(f, 0.0, 1.0, kappa=0.01, theta=2.0, n_grid=32,
                                 lattice_half_extent=2.0)
    import numpy as _np
    from fbdrift.quadrature import box_grid
    pts, cell = box_grid(1.0, 32, 3)
    sq = f.eval_magnitude(0.0, pts) ** 2
    far = math.sqrt(float(_np.sum(
        sq * (1 + 0.01 * _np.sum((pts - _np.array([2.0, 2.0, 2.0])) ** 2,
                                 axis=-1)) ** (-2.0)) * cell))
    assert far <= full


def test_weighted_norm_validation():
    with pytest.raises(ValueError):
        pde.weighted_norm_rho(_IndicatorBall(), 0.0, 1.0, theta=1.0)  # <= d/2
    with pytest.raises(ValueError):
        pde.weighted_norm_rho(_IndicatorBall(), 0.0, 1.0, kappa=-1.0)


def test_grid_field_export_roundtrip(tmp_path):
    field = pde.GridField(np.random.default_rng(0).normal(size=(9, 9, 9)),
                          2.0, 0.5, 0.25)
    prefix = str(tmp_path / "field")
    pde.save_grid_field(prefix, field)
    back = pde.load_grid_field(prefix)
    assert np.array_equal(back.values, field.values)
    assert back.half_width == field.half_width
    assert back.time == field.time


def test_suggest_half_width():
    L = pde.suggest_half_width(1.0, 0.4, safety=2.0)
    assert L == pytest.approx(1.0 + 2.0 * math.sqrt(0.8))


@given(st.sampled_from([0.05, 0.1, 0.2, 0.25, 0.4]),
       st.sampled_from([0.0, 0.05, 0.1, 0.2, 0.3]))
@settings(max_examples=25, deadline=None)
def test_aligned_dt_divides_both(span, t0):
    dt = pde._aligned_dt(t0, t0 + span, 0.01)
    assert dt <= 0.01 + 1e-15
    assert abs(round(span / dt) - span / dt) < 1e-6
    if t0 > 0:
        assert abs(round(t0 / dt) - t0 / dt) < 1e-6
