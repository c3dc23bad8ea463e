import math

import numpy as np
import pytest

from fbdrift import drifts, flows, mollify, sde
from fbdrift.errors import ContractError


@pytest.fixture(scope="module")
def linear_ensemble():
    lin = drifts.linear(-np.eye(3), radius=8.0)
    ens = sde.simulate_ensemble(lin, np.zeros(3), 0.0, 0.3, 1e-3, 12, seed=5)
    return lin, ens


def test_zero_drift_flow_is_identity():
    z = drifts.zero(3, 1.0)
    ens = sde.simulate_ensemble(z, np.zeros(3), 0.0, 0.1, 0.01, 6, seed=1)
    fe = flows.variational_flow(z, ens)
    assert np.array_equal(fe.flow(), np.broadcast_to(np.eye(3),
                                                     fe.flow().shape))


def test_linear_flow_matches_exponential(linear_ensemble):
    lin, ens = linear_ensemble
    fe = flows.variational_flow(lin, ens)
    J_end = fe.flow()[0, -1]
    assert np.max(np.abs(J_end - math.exp(-0.3) * np.eye(3))) <= 5e-3


def test_malliavin_zero_start_bitwise_equals_flow(linear_ensemble):
    lin, ens = linear_ensemble
    fe = flows.variational_flow(lin, ens)
    fm = flows.malliavin_derivative(lin, ens, [0.0])
    assert np.array_equal(fm.jacobians[0.0], fe.flow())


def test_malliavin_identity_at_start(linear_ensemble):
    lin, ens = linear_ensemble
    fm = flows.malliavin_derivative(lin, ens, [0.15], snapshot_indices=[150, 300])
    D = fm.jacobians[0.15]
    assert np.array_equal(D[:, 0], np.broadcast_to(np.eye(3), D[:, 0].shape))
    assert np.max(np.abs(D[0, -1] - math.exp(-0.15) * np.eye(3))) <= 5e-3


def test_malliavin_off_grid_rejected(linear_ensemble):
    lin, ens = linear_ensemble
    with pytest.raises(ValueError):
        flows.malliavin_derivative(lin, ens, [0.0505])


def test_flow_semigroup_property():
    # J_{0,t} = J_{u,t} J_{0,u} within O(dt); J_{u,t} is the recursion
    # restarted at u, which is exactly the noise-sensitivity family
    spec = mollify.mollify_spec(drifts.hardy_attractor(0.3, 3, 2.0), 6.0, 0.15, 1.0)
    dt = 1e-3
    ens = sde.simulate_ensemble(spec, np.array([0.4, 0.1, 0.0]), 0.0, 0.2, dt,
                                16, seed=8)
    fe = flows.variational_flow(spec, ens)
    fm = flows.malliavin_derivative(spec, ens, [0.1])
    k_u, k_t = 100, 200
    J0u = fe.flow()[:, k_u]
    J0t = fe.flow()[:, k_t]
    Jut = fm.jacobians[0.1][:, -1]
    recomposed = np.einsum("pij,pjk->pik", Jut, J0u)
    assert np.max(np.abs(recomposed - J0t)) <= 20.0 * dt


def test_flow_requires_stored_paths():
    z = drifts.zero(3, 1.0)
    ens = sde.simulate_ensemble(z, np.zeros(3), 0.0, 0.1, 0.01, 4, seed=0,
                                store_paths=False)
    with pytest.raises(ContractError):
        flows.variational_flow(z, ens)


def test_mixed_norm_conventions():
    dev = np.zeros((4, 10, 3, 3))
    assert flows.mixed_norm(dev, 2) == 0.0
    dev[:, :, 0, 0] = 2.0      # frobenius 2 for every sample
    # inner E|.|^r = 2^r; spatial sum_s w (2^r)^2 -> (4 w 2^{2r})^{1/2r}
    val = flows.mixed_norm(dev, 2, cell_weight=0.5)
    assert val == pytest.approx((4 * 0.5 * 2.0**4) ** (1.0 / 4.0))


def test_flow_norm_statistics_zero_drift_degenerate():
    z = drifts.zero(3, 1.0)
    ens = sde.simulate_ensemble(z, np.zeros(3), 0.0, 0.1, 0.01, 8, seed=3)
    fe = flows.variational_flow(z, ens)
    out = flows.flow_norm_statistics(fe, r=1)
    assert out["flow"].degenerate


def test_flow_decay_study_smoke():
    spec = drifts.linear(-0.5 * np.eye(3), radius=6.0)
    starts = flows.cubic_lattice(0.6, 2)
    rep = flows.flow_decay_study(spec, starts, 50, 0.2, 2e-3, seed=11,
                                 r_values=(1, 2), s_list=[0.05, 0.1],
                                 n_snapshots=6)
    assert not rep.degenerate
    for r in (1, 2):
        curve = rep.norms[r]
        envelope = rep.envelopes[r] * rep.times ** (1.0 / (2 * r))
        assert np.all(curve <= envelope * (1 + 1e-9))
        assert curve[0] < curve[-1]
        assert rep.ds_curves[r]["gaps"].size > 0
        assert rep.ds_pair_curves[r]["gaps"].size == 1   # one (s, s') pair
    doc = rep.to_dict()
    assert "envelopes" in doc and "norms" in doc


def test_decay_curve_fit_shapes():
    gaps = np.array([0.1, 0.2, 0.4])
    norms = np.array([0.01, 0.02, 0.04])
    cur = flows._fit_curve(gaps, norms, 0.25)
    assert cur.envelope_constant == pytest.approx(
        float(np.max(norms / gaps**0.25)))
    assert cur.slope == pytest.approx(1.0, abs=1e-9)
    zero = flows._fit_curve(gaps, np.zeros(3), 0.25)
    assert zero.degenerate
