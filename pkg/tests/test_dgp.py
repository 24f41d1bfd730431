import warnings

import numpy as np
import pytest

from bnpmed.dgp import (MediatorCorrParams, ScenarioSpec, TruthEstimands, approximate_truth,
                        build_mediator_covariance, generate_cluster_frame,
                        generate_potential_mediators, group_probabilities, mediator_means,
                        outcome_locations, simulate, truth_from_frame)
from bnpmed.estimands import ESTIMANDS
from bnpmed.stochastic import ParameterError, make_rng

N2 = np.array([
    [1.00, 0.08, 0.05, 0.05, 0.10, 0.00, 0.00, 0.00],
    [0.08, 1.00, 0.05, 0.05, 0.00, 0.10, 0.00, 0.00],
    [0.05, 0.05, 1.00, 0.08, 0.00, 0.00, 0.10, 0.00],
    [0.05, 0.05, 0.08, 1.00, 0.00, 0.00, 0.00, 0.10],
    [0.10, 0.00, 0.00, 0.00, 1.00, 0.08, 0.05, 0.05],
    [0.00, 0.10, 0.00, 0.00, 0.08, 1.00, 0.05, 0.05],
    [0.00, 0.00, 0.10, 0.00, 0.05, 0.05, 1.00, 0.08],
    [0.00, 0.00, 0.00, 0.10, 0.05, 0.05, 0.08, 1.00],
])


def test_covariance_literal_and_structure():
    assert np.array_equal(build_mediator_covariance(2, MediatorCorrParams()), N2)
    c3 = build_mediator_covariance(3, MediatorCorrParams(sigma2=2.0))
    assert np.array_equal(c3[8:12, 0:4], c3[4:8, 0:4])
    assert c3[0, 0] == 2.0 and c3[0, 4] == pytest.approx(0.2)
    with pytest.raises(ParameterError):
        build_mediator_covariance(50, MediatorCorrParams(rho0=-0.5))


def test_heterogeneous_correlations_warn():
    with pytest.warns(UserWarning, match="homogeneity"):
        MediatorCorrParams(alpha0=0.05, alpha2=0.1)


def test_mediator_means_by_hand():
    spec = ScenarioSpec()
    frame = generate_cluster_frame(spec, make_rng(0), n_clusters=1)
    frame.x1[:] = 1.0
    frame.x2[:] = -1.0
    frame.v[:] = 2.0
    n = frame.n[0]
    m1, m2 = mediator_means(frame, 1)
    want = 1.5 * (-2 + 2 + 1.0 * n / 50 + 0.5 + 0.5 + 1.0)
    np.testing.assert_allclose(m1, want)
    np.testing.assert_allclose(m2, -want)
    m1n, m2n = mediator_means(frame, 0, "nonlinear")
    want0 = -1 + 0.5 * n / 50 + 1 + 1 + 1 + 1 - 1 + 1.0
    np.testing.assert_allclose(m1n, want0)
    np.testing.assert_allclose(m2n, -0.5 * want0)


def test_outcome_locations_by_hand():
    th = outcome_locations(1.0, 2.0, 1.5, -1.0, -0.5, 0.4, 0.2, 1.0, 50.0)
    pos = 1 + 1 + 1.0 + (0.75 + 0.25 + 2 + 1) + 0.2
    assert th[0] == pytest.approx(pos - 0.1 + 0.5)
    assert th[1] == pytest.approx(-pos - 0.1 + 0.5)
    assert th.shape == (8,)
    np.testing.assert_allclose(th[4:], -1.5 * th[:4])
    zero = outcome_locations(1.0, 2.0, 1.5, -1.0, -0.5, 0.4, 0.2, 1.0, 50.0, null_effects=True)
    assert zero[0] == pytest.approx(1 + 0.5 + 0.2 - 0.1 + 0.5)


def test_group_probabilities():
    p2 = group_probabilities(ScenarioSpec(scenario=2), np.array([20, 60]))
    np.testing.assert_allclose(p2, [[0.2, 0.3, 0.5]] * 2)
    p3 = group_probabilities(ScenarioSpec(scenario=3), np.array([20, 60]))
    np.testing.assert_allclose(p3.sum(1), 1.0)
    np.testing.assert_allclose(p3[1], [0.8, 0.0, 0.2])
    with pytest.raises(ParameterError):
        group_probabilities(ScenarioSpec(scenario=3), np.array([100]))
    with pytest.raises(ParameterError):
        group_probabilities(ScenarioSpec(scenario=1), np.array([20]))


def test_spec_validation_and_roundtrip():
    with pytest.raises(ParameterError):
        ScenarioSpec(scenario=4)
    with pytest.raises(ParameterError):
        ScenarioSpec(error_family="cauchy")
    with pytest.raises(ParameterError):
        ScenarioSpec(size_range=(1, 5))
    s = ScenarioSpec(scenario=2, corr=MediatorCorrParams(rho0=0.2))
    assert ScenarioSpec.from_dict(s.to_dict()) == s


@pytest.mark.parametrize("scenario,errors,binary", [(1, "normal", False), (2, "t", False),
                                                    (3, "normal", True)])
def test_simulate(scenario, errors, binary):
    spec = ScenarioSpec(scenario=scenario, n_clusters=15, error_family=errors,
                        mediator1_binary=binary)
    ds, frame, pm = simulate(spec, make_rng(1, "sim"))
    ds2, _, _ = simulate(spec, make_rng(1, "sim"))
    assert np.array_equal(ds.flat.y, ds2.flat.y)
    assert ds.n_clusters == 15 and ds.d_x == 2 and ds.d_v == 1
    assert np.all((ds.flat.sizes >= 20) & (ds.flat.sizes <= 60))
    a_u = ds.flat.a[ds.flat.cluster_of]
    np.testing.assert_array_equal(ds.flat.m1, np.where(a_u == 1, pm["m1_1"], pm["m1_0"]))
    if binary:
        assert set(np.unique(ds.flat.m1)) <= {0.0, 1.0}


def test_null_effects_truth_is_zero():
    spec = ScenarioSpec(null_effects=True)
    tr = approximate_truth(spec, 2000, make_rng(0))
    np.testing.assert_allclose(list(tr.values.values()), 0.0, atol=1e-12)


def test_scenario1_truth_matches_closed_form():
    # linear DGP: TE, NIE... follow from E[N] = 40 and E[1/N] over N ~ U{20..60}
    inv_n = np.mean(1.0 / np.arange(20, 61))
    eime1 = 1.5 * (2.005 + 0.4 + inv_n)
    want = {"TE": 12.2, "NDE": 1.4, "NIE": 10.8, "EIE1": 5.4, "EIE2": 5.4, "INT": 0.0,
            "EIME1": eime1, "ESME1": 5.4 - eime1, "EIME2": eime1, "ESME2": 5.4 - eime1}
    tr = approximate_truth(ScenarioSpec(), 40_000, make_rng(3, "truth"))
    for k in ESTIMANDS:
        assert abs(tr.values[k] - want[k]) <= 5 * tr.mc_se[k] + 1e-9, k
    back = TruthEstimands.from_dict(tr.to_dict())
    assert back.values == tr.values


def test_truth_per_cluster_identities():
    spec = ScenarioSpec(scenario=2)
    rng = make_rng(4)
    frame = generate_cluster_frame(spec, rng, n_clusters=50)
    pm = generate_potential_mediators(frame, spec.corr, rng)
    est = truth_from_frame(frame, pm, spec)
    e = dict(zip(ESTIMANDS, est.T))
    np.testing.assert_allclose(e["TE"], e["NIE"] + e["NDE"], atol=1e-12)
    np.testing.assert_allclose(e["EIE1"], e["ESME1"] + e["EIME1"], atol=1e-12)


def test_general_correlation_path_matches_covariance():
    # M not PSD forces the per-cluster Cholesky path
    corr = MediatorCorrParams(rho0=-0.02)
    spec = ScenarioSpec(size_range=(3, 3))
    frame = generate_cluster_frame(spec, make_rng(0), n_clusters=30_000)
    pm = generate_potential_mediators(frame, corr, make_rng(1))
    m1, _ = mediator_means(frame, 1)
    e = (pm["m1_1"] - m1).reshape(-1, 3)
    assert np.corrcoef(e[:, 0], e[:, 1])[0, 1] == pytest.approx(-0.02, abs=0.015)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        MediatorCorrParams()
