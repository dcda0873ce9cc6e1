import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import cumulative_trapezoid, trapezoid

from cbilab.coefficients import (
    aggregate_covariance,
    branching_covariances,
    derive,
    effective_branching,
    immigration_mean,
    integrated_covariance,
    limit_sde_coefficients,
    noise_matrix_V,
    psd_sqrt,
    unit_time_drift,
)
from cbilab.errors import NegativeEigenvalue, NotCritical, NotSymmetric
from cbilab.model import AtomMeasure, ModelSpec, load_model
from cbilab.moments import mean_at

from conftest import random_critical_model

PI = np.full((2, 2), 0.5)


def ref_exp(s):
    """exp(s [[-1,1],[1,-1]]) in closed form."""
    return PI + np.exp(-2 * s) * (np.eye(2) - PI)


def scalar_model(**kw):
    base = dict(d=1, c=[0.0], beta=[0.0], B=[[0.0]], nu=AtomMeasure.zero(1),
                mu=(AtomMeasure.zero(1),))
    base.update(kw)
    return ModelSpec(**base)


def test_effective_branching_without_mu_is_B(fixture_path):
    m = load_model(fixture_path("asymmetric"))
    np.testing.assert_array_equal(effective_branching(m), m.B)
    np.testing.assert_array_equal(immigration_mean(m), m.beta)


def test_effective_branching_single_atom():
    m = scalar_model(B=[[-1.0]], mu=(AtomMeasure([[2.0]], [0.5]),))
    assert effective_branching(m)[0, 0] == pytest.approx(-0.5, abs=1e-15)


def test_effective_branching_pure_jump():
    mu = (AtomMeasure([[0.5, 1.0], [2.0, 0.0]], [1.0, 0.5]),
          AtomMeasure([[0.3, 3.0]], [2.0]))
    m = ModelSpec(d=2, c=[0, 0], beta=[0, 0], B=np.zeros((2, 2)), nu=AtomMeasure.zero(2), mu=mu)
    expected = np.array([
        [1.0 * 0.0 + 0.5 * 1.0, 2.0 * 0.3],
        [1.0 * 1.0 + 0.5 * 0.0, 2.0 * 2.0],
    ])
    np.testing.assert_allclose(effective_branching(m), expected, atol=1e-15)


def test_pure_jump_fixture(fixture_path):
    coef = derive(load_model(fixture_path("pure_jump")))
    assert coef.Btilde.tolist() == [[0.0]]
    assert coef.betatilde[0] == pytest.approx(1.0)
    assert coef.Cbar[0, 0] == pytest.approx(1.5)


def test_immigration_mean_reference(reference):
    np.testing.assert_allclose(immigration_mean(reference), [1.5, 0.5], atol=1e-15)


def test_immigration_mean_zero():
    m = scalar_model()
    assert immigration_mean(m).tolist() == [0.0]
    assert limit_sde_coefficients(immigration_mean(m), np.eye(1), [1.0])[0] == 0.0


def test_branching_covariances_examples(reference):
    C1, C2 = branching_covariances(reference)
    assert C1.tolist() == [[1, 0], [0, 0]] and C2.tolist() == [[0, 0], [0, 1]]
    m = ModelSpec(d=2, c=[0, 0], beta=[0, 0], B=[[-1, 1], [1, -1]], nu=AtomMeasure.zero(2),
                  mu=(AtomMeasure([[1.0, 2.0]], [1.0]), AtomMeasure.zero(2)))
    C1, C2 = branching_covariances(m)
    assert C1.tolist() == [[1, 2], [2, 4]] and not C2.any()


def test_aggregate_covariance_reference(reference):
    coef = derive(reference)
    np.testing.assert_allclose(coef.Cbar, 0.5 * np.eye(2), atol=1e-12)
    assert not aggregate_covariance([np.zeros((2, 2))] * 2, [0.5, 0.5]).any()


def test_aggregate_covariance_half_sum():
    rng = np.random.default_rng(1)
    G1, G2 = rng.normal(size=(2, 2, 2))
    C1, C2 = G1 @ G1.T, G2 @ G2.T
    np.testing.assert_allclose(aggregate_covariance([C1, C2], [0.5, 0.5]), 0.5 * (C1 + C2),
                               atol=1e-12)


def test_cbar_zero_iff_no_branching_noise():
    rng = np.random.default_rng(2)
    for _ in range(30):
        spec = random_critical_model(rng, int(rng.integers(1, 4)))
        quiet = rng.random() < 0.5
        if quiet:
            spec = ModelSpec(d=spec.d, c=np.zeros(spec.d), beta=spec.beta, B=spec.B,
                             nu=spec.nu, mu=tuple(AtomMeasure.zero(spec.d) for _ in range(spec.d)))
        coef = derive(spec)
        assert (np.abs(coef.Cbar).max() == 0) == quiet


def test_reference_limit_coefficients(reference):
    coef = derive(reference)
    assert coef.a == pytest.approx(2.0, abs=1e-12)
    assert coef.b == pytest.approx(1.0, abs=1e-12)


def test_degenerate_limit(fixture_path):
    coef = derive(load_model(fixture_path("degenerate")))
    assert coef.b == 0.0 and coef.a == pytest.approx(2.0, abs=1e-12)


def test_unit_time_drift_identity_semigroup():
    bt = np.array([1.0, 2.0])
    np.testing.assert_allclose(unit_time_drift(None, np.zeros((2, 2)), bt), bt, atol=1e-14)


def test_unit_time_drift_closed_form(reference):
    coef = derive(reference)
    # int_0^1 exp(sB) ds = Pi + (1 - e^{-2})/2 (I - Pi)
    M = PI + 0.5 * (1 - np.exp(-2)) * (np.eye(2) - PI)
    np.testing.assert_allclose(coef.betatilde2, M @ coef.betatilde, atol=1e-14)
    assert coef.spectral.v @ coef.betatilde2 == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(coef.betatilde2, mean_at(reference, 1.0), atol=1e-12)


def test_integrated_covariance_trapezoid_oracle(reference):
    coef = derive(reference)
    s = np.linspace(0, 1, 10_001)
    u = coef.spectral.u
    vals = np.empty((len(s), 2, 2))
    for n, sn in enumerate(s):
        E, scal = ref_exp(sn), ref_exp(1 - sn) @ u
        vals[n] = sum(scal[k] * E @ coef.Ck[k] @ E.T for k in range(2))
    oracle = trapezoid(vals, s, axis=0)
    np.testing.assert_allclose(coef.Ctilde, oracle, atol=1e-8)
    v = coef.spectral.v
    assert v @ coef.Ctilde @ v == pytest.approx(1.0, abs=1e-10)


def test_integrated_covariance_identity_semigroup(fixture_path):
    coef = derive(load_model(fixture_path("single_type")))
    assert coef.Ctilde[0, 0] == pytest.approx(coef.Cbar[0, 0], abs=1e-13)
    assert coef.Cbar[0, 0] == pytest.approx(2.5, abs=1e-13)


def test_integrated_covariance_requires_criticality(fixture_path):
    m = load_model(fixture_path("supercritical"))
    coef = derive(m)
    assert coef.Ctilde is None and not coef.critical
    with pytest.raises(NotCritical):
        integrated_covariance(m, coef.Btilde, coef.Ck, coef.spectral.u)


def test_noise_matrix_zero_immigration():
    m = ModelSpec(d=2, c=[0.5, 0.5], beta=[0, 0], B=[[-1, 1], [1, -1]], nu=AtomMeasure.zero(2),
                  mu=(AtomMeasure.zero(2), AtomMeasure.zero(2)))
    coef = derive(m)
    assert np.abs(coef.V).max() == 0.0


def test_noise_matrix_single_atom():
    m = scalar_model(nu=AtomMeasure([[1.0]], [1.0]))
    coef = derive(m)
    assert coef.V[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_noise_matrix_nested_trapezoid_oracle(reference):
    coef = derive(reference)
    n = 4000
    g = np.linspace(0, 1, n + 1)
    # inner(1 - u) on the same grid: cumulative integral of exp(vB) betatilde
    f = np.array([ref_exp(x) @ coef.betatilde for x in g])
    inner = cumulative_trapezoid(f, g, axis=0, initial=0)[::-1]
    N = reference.nu.second_moment()
    vals = np.empty((n + 1, 2, 2))
    for i, ui in enumerate(g):
        E = ref_exp(ui)
        M = N + sum(inner[i, k] * coef.Ck[k] for k in range(2))
        vals[i] = E @ M @ E.T
    oracle = trapezoid(vals, g, axis=0)
    np.testing.assert_allclose(coef.V, oracle, atol=1e-7)


def test_closing_identities_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        spec = random_critical_model(rng, int(rng.integers(2, 5)))
        coef = derive(spec)
        v = coef.spectral.v
        assert abs(v @ coef.betatilde2 - v @ coef.betatilde) < 1e-10
        assert abs(v @ coef.Ctilde @ v - v @ coef.Cbar @ v) < 1e-8
        np.testing.assert_allclose(v @ scipy.linalg.expm(coef.Btilde), v, atol=1e-10)
        for M in [coef.Cbar, coef.Ctilde, coef.V, *coef.Ck]:
            np.testing.assert_allclose(M, M.T, atol=1e-10)
            assert np.linalg.eigvalsh(M).min() >= -1e-8
        assert (coef.Btilde - np.diag(np.diag(coef.Btilde)) >= 0).all()
        assert (coef.betatilde >= 0).all() and coef.a >= 0 and coef.b >= 0


def test_psd_sqrt_examples():
    np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 0.0])), np.diag([2.0, 0.0]), atol=1e-15)
    rng = np.random.default_rng(4)
    for _ in range(20):
        G = rng.normal(size=(4, int(rng.integers(1, 5))))
        M = G @ G.T
        S = psd_sqrt(M)
        np.testing.assert_allclose(S, S.T, atol=1e-14)
        np.testing.assert_allclose(S @ S, M, atol=1e-9)


def test_psd_sqrt_errors():
    with pytest.raises(NotSymmetric):
        psd_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(NegativeEigenvalue):
        psd_sqrt(np.diag([1.0, -1e-6]))
    np.testing.assert_allclose(psd_sqrt(np.diag([1.0, -1e-9])), np.diag([1.0, 0.0]))


def test_derived_to_dict(reference):
    d = derive(reference).to_dict()
    assert d["a"] == pytest.approx(2.0) and d["critical"] is True
    assert d["spectral"]["kappa"] == pytest.approx(1.0)
