import jax
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal

from cfcal.idm import THETA_REC
from cfcal.likelihood import ObservationNoise, StackedData, loglik
from cfcal.prior import (HierarchyState, HyperParams, Layout, Posterior, constrain,
                         cpc_to_chol, lkj_chol_logpdf, log_lik_u, log_posterior, log_prior,
                         log_prior_u,
                         sample_prior, unconstrain)
from cfcal.synthetic import generate, recovery_fixture

from conftest import small_dataset

WEAK_NOISE = HyperParams(lambda_eta=1.0, lambda_v=10.0, lambda_x=10.0)


def test_hyperparameter_defaults():
    hp = HyperParams()
    assert (hp.lambda0, hp.eta_lkj, hp.lambda_eta, hp.lambda_v, hp.lambda_x) == (
        100.0, 2.0, 2e6, 1e6, 1e7)
    assert np.diag(hp.Sigma0) == pytest.approx([0.1] * 5)
    assert hp.theta_rec == (33.3, 2.0, 1.6, 1.5, 1.67)
    assert (hp.sigma_rho0, hp.sigma_rho) == (1.0, 0.1)


@pytest.mark.parametrize("bad", [dict(lambda0=0.0), dict(eta_lkj=0.5), dict(sigma_rho=-1.0),
                                 dict(Sigma0=np.eye(5) - 2 * np.eye(5)),
                                 dict(Sigma0=np.triu(np.ones((5, 5))))])
def test_hyperparameter_validation(bad):
    with pytest.raises(ValueError):
        HyperParams(**bad)


def test_hyperparameters_from_file(tmp_path):
    p = tmp_path / "hp.toml"
    p.write_text("[prior]\nlambda_eta = 3.5\nSigma0 = [0.2, 0.2, 0.2, 0.2, 0.2]\n")
    hp = HyperParams.load(p)
    assert hp.lambda_eta == 3.5 and np.diag(hp.Sigma0) == pytest.approx([0.2] * 5)
    q = tmp_path / "hp.json"
    q.write_text('{"lambda0": 50}')
    assert HyperParams.load(q).lambda0 == 50
    with pytest.raises(ValueError):
        HyperParams.from_dict({"nope": 1})


def test_zero_vector():
    s = constrain(np.zeros(Layout(2, 3).size), Layout(2, 3))
    assert s.sigma0 == pytest.approx(np.ones(5))
    assert s.chol_corr == pytest.approx(np.eye(5))
    assert (s.sigma_eta, s.sigma_v, s.sigma_x) == (1.0, 1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31), D=st.integers(1, 4), p=st.integers(0, 3))
def test_round_trip(seed, D, p):
    lay = Layout(D, p)
    z = np.random.default_rng(seed).normal(0, 1, lay.size)
    assert unconstrain(constrain(z, lay)) == pytest.approx(z, abs=1e-12)


def test_sigma_positive_definite_many():
    rng = np.random.default_rng(0)
    lay = Layout(1, 0)
    to_chol = jax.jit(jax.vmap(lambda y: cpc_to_chol(y)[0]))
    Ls = np.asarray(to_chol(rng.normal(0, 2, (10_000, 10))))
    for L in Ls:
        assert np.allclose(np.sum(L * L, axis=1), 1.0)
        A = np.exp(rng.normal(0, 1, 5))[:, None] * L
        np.linalg.cholesky(A @ A.T)
    assert lay.size == 5 + 5 + 10 + 5 + 3


def test_length_mismatch():
    with pytest.raises(ValueError):
        constrain(np.zeros(7), Layout(1, 0))


def _state_at_prior_location(D=1, p=0):
    lay = Layout(D, p)
    u = np.zeros(lay.size)
    sl = lay.slices
    u[sl["log_theta_pop"]] = np.log(THETA_REC)
    u[sl["log_sigma0"]] = np.log(0.1)
    return constrain(u, lay)


def _replace(state, **kw):
    d = {k: getattr(state, k) for k in state.__dataclass_fields__}
    d.update(kw)
    return HierarchyState(**d)


def test_driver_shift_changes_by_quadratic_form():
    s = _state_at_prior_location()
    base = log_prior(s)
    delta = np.array([0.05, -0.02, 0.01, 0.0, 0.03])
    s2 = _replace(s, log_theta_d=s.log_theta_d + delta)
    # non-centred coordinates: the density is in z, with z = (sigma0 L)^-1 delta
    z = np.linalg.solve(s.sigma0[:, None] * s.chol_corr, delta)
    assert np.isfinite(base)
    # CPC round trip costs a few ulps near |corr| = 1
    assert log_prior(s2) - base == pytest.approx(-0.5 * z @ z, abs=1e-8)


def test_lkj_uniform_case_is_permutation_invariant():
    hp = HyperParams(eta_lkj=1.0)
    rng = np.random.default_rng(3)
    L = np.asarray(cpc_to_chol(rng.normal(0, 0.7, 10))[0])
    C = L @ L.T
    perm = rng.permutation(5)
    L2 = np.linalg.cholesky(C[np.ix_(perm, perm)])
    s = _state_at_prior_location()
    a = log_prior(_replace(s, chol_corr=L), hp)
    b = log_prior(_replace(s, chol_corr=L2), hp)
    # eta = 1 is uniform over correlation matrices; the Cholesky-factor density
    # carries the map's Jacobian prod_i L_ii^(K-i), which we strip off
    def corr_logpdf(chol):
        return float(lkj_chol_logpdf(chol, 1.0)) - sum(
            (5 - i) * np.log(chol[i - 1, i - 1]) for i in range(1, 6))

    assert corr_logpdf(L) == pytest.approx(corr_logpdf(L2), abs=1e-9)
    assert np.isfinite(a) and np.isfinite(b)


@pytest.mark.parametrize("eta", [1.0, 2.0, 4.0])
def test_lkj_2x2_integrates_to_one(eta):
    def dens(y):
        L, jac = cpc_to_chol(np.array([y]), dim=2)
        return float(np.exp(lkj_chol_logpdf(L, eta) + jac))

    total, _ = integrate.quad(dens, -15, 15, limit=200)
    assert total == pytest.approx(1.0, abs=1e-4)


def test_prior_sigma0_mean_by_sampling():
    lay = Layout(1, 0)
    hp = HyperParams()
    u = sample_prior(lay, hp, np.random.default_rng(11), 100_000)
    post = Posterior(small_dataset(order=0, n_drivers=1)[1], 0, "joint", hp)
    flat = post.flat_constrained(u)
    names = post.names()
    s = flat[:, names.index("sigma0_v0")]
    se = (1 / hp.lambda0) / np.sqrt(len(s))
    assert abs(s.mean() - 1 / hp.lambda0) < 3 * se


def test_log_prior_finite_on_random_vectors():
    lay = Layout(3, 2)
    rng = np.random.default_rng(2)
    for _ in range(50):
        assert np.isfinite(log_prior(constrain(rng.normal(0, 3, lay.size), lay)))


def test_bayesian_idm_composition():
    lat, obs = small_dataset(order=0, n_drivers=1)
    tr = lat[0]
    s = _state_at_prior_location()
    s = _replace(s, log_sigma_eta=np.log(0.2))
    hp = HyperParams()
    lp = log_posterior(s, hp, [tr], "accel")
    m = s.driver_model(0)
    # independent composition: sum of Gaussian log densities plus the prior
    assert lp == pytest.approx(log_prior(s, hp) + loglik("accel", tr, m), rel=1e-12, abs=1e-9)
    from scipy.stats import norm
    from cfcal.idm import idm_term

    idm = idm_term(tr.gap, tr.v_f, tr.dv, *m.idm.as_array())
    assert loglik("accel", tr, m) == pytest.approx(norm.logpdf(tr.a_f, idm, 0.2).sum(), rel=1e-12)


def test_widening_sigma0_changes_only_population_term():
    s = _state_at_prior_location(D=2, p=1)
    s = _replace(s, log_theta_pop=s.log_theta_pop + 0.3)
    hp1, hp2 = HyperParams(), HyperParams(Sigma0=np.eye(5))
    mu = np.log(THETA_REC)
    expected = (multivariate_normal(mu, np.eye(5)).logpdf(s.log_theta_pop)
                - multivariate_normal(mu, 0.1 * np.eye(5)).logpdf(s.log_theta_pop))
    assert log_prior(s, hp2) - log_prior(s, hp1) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("mode", ["accel", "speed", "position", "joint"])
@pytest.mark.parametrize("order", [0, 2])
def test_gradient_matches_finite_differences(mode, order):
    lat, obs = small_dataset(order=order, n_drivers=2, duration=10.0)
    post = Posterior(obs, order, mode, WEAK_NOISE)
    rng = np.random.default_rng(order)
    u = post.initial_point() + rng.normal(0, 0.1, post.dim)
    sl = post.layout.slices
    u[sl["log_sigma_eta"]] = np.log(0.05)
    _, g = post.logp_and_grad(u)
    for i in rng.choice(post.dim, 12, replace=False):
        h = 1e-6 * max(1.0, abs(u[i]))
        e = np.zeros(post.dim)
        e[i] = h
        fd = (post.logp(u + e) - post.logp(u - e)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-5 * max(1.0, np.abs(g).max() * 1e-3))


def _truth_state(gt, D):
    pop = gt.population
    lay = Layout(D, len(pop["rho"]))
    log_theta_d = np.array([np.log(m.idm.as_array()) for m in gt.drivers])
    return HierarchyState(
        log_theta_pop=np.log(pop["theta"]), log_sigma0=np.log(np.full(5, 0.05)),
        chol_corr=np.eye(5), rho_pop=np.asarray(pop["rho"]), log_theta_d=log_theta_d,
        rho_d=np.array([m.ar.rho for m in gt.drivers]).reshape(D, lay.order),
        log_sigma_eta=np.log(pop["sigma_eta"]), log_sigma_v=np.log(gt.sigma_v),
        log_sigma_x=np.log(gt.sigma_x))


def test_truth_beats_prior_location():
    D = 20
    layout = Layout(D, 2)

    # one compiled function for all seeds: the data enter as arguments
    @jax.jit
    def logp(u, x, v, s, dv, a, lengths, dt, mask):
        data = StackedData(x, v, s, dv, a, lengths, dt)
        return (log_prior_u(u, layout, WEAK_NOISE)
                + log_lik_u(u, layout, WEAK_NOISE, "joint", data, mask))

    wins = 0
    for seed in range(100):
        gt = recovery_fixture(seed, n_drivers=D, order=2)
        _, obs = generate(gt, 60.0, 0.2)
        post = Posterior(obs, 2, "joint", WEAK_NOISE)
        d = post.data
        args = (d.x, d.v, d.s, d.dv, d.a, d.lengths, d.dt, post.mask)
        truth = logp(unconstrain(_truth_state(gt, D), WEAK_NOISE), *args)
        wins += float(truth) > float(logp(post.initial_point(), *args))
    assert wins >= 95
