import warnings

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from scipy import stats

from swingintent import skewnorm, synth
from swingintent.hiermodel.diagnostics import bulk_ess, diagnostics, split_rhat
from swingintent.hiermodel import model as M
from swingintent.hiermodel import predict as P
from swingintent.hiermodel.sampler import FitWarning, PosteriorDraws, SamplerConfig, sample_posterior


def small_world(seed=0, n_batters=6, swings=12, n_pitchers=5, **truth):
    t = synth.IntentionTruth(**truth) if truth else synth.IntentionTruth()
    return synth.gen_intention_data(synth.IntentionWorld(truth=t, n_batters=n_batters, n_pitchers=n_pitchers,
                                                         swings_per_batter=swings, seed=seed)).data


def random_theta(layout, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(0, 0.4, layout.size)
    u = layout.unpack(theta)
    a, b = layout.blocks["fixed"]
    theta[a] = 72.0 + rng.normal()
    theta[a + 1:b] = rng.normal(0, 1, b - a - 1)
    a, _ = layout.blocks["log_sigma"]
    theta[a] = np.log(4.0)
    a, b = layout.blocks["z_b"]
    zb = theta[a:b].reshape(layout.n_batters, M.N_RE)
    zb[:, 0] += theta[layout.blocks["fixed"][0]]
    theta[a:b] = zb.ravel()
    assert u is not None
    return theta


def naive_centered(nat, corr_raw, data, priors, skew):
    """Slow per-row evaluation of the centered log posterior with scipy densities."""
    nat = {k: np.asarray(v) for k, v in nat.items()}
    lp = 0.0
    for i in range(data.n):
        g = nat["gamma_b"][data.batter[i]]
        x = np.array([data.balls[i], data.strikes[i], data.loc_x[i], data.loc_z[i]])
        mu = nat["mu0"] + nat["gamma_p"][data.pitcher[i]] + g[0]
        for k in range(4):
            mu += nat["beta"][k] * x[k]
        for k in range(1, 4):
            mu += g[k] * x[k]
        if skew:
            a = nat["alpha0"] + nat["nu"][data.batter[i]]
            xi = mu - nat["sigma"] * a / np.sqrt(1 + a * a) * np.sqrt(2 / np.pi)
            lp += stats.skewnorm.logpdf(data.y[i], a, xi, nat["sigma"])
        else:
            lp += stats.norm.logpdf(data.y[i], mu, nat["sigma"])

    def half_t(v, s):
        return np.log(2.0) + stats.t.logpdf(v, priors.df, scale=s)

    lp += stats.norm.logpdf(nat["mu0"], 0, priors.fixed_scale) + stats.norm.logpdf(nat["beta"], 0, priors.fixed_scale).sum()
    for v in [nat["sigma"], nat["sd_p"], *nat["sd_b"]]:
        lp += half_t(v, priors.sd_scale) + np.log(v)  # log-scale Jacobian
    # correlation: LKJ density on R plus |d vech(R) / d raw| by autodiff
    def vech_r(raw):
        L, _ = M.corr_cholesky(raw)
        R = L @ L.T
        return jnp.stack([R[i, j] for i in range(4) for j in range(i)])

    R = nat["corr_chol"] @ nat["corr_chol"].T
    lp += (priors.lkj_eta - 1) * np.linalg.slogdet(R)[1]
    lp += np.linalg.slogdet(np.asarray(jax.jacfwd(vech_r)(jnp.asarray(corr_raw))))[1]
    cov = np.diag(nat["sd_b"]) @ R @ np.diag(nat["sd_b"])
    lp += stats.multivariate_normal.logpdf(nat["gamma_b"], np.zeros(4), cov).sum()
    lp += stats.norm.logpdf(nat["gamma_p"], 0, nat["sd_p"]).sum()
    if skew:
        lp += stats.norm.logpdf(nat["alpha0"], 0, priors.shape_scale)
        lp += half_t(nat["tau"], priors.shape_sd_scale) + np.log(nat["tau"])
        lp += stats.norm.logpdf(nat["nu"], 0, nat["tau"]).sum()
    return lp


@pytest.mark.parametrize("skew", [True, False])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_centered_matches_naive(skew, seed):
    data = small_world(seed)
    layout = M.Layout.for_data(data, skew=skew)
    priors = M.PriorConfig().resolve(data.y)
    theta = random_theta(layout, seed)
    nat = M.natural_params(jnp.asarray(theta), layout)
    raw = layout.unpack(theta)["corr_raw"]
    lp = float(M.centered_log_posterior(nat, raw, data, priors, skew=skew))
    assert lp == pytest.approx(naive_centered(nat, raw, data, priors, skew), abs=1e-10, rel=0)


@pytest.mark.parametrize("skew", [True, False])
@pytest.mark.parametrize("seed", [3, 4, 5])
def test_noncentered_equals_centered_plus_jacobian(skew, seed):
    data = small_world(seed)
    layout = M.Layout.for_data(data, skew=skew)
    priors = M.PriorConfig().resolve(data.y)
    theta = random_theta(layout, seed)
    nat = M.natural_params(jnp.asarray(theta), layout)
    raw = layout.unpack(theta)["corr_raw"]
    centered = M.centered_log_posterior(nat, raw, data, priors, skew=skew)
    jac = M.noncentered_jacobian(nat, layout.n_batters, layout.n_pitchers, skew=skew, center=layout.center)
    assert float(M.log_posterior(theta, data, layout, priors)) == pytest.approx(float(centered + jac), abs=1e-10, rel=0)


def test_gaussian_reduction_of_skew_likelihood():
    data = small_world(7)
    layout = M.Layout.for_data(data, skew=True)
    nat = M.natural_params(jnp.asarray(random_theta(layout, 7)), layout)
    nat = dict(nat, alpha0=jnp.asarray(0.0), nu=jnp.zeros(layout.n_batters))
    X, y = jnp.asarray(data.covariates()), jnp.asarray(data.y)
    b, p = jnp.asarray(data.batter), jnp.asarray(data.pitcher)
    sk = M.pointwise_loglik(nat, X, y, b, p, skew=True)
    gauss = M.pointwise_loglik(nat, X, y, b, p, skew=False)
    mu = np.asarray(M.linear_predictor(nat, X, b, p))
    np.testing.assert_allclose(sk, gauss, rtol=0, atol=1e-12)
    np.testing.assert_allclose(gauss, stats.norm.logpdf(data.y, mu, float(nat["sigma"])), rtol=0, atol=1e-10)


def test_duplicated_data_doubles_likelihood():
    data = small_world(8)
    dup = data.subset(np.concatenate([np.arange(data.n), np.arange(data.n)]))
    layout = M.Layout.for_data(data)
    assert M.Layout.for_data(dup).center == pytest.approx(layout.center)
    dup_layout = M.Layout(layout.n_batters, layout.n_pitchers, center=layout.center)
    priors = M.PriorConfig().resolve(data.y)
    theta = random_theta(layout, 8)
    nat = M.natural_params(jnp.asarray(theta), layout)
    ll = M.pointwise_loglik(nat, jnp.asarray(data.covariates()), jnp.asarray(data.y),
                            jnp.asarray(data.batter), jnp.asarray(data.pitcher), True)
    diff = M.log_posterior(theta, dup, dup_layout, priors) - M.log_posterior(theta, data, layout, priors)
    assert float(diff) == pytest.approx(float(jnp.sum(ll)), rel=1e-12)


def test_jax_log_norm_cdf_and_vjp():
    t = jnp.linspace(-60, 8, 3001)
    np.testing.assert_allclose(M.log_norm_cdf(t), skewnorm.log_norm_cdf(np.asarray(t)), rtol=1e-13, atol=1e-15)
    f = lambda y, m, s, a: jnp.sum(M.skewnormal_mean_logpdf(y, m, s, a))

    def reference(y, m, s, a):
        xi = m - s * a / jnp.sqrt(1 + a**2) * np.sqrt(2 / np.pi)
        z = (y - xi) / s
        return jnp.sum(np.log(2) - jnp.log(s) - M.HALF_LOG_2PI - 0.5 * z**2 + jax.scipy.special.log_ndtr(a * z))

    rng = np.random.default_rng(0)
    y = jnp.asarray(rng.normal(70, 6, 50))
    args = (y, jnp.asarray(rng.normal(70, 2, 50)), jnp.asarray(4.5), jnp.asarray(rng.normal(-2, 3, 50)))
    for g1, g2 in zip(jax.grad(f, argnums=(0, 1, 2, 3))(*args), jax.grad(reference, argnums=(0, 1, 2, 3))(*args)):
        np.testing.assert_allclose(g1, g2, rtol=1e-9, atol=1e-10)


def test_correlation_cholesky_valid():
    rng = np.random.default_rng(1)
    for _ in range(20):
        L, _ = M.corr_cholesky(jnp.asarray(rng.normal(0, 3, 6)))
        R = np.asarray(L @ L.T)
        np.testing.assert_allclose(np.diag(R), 1.0, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(R) > 0)


# --- diagnostics ------------------------------------------------------------


def test_rhat_iid_normal():
    x = np.random.default_rng(0).standard_normal((4, 1000))
    assert 0.99 <= split_rhat(x) <= 1.01
    assert 3000 < bulk_ess(x) < 5000


def test_rhat_shifted_chains():
    x = np.random.default_rng(1).standard_normal((2, 500))
    x[1] += 5.0
    assert split_rhat(x) > 1.5


def test_ess_autocorrelated():
    rng = np.random.default_rng(2)
    x = np.zeros((4, 2000))
    for t in range(1, 2000):
        x[:, t] = 0.9 * x[:, t - 1] + rng.standard_normal(4)
    # AR(1) with rho=0.9: ESS / N = (1 - rho) / (1 + rho)
    assert bulk_ess(x) / x.size == pytest.approx(0.1 / 1.9, rel=0.25)


def test_constant_column_and_errors():
    cols = {"c": np.ones((2, 200)), "x": np.random.default_rng(3).standard_normal((2, 200))}
    df = diagnostics(cols)
    assert np.isnan(df.loc[df.parameter == "c", "ess_bulk"]).all()
    assert np.isfinite(df.loc[df.parameter == "x", "rhat"]).all()
    with pytest.raises(ValueError, match="single chain"):
        diagnostics({"x": np.zeros((1, 200))})
    with pytest.raises(ValueError, match="100"):
        diagnostics({"x": np.random.default_rng(0).standard_normal((2, 50))})


# --- sampling, prediction ------------------------------------------------------


QUICK = SamplerConfig(chains=2, warmup=150, draws=150, seed=3)


def test_sampler_rejects_tiny_data():
    data = small_world(0, n_batters=1, swings=10)
    with pytest.raises(ValueError, match="2 batters"):
        sample_posterior(data, QUICK)


def test_sampler_deterministic_and_persistent(tmp_path):
    data = small_world(11)
    a = sample_posterior(data, QUICK)
    b = sample_posterior(data, QUICK)
    for k in a.samples:
        np.testing.assert_array_equal(a.samples[k], b.samples[k])
    path = tmp_path / "draws.bin"
    a.save(path)
    c = PosteriorDraws.load(path)
    for k in a.samples:
        np.testing.assert_array_equal(a.samples[k], c.samples[k])
    assert c.batter_ids == a.batter_ids and c.meta == a.meta


def test_degenerate_response_flagged():
    data = small_world(12)
    data = data.with_response(np.full(data.n, 70.0))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        draws = sample_posterior(data, QUICK)
    assert draws.flagged
    assert any(issubclass(x.category, FitWarning) for x in w)


@pytest.fixture(scope="module")
def approach_fit():
    # batter 0 gets a strike slope of exactly -0.5 mph; 150 swings per batter
    world = synth.IntentionWorld(
        truth=synth.IntentionTruth(sigma=2.0, sd_b=(2.0, 0.45, 0.5, 0.5)),
        n_batters=16, n_pitchers=12, swings_per_batter=150, seed=21,
    )
    sample = synth.gen_intention_data(world)
    data = sample.data
    true_slope = sample.truth["gamma_b"][:, 1].copy()
    mask = data.batter == 0
    y = data.y + mask * (-0.5 - true_slope[0]) * data.strikes
    true_slope[0] = -0.5
    data = data.with_response(y)
    draws = sample_posterior(data, SamplerConfig(chains=2, warmup=400, draws=400, seed=5))
    return data, draws, true_slope


def test_planted_batter_slope(approach_fit):
    _, draws, _ = approach_fit
    g = draws.samples["gamma_b"][..., 0, 1].mean()
    assert abs(g - (-0.5)) < 0.2


def test_approaches_centered_and_joined(approach_fit):
    data, draws, _ = approach_fit
    approaches = P.batter_approaches(draws, draws)
    assert len(approaches) == data.n_batters
    mean = np.mean([a.gamma_bs for a in approaches])
    assert abs(mean) < 0.05 * draws.samples["sd_b"][..., 1].mean()
    # a batter missing from the second fit is dropped
    other = PosteriorDraws(
        samples={**draws.samples, "gamma_b": draws.samples["gamma_b"][:, :, 1:]},
        batter_ids=draws.batter_ids[1:], pitcher_ids=draws.pitcher_ids, skew=True,
    )
    ids = [a.batter_id for a in P.batter_approaches(draws, other)]
    assert ids == list(draws.batter_ids[1:])


def test_predict_intended(approach_fit):
    _, draws, _ = approach_fit
    est = P.point_estimate(draws)
    p = P.predict_intended(est, 0, 0, 0.0, 0.0)
    assert p.mean == pytest.approx(float(est["mu0"]))
    assert p.scale == pytest.approx(float(est["sigma"])) and p.shape == pytest.approx(float(est["alpha0"]))
    b = draws.batter_ids[3]
    lo = P.predict_intended(est, 1, 0, 0.2, 2.5, batter=b, pitcher=draws.pitcher_ids[0])
    hi = P.predict_intended(est, 1, 2, 0.2, 2.5, batter=b, pitcher=draws.pitcher_ids[0])
    slope = float(est["beta"][1] + est["gamma_b"][3, 1])
    assert hi.mean - lo.mean == pytest.approx(2 * slope, abs=1e-10)
    assert P.predict_intended(draws, 0, 0, 0.0, 0.0, batter="nobody").mean == pytest.approx(p.mean)


def test_elpd_self_compare_and_unseen(approach_fit):
    data, draws, _ = approach_fit
    held = data.subset(np.arange(40))
    res = P.elpd_heldout(draws, held)
    assert res.n == 40 and np.isfinite(res.elpd)
    cmp = P.compare(res, res)
    assert cmp.delta == 0.0 and cmp.se == 0.0
    with pytest.raises(ValueError):
        P.elpd_heldout(draws, data.subset(np.arange(0)))
    # unseen batters fall back to population effects
    from swingintent.ingest import IntentionObservation
    obs = [IntentionObservation("ghost", "ghost", 70.0, 0, 0, 0.0, 2.5)]
    coded = P.encode_for(draws, obs)
    assert coded.batter[0] == -1 and coded.pitcher[0] == -1
    ll = P.pointwise_loglik_draws(draws, coded)
    s = draws.samples
    mu = s["mu0"] + s["beta"] @ np.array([0, 0, 0, 2.5])
    ref = skewnorm.logpdf(70.0, skewnorm.SkewNormalParams.from_mean(mu, s["sigma"], s["alpha0"]))
    np.testing.assert_allclose(ll[:, 0], ref.reshape(-1), rtol=1e-10)


def test_train_test_split():
    tr, te = P.train_test_split(100, 0.2, seed=1)
    assert len(te) == 20 and len(np.intersect1d(tr, te)) == 0
    np.testing.assert_array_equal(te, P.train_test_split(100, 0.2, seed=1)[1])
    with pytest.raises(ValueError):
        P.train_test_split(10, 1.0)


def test_translation_equivariance():
    data = small_world(30, n_batters=10, swings=40)
    cfg = SamplerConfig(chains=2, warmup=300, draws=300, seed=2)
    priors = M.PriorConfig().resolve(data.y)
    a = sample_posterior(data, cfg, priors=priors)
    b = sample_posterior(data.with_response(data.y + 25.0), cfg, priors=priors)
    ma, mb = a.posterior_mean(), b.posterior_mean()
    assert mb["mu0"] - ma["mu0"] == pytest.approx(25.0, abs=0.1 * priors.fixed_scale)
    assert mb["mu0"] - ma["mu0"] == pytest.approx(25.0, abs=1.0)
    assert np.max(np.abs(mb["beta"] - ma["beta"])) < 0.1 * priors.fixed_scale
    sd = a.samples["beta"].std(axis=(0, 1))
    assert np.all(np.abs(mb["beta"] - ma["beta"]) < 0.5 * sd)
    assert abs(mb["alpha0"] - ma["alpha0"]) < 0.5 * a.samples["alpha0"].std()


def test_simulation_based_calibration():
    """Prior draws -> data -> refit; ranks of the truth must look uniform."""
    priors = M.PriorConfig(sd_scale=1.0, fixed_scale=2.0, shape_scale=1.0, shape_sd_scale=0.5)
    cfg = SamplerConfig(chains=2, warmup=200, draws=200, seed=0)
    rng = np.random.default_rng(2024)
    ranks = {"mu0": [], "beta_strikes": [], "sigma": []}
    n_thin = 19
    for rep in range(20):
        t_abs = lambda s: abs(s * rng.standard_t(priors.df))
        sd_b = tuple(t_abs(priors.sd_scale) for _ in range(4))
        truth = synth.IntentionTruth(
            mu0=rng.normal(0, priors.fixed_scale), beta=tuple(rng.normal(0, priors.fixed_scale, 4)),
            alpha0=rng.normal(0, priors.shape_scale), sigma=t_abs(priors.sd_scale),
            sd_p=t_abs(priors.sd_scale), sd_b=sd_b, tau=t_abs(priors.shape_sd_scale),
        )
        data = small_world(1000 + rep, n_batters=6, swings=15, n_pitchers=5, **truth.__dict__)
        draws = sample_posterior(data, SamplerConfig(**{**cfg.__dict__, "seed": rep}), priors=priors)
        idx = np.linspace(0, draws.n_draws - 1, n_thin).astype(int)
        post = {
            "mu0": draws.samples["mu0"][:, idx].ravel(),
            "beta_strikes": draws.samples["beta"][:, idx, 1].ravel(),
            "sigma": draws.samples["sigma"][:, idx].ravel(),
        }
        truth_v = {"mu0": truth.mu0, "beta_strikes": truth.beta[1], "sigma": truth.sigma}
        for k in ranks:
            ranks[k].append(int(np.sum(post[k] < truth_v[k])))
    n_post = 2 * n_thin
    for k, r in ranks.items():
        counts = np.bincount(np.minimum(np.asarray(r) * 4 // (n_post + 1), 3), minlength=4)
        p = stats.chisquare(counts).pvalue
        assert p > 0.01, (k, counts)
