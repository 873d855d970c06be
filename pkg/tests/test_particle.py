import types

import numpy as np
import pytest

from lossabf.distributions import RngStream
from lossabf.errors import DomainError, FilterDegeneracyError
from lossabf.models import StableSvParams, SvGaussianParams, simulate_sv_gaussian
from lossabf.particle import (
    FilterConfig,
    bootstrap_filter,
    holdout_predictives,
    log_likelihood_estimate,
    one_step_predictive,
    rolling_predictive_eval,
    systematic_resample,
)
from lossabf.scoring import ScoringRule, mixture_logpdf

LS = ScoringRule.ls()


def fake_posterior(rows, model_tag="sv-gaussian"):
    return types.SimpleNamespace(
        kept_thetas=np.atleast_2d(np.asarray(rows, dtype=float)), model_tag=model_tag
    )


# ---------------------------------------------------------------------------
# config and resampling
# ---------------------------------------------------------------------------

def test_filter_config_validation():
    with pytest.raises(DomainError):
        FilterConfig(n_particles=10)
    with pytest.raises(DomainError):
        FilterConfig(resampling="multinomial")
    with pytest.raises(DomainError):
        FilterConfig(state_draws_per_theta=0)


def test_systematic_resample_preserves_weighted_mean():
    gen = RngStream(1).generator()
    particles = gen.normal(0, 1, 400)
    w = gen.random(400)
    w /= w.sum()
    target = np.sum(particles * w)
    diffs = []
    for s in range(200):
        idx = systematic_resample(w, RngStream(2, s).generator())
        diffs.append(particles[idx].mean() - target)
    diffs = np.array(diffs)
    se = diffs.std(ddof=1) / np.sqrt(diffs.size)
    assert abs(diffs.mean()) < 3 * se


def test_systematic_resample_proportionality():
    # a weight-1/2 atom must appear in half the slots, +-1
    w = np.array([0.5, 0.25, 0.25])
    idx = systematic_resample(w, RngStream(3).generator(), size=1000)
    counts = np.bincount(idx, minlength=3)
    assert abs(counts[0] - 500) <= 1
    assert abs(counts[1] - 250) <= 1


# ---------------------------------------------------------------------------
# bootstrap filter
# ---------------------------------------------------------------------------

def test_filter_degenerate_state_is_exact():
    params = SvGaussianParams(phi=0.0, sigma_alpha=1e-300, mu=0.0, h_bar=-1.2)
    y = simulate_sv_gaussian(params, 50, RngStream(4)).observations
    clouds = bootstrap_filter(params, y, FilterConfig(n_particles=200), RngStream(5))
    assert len(clouds) == 50
    for cloud in clouds:
        assert np.allclose(cloud.particles, -1.2)
        assert np.allclose(np.exp(cloud.log_weights).sum(), 1.0)


def test_filter_loglik_variance_shrinks_with_particles():
    params = SvGaussianParams(0.9, 0.4, 0.0, -1.0)
    y = simulate_sv_gaussian(params, 150, RngStream(6)).observations
    est = {
        n: np.array([
            log_likelihood_estimate(params, y, FilterConfig(n_particles=n), RngStream(7, s))
            for s in range(50)
        ])
        for n in (200, 2000)
    }
    assert est[2000].var(ddof=1) < est[200].var(ddof=1)


def test_filter_tracks_kalman_oracle_on_linearized_model():
    # near-deterministic state: the linearized log(y^2) Kalman filter is a
    # usable rough oracle for the filtered mean
    params = SvGaussianParams(0.9, 0.2, 0.0, -1.0)
    path = simulate_sv_gaussian(params, 500, RngStream(123))
    clouds = bootstrap_filter(
        params, path.observations, FilterConfig(n_particles=3000), RngStream(9)
    )
    pf_means = np.array([c.mean() for c in clouds])

    mv, vv = -1.2703628454614782, np.pi**2 / 2
    z = np.log((path.observations - params.mu) ** 2)
    phi, q = params.phi, params.sigma_alpha**2
    m, p = params.h_bar, q / (1 - phi**2)
    kf_means = []
    for zt in z:
        gain = p / (p + vv)
        m = m + gain * (zt - mv - m)
        p = (1 - gain) * p
        kf_means.append(m)
        m = params.h_bar + phi * (m - params.h_bar)
        p = phi**2 * p + q
    rmse = np.sqrt(np.mean((pf_means - np.array(kf_means)) ** 2))
    assert rmse < 0.2


def test_filter_degeneracy_reported_with_time():
    params = SvGaussianParams(0.9, 0.3, 0.0, -1.0)
    y = np.array([0.1, -0.2, 1e200, 0.3])
    with pytest.raises(FilterDegeneracyError) as err:
        bootstrap_filter(params, y, FilterConfig(n_particles=150), RngStream(10))
    assert err.value.t == 2


def test_filter_works_for_stable_model():
    params = StableSvParams(omega=-0.13, phi=0.9, sigma_h=0.2, alpha=1.7)
    y = simulate_sv_gaussian(SvGaussianParams(0.9, 0.3, 0.0, -1.3), 80, RngStream(11)).observations
    clouds = bootstrap_filter(params, y, FilterConfig(n_particles=300), RngStream(12))
    assert len(clouds) == 80
    assert all(np.isfinite(c.particles).all() for c in clouds)


# ---------------------------------------------------------------------------
# one-step predictive
# ---------------------------------------------------------------------------

def test_one_step_predictive_degenerate():
    params = SvGaussianParams(phi=0.0, sigma_alpha=1e-300, mu=0.7, h_bar=-1.2)
    y = simulate_sv_gaussian(params, 30, RngStream(13)).observations
    clouds = bootstrap_filter(params, y, FilterConfig(n_particles=200), RngStream(14))
    mix = one_step_predictive([params], [clouds[-1]], K=1, rng=RngStream(15))
    assert len(mix) == 1
    assert mix.means[0] == pytest.approx(0.7)
    assert mix.variances[0] == pytest.approx(np.exp(-1.2))


def test_one_step_predictive_component_count_and_mean():
    params = SvGaussianParams(0.9, 0.3, 0.0009, -1.3)
    y = simulate_sv_gaussian(params, 60, RngStream(16)).observations
    clouds = bootstrap_filter(params, y, FilterConfig(n_particles=200), RngStream(17))
    thetas = [params] * 7
    mix = one_step_predictive(thetas, [clouds[-1]] * 7, K=5, rng=RngStream(18))
    assert len(mix) == 35
    assert np.allclose(mix.means, 0.0009)
    assert np.all(mix.variances > 0)


def test_one_step_predictive_empty_theta_set():
    with pytest.raises(DomainError):
        one_step_predictive([], [], K=3, rng=RngStream(19))


# ---------------------------------------------------------------------------
# rolling hold-out evaluation
# ---------------------------------------------------------------------------

def test_rolling_eval_holdout_of_one():
    params = SvGaussianParams(0.9, 0.3, 0.0, -1.3)
    y = simulate_sv_gaussian(params, 120, RngStream(20)).observations
    post = fake_posterior([[0.9, 0.3, 0.0, -1.3]])
    cfg = FilterConfig(n_particles=200, state_draws_per_theta=10)
    mixtures = holdout_predictives(post, y, split=119, cfg=cfg, rng=RngStream(21))
    assert len(mixtures) == 1
    scores = rolling_predictive_eval(post, y, 119, cfg, [LS], RngStream(21))
    assert scores["LS"] == pytest.approx(mixture_logpdf(mixtures[0], y[119]))


def test_rolling_eval_degenerate_theta_closed_form():
    # all thetas identical with a deterministic state: average LS equals the
    # average iid Gaussian log score
    params = SvGaussianParams(0.0, 1e-300, 0.3, -0.9)
    y = simulate_sv_gaussian(params, 100, RngStream(22)).observations
    post = fake_posterior([[0.0, 1e-300, 0.3, -0.9]] * 4)
    cfg = FilterConfig(n_particles=150, state_draws_per_theta=3)
    scores = rolling_predictive_eval(post, y, 60, cfg, [LS], RngStream(23))
    v = np.exp(-0.9)
    ref = np.mean(-0.5 * (np.log(2 * np.pi * v) + (y[60:] - 0.3) ** 2 / v))
    assert scores["LS"] == pytest.approx(ref, abs=1e-9)


def test_rolling_eval_single_pass_matches_refiltering():
    params = SvGaussianParams(0.9, 0.4, 0.0, -1.0)
    theta_row = [0.9, 0.4, 0.0, -1.0]
    T, split, K = 30, 20, 8
    cfg = FilterConfig(n_particles=200, state_draws_per_theta=K)
    single, fresh = [], []
    for s in range(100):
        y = simulate_sv_gaussian(params, T, RngStream(24, s)).observations
        post = fake_posterior([theta_row])
        scores = rolling_predictive_eval(post, y, split, cfg, [LS], RngStream(25, s))
        single.append(scores["LS"])
        vals = []
        for m in range(split, T):
            clouds = bootstrap_filter(params, y[:m], cfg, RngStream(26, 1000 * s + m))
            mix = one_step_predictive([params], [clouds[-1]], K, RngStream(27, 1000 * s + m))
            vals.append(mixture_logpdf(mix, y[m]))
        fresh.append(np.mean(vals))
    single, fresh = np.array(single), np.array(fresh)
    se = np.sqrt(single.var(ddof=1) / 100 + fresh.var(ddof=1) / 100)
    assert abs(single.mean() - fresh.mean()) < 3 * se


def test_rolling_eval_worker_invariance():
    params = SvGaussianParams(0.9, 0.3, 0.0, -1.3)
    y = simulate_sv_gaussian(params, 150, RngStream(28)).observations
    post = fake_posterior([[0.9, 0.3, 0.0, -1.3], [0.85, 0.25, 0.0, -1.2]])
    cfg = FilterConfig(n_particles=150, state_draws_per_theta=4)
    r1 = rolling_predictive_eval(post, y, 100, cfg, [LS], RngStream(29), workers=0)
    r2 = rolling_predictive_eval(post, y, 100, cfg, [LS], RngStream(29), workers=2)
    assert r1 == r2


def test_holdout_split_validation():
    post = fake_posterior([[0.9, 0.3, 0.0, -1.3]])
    with pytest.raises(DomainError):
        holdout_predictives(post, np.zeros(10), 10, FilterConfig(n_particles=100), RngStream(1))
