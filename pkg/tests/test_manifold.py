import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import adjusted_rand_score

from driftplan.manifold import (
    Dictionary,
    SeparationReport,
    StateError,
    TrajectoryVAE,
    brute_force_separation,
    build_dictionary,
    fit_pca,
    from_displacements,
    kl_diag_gaussian,
    pca_decode,
    reparameterize,
    separation_metrics,
    to_displacements,
    vae_project,
    vae_train_step,
)
from driftplan.nn import Adam, F, Param, Tensor, grad_check
from driftplan.sim.corpus import make_corpus


# -- displacements -------------------------------------------------------------
def test_displacements_basic_cases():
    np.testing.assert_array_equal(to_displacements(np.full((5, 2), 3.0)), np.zeros((4, 2)))
    line = np.stack([np.arange(6.0), np.zeros(6)], axis=1)
    np.testing.assert_array_equal(to_displacements(line), np.tile([1.0, 0.0], (5, 1)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (7, 2), elements=st.floats(-100, 100)), st.floats(-500, 500), st.floats(-500, 500))
def test_displacements_translation_invariant(traj, dx, dy):
    moved = traj + np.array([dx, dy])
    np.testing.assert_allclose(to_displacements(moved), to_displacements(traj), atol=1e-9)
    back = from_displacements(to_displacements(traj), traj[0])
    np.testing.assert_allclose(back, traj, atol=1e-9)


def test_displacements_need_two_points():
    with pytest.raises(ValueError):
        to_displacements(np.zeros((1, 2)))


# -- VAE -----------------------------------------------------------------------
@pytest.fixture(scope="module")
def small_vae():
    corpus = make_corpus(160, seed=11, horizon=12)
    vae = TrajectoryVAE(12, latent=32, width=32, n_blocks=4, seed=0)
    opt = Adam(vae.parameters(), lr=3e-3)
    rng = np.random.default_rng(0)
    for _ in range(30):
        vae_train_step(vae, corpus.trajectories, corpus.tags, opt, rng)
    vae.trained = True
    vae.freeze()
    return vae, corpus


def test_vae_encode_deterministic_and_positive_sigma():
    vae = TrajectoryVAE(12, width=32, seed=3)
    rng = np.random.default_rng(1)
    x = rng.normal(0, 3, size=(1000, 22))
    mu1, s1 = vae.encode(x)
    mu2, s2 = vae.encode(x)
    np.testing.assert_array_equal(mu1.data, mu2.data)
    assert mu1.shape == (1000, 32) and s1.shape == (1000, 32)
    assert np.all(s1.data > 0)


def test_vae_zero_input_zero_bias():
    vae = TrajectoryVAE(12, width=32, seed=3)
    mu, sigma = vae.encode(np.zeros((1, 22)))
    np.testing.assert_allclose(mu.data, 0.0, atol=1e-12)
    np.testing.assert_allclose(sigma.data, 1.0, atol=1e-12)


def test_reparameterize_cases():
    mu, sigma = np.arange(32.0), np.full(32, 2.0)
    np.testing.assert_array_equal(reparameterize(mu, sigma, np.zeros(32)), mu)
    eps = np.random.default_rng(0).normal(size=32)
    np.testing.assert_allclose(reparameterize(mu, np.full(32, np.exp(-5.0)), eps), mu, atol=0.05)


def test_reparameterize_monte_carlo_mean():
    rng = np.random.default_rng(7)
    mu, sigma = rng.normal(size=32), rng.uniform(0.5, 2.0, size=32)
    n = 100_000
    z = reparameterize(mu, sigma, rng.standard_normal((n, 32)))
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * sigma / np.sqrt(n) * 1.5)


def test_kl_closed_form():
    zero = kl_diag_gaussian(Tensor(np.zeros((3, 32))), Tensor(np.zeros((3, 32))))
    assert float(zero.data) == 0.0
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = kl_diag_gaussian(Tensor(rng.normal(size=(4, 32))), Tensor(rng.normal(size=(4, 32))))
        assert float(v.data) > 0


def test_vae_uniform_logits_give_ln6():
    vae = TrajectoryVAE(12, width=16, seed=0)
    vae.classifier.weight.data[:] = 0.0
    vae.classifier.bias.data[:] = 0.0
    corpus = make_corpus(16, seed=0, horizon=12)
    _, losses = vae.losses(corpus.trajectories, corpus.tags, np.zeros((16, 32)), 0.05, 0.1)
    assert losses.aux_cls == pytest.approx(np.log(6), abs=1e-12)


def test_vae_overfits_singleton():
    corpus = make_corpus(1, seed=4, horizon=12)
    vae = TrajectoryVAE(12, width=32, seed=0)
    opt = Adam(vae.parameters(), lr=2e-3)
    rng = np.random.default_rng(0)
    first = vae_train_step(vae, corpus.trajectories, corpus.tags, opt, rng, beta=0.0)
    for _ in range(300):
        last = vae_train_step(vae, corpus.trajectories, corpus.tags, opt, rng, beta=0.0)
    assert last.recon < 0.01 * first.recon


def test_vae_rejects_bad_tags():
    vae = TrajectoryVAE(12, width=16)
    with pytest.raises(ValueError):
        vae_train_step(vae, np.zeros((2, 12, 2)), np.array([0, 6]), Adam(vae.parameters()),
                       np.random.default_rng(0))


def test_vae_project_contracts(small_vae):
    vae, corpus = small_vae
    tau = corpus.trajectories[3]
    z1, z2 = vae_project(tau, vae), vae_project(tau, vae)
    np.testing.assert_array_equal(z1, z2)
    # (p + c) - (q + c) differs from p - q only by rounding
    np.testing.assert_allclose(vae_project(tau + np.array([50.0, -20.0]), vae), z1, rtol=0, atol=1e-12)

    x = Param(tau.copy())
    err = grad_check(lambda: F.tsum(vae_project(x, vae) ** 2), [x], eps=1e-6)
    assert err < 1e-4
    assert all(np.all(p.grad == 0) for p in vae.encoder.parameters())


def test_vae_project_requires_training():
    with pytest.raises(StateError):
        vae_project(np.zeros((12, 2)), TrajectoryVAE(12, width=16))


# -- PCA -----------------------------------------------------------------------
def test_pca_identical_trajectories():
    tau = make_corpus(1, seed=0, horizon=10).trajectories[0]
    head = fit_pca(np.repeat(tau[None], 15, axis=0), d=3)
    np.testing.assert_allclose(head.mu.reshape(10, 2), tau)
    np.testing.assert_allclose(head.explained_variance, 0.0, atol=1e-12)


def test_pca_line_recovers_direction():
    rng = np.random.default_rng(0)
    direction = np.array([3.0, 4.0]) / 5.0
    pts = rng.normal(size=(200, 1)) * direction + np.array([1.0, -2.0])
    head = fit_pca(pts.reshape(200, 1, 2), d=1)
    assert abs(abs(head.W[:, 0] @ direction) - 1.0) < 1e-6
    assert np.argmax(np.abs(head.W[:, 0])) == 1 and head.W[1, 0] > 0


def test_pca_full_rank_round_trip_and_orthonormality():
    corpus = make_corpus(64, seed=1, horizon=10)
    head = fit_pca(corpus.trajectories, d=20)
    assert np.max(np.abs(head.W.T @ head.W - np.eye(20))) < 1e-8
    rec = pca_decode(head.encode(corpus.trajectories), head)
    assert np.max(np.abs(rec - corpus.trajectories)) < 1e-8


def test_pca_needs_enough_samples():
    with pytest.raises(ValueError):
        fit_pca(np.zeros((5, 10, 2)), d=12)


# -- dictionary ----------------------------------------------------------------
def planted_clusters(seed=0, per=20):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 50, size=(16, 6, 2))
    labels = np.repeat(np.arange(16), per)
    pts = centers[labels] + rng.normal(0, 0.3, size=(len(labels), 6, 2))
    return pts, labels


def test_dictionary_planted_recovery_and_determinism():
    pts, labels = planted_clusters()
    d1 = build_dictionary(pts, n_fine=16, n_macro=16, seed=5)
    d2 = build_dictionary(pts, n_fine=16, n_macro=16, seed=5)
    assert adjusted_rand_score(labels, d1.member_labels) == 1.0
    np.testing.assert_array_equal(d1.member_labels, d2.member_labels)


def test_dictionary_single_trajectory():
    tau = make_corpus(1, seed=0, horizon=8).trajectories
    d = build_dictionary(np.repeat(tau, 4, axis=0), n_fine=1, seed=0)
    np.testing.assert_allclose(d.fine_centroids[0], tau[0])


def test_dictionary_default_scale_and_file_round_trip(tmp_path):
    corpus = make_corpus(480, seed=2, horizon=20)
    d = build_dictionary(corpus.trajectories, n_fine=200, n_macro=16, seed=1)
    assert d.n_macro == 16 and min(d.class_counts()) > 0
    path = tmp_path / "dict.json"
    d.save(path)
    back = Dictionary.load(path)
    np.testing.assert_array_equal(back.member_labels, d.member_labels)
    first = path.read_bytes()
    back.save(path)
    assert path.read_bytes() == first


def test_dictionary_empty_input():
    with pytest.raises(ValueError):
        build_dictionary(np.zeros((0, 5, 2)), n_fine=1)


# -- separation metrics --------------------------------------------------------
def test_separation_ratio_from_rounded_distances():
    rep = SeparationReport.from_distances(1.48, 34.93)
    assert abs(rep.ratio - 23.64) <= 0.05


def test_separation_two_coincident_classes(caplog):
    with caplog.at_level(logging.WARNING):
        rep = separation_metrics(np.array([[0.0, 0.0], [0.0, 2.0]]), np.array([0, 1]))
    assert rep.intra == 0.0 and rep.inter == pytest.approx(2.0)
    assert "fewer than 2" in caplog.text


def test_separation_matches_brute_force():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(60, 5))
    labels = rng.integers(0, 4, size=60)
    fast, slow = separation_metrics(pts, labels), brute_force_separation(pts, labels)
    assert abs(fast.intra - slow.intra) < 1e-9
    assert abs(fast.inter - slow.inter) < 1e-9
    assert fast.ratio == pytest.approx(fast.inter / fast.intra)


def test_separation_centroid_mode():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [10.0, 4.0]])
    rep = separation_metrics(pts, np.array([0, 0, 1, 1]), mode="centroid")
    assert rep.intra == pytest.approx((1.0 + 2.0) / 2)
