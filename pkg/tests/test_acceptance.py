"""Acceptance suite: one test per criterion; the terminal summary lists a PASS/FAIL line for each.

The training-based criteria share one artifact build from the default config
(corpus, VAE, dictionary, PCA) and one planner overfitted to 10 straight-road
and 10 blocked-lane scenes.
"""

import json
import time

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from driftplan import cli, pipeline
from driftplan.config import ModelConfig, RunConfig
from driftplan.decoder import MixerDecoder, mixer_forward
from driftplan.drift import drift_loss, interpolate_guidance
from driftplan.manifold import (
    TrajectoryVAE,
    brute_force_separation,
    build_dictionary,
    fit_pca,
    pca_decode,
    separation_metrics,
    vae_project,
)
from driftplan.nn import F, Linear, Tensor, grad_check
from driftplan.scene import SceneEncoder, encode_scene
from driftplan.sim.episode import run_episode
from driftplan.sim.idm import IdmParams, idm_accel
from driftplan.sim.scenarios import make_scenario

from builders import scene

ALPHAS = (-0.5, 0.0, 0.5, 1.0, 1.5)
OVERFIT_SEEDS = range(10)


def measured(record_property, text: str) -> None:
    record_property("measured", text)


@pytest.fixture(scope="module")
def artifacts():
    t0 = time.perf_counter()
    art = pipeline.build_artifacts(RunConfig())
    return art, time.perf_counter() - t0


@pytest.fixture(scope="module")
def overfit_scenes():
    return [make_scenario(kind, s) for kind in ("straight", "blocked-lane") for s in OVERFIT_SEEDS]


@pytest.fixture(scope="module")
def overfit(artifacts, overfit_scenes):
    art, _ = artifacts
    t0 = time.perf_counter()
    planner, reports = pipeline.overfit_planner(art, overfit_scenes)
    return planner, reports, time.perf_counter() - t0


# -- 1 ---------------------------------------------------------------------------
@pytest.mark.criterion(1)
def test_guidance_interpolation_endpoints_are_exact(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    exact = 0
    for _ in range(50):
        v_cond, v_unc = rng.normal(size=(64, 32)), rng.normal(size=(64, 32))
        exact += np.array_equal(interpolate_guidance(v_cond, v_unc, 1.0), v_cond)
        exact += np.array_equal(interpolate_guidance(v_cond, v_unc, 0.0), v_unc)
    elapsed = time.perf_counter() - t0
    measured(record_property, f"{exact}/100 endpoint fields bit-identical, {elapsed:.3f} s")
    assert exact == 100 and elapsed < 1.0


# -- 2 ---------------------------------------------------------------------------
@pytest.mark.criterion(2)
def test_loss_equals_mean_squared_field_and_gradient(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    loss_err, grad_err = 0.0, 0.0
    for _ in range(100):
        K = int(rng.integers(2, 65))
        z = Tensor(rng.normal(size=(K, 32)), requires_grad=True)
        v = rng.normal(size=(K, 32))
        loss = drift_loss(z, v)
        loss.backward()
        loss_err = max(loss_err, abs(float(loss.data) - np.sum(v * v) / K))
        grad_err = max(grad_err, np.abs(z.grad - (-2.0 / K) * v).max())
    elapsed = time.perf_counter() - t0
    measured(record_property, f"max loss error {loss_err:.2e}, max gradient error {grad_err:.2e}, {elapsed:.2f} s")
    assert loss_err < 1e-12 and grad_err < 1e-9 and elapsed < 5.0


# -- 3 ---------------------------------------------------------------------------
def _randomize_modulation(dec: MixerDecoder, rng, scale=0.3):
    # zero-initialized modulation makes every block an identity; perturb so each path carries gradient
    for blk in dec.blocks:
        blk.modulation.weight.data[:] = rng.normal(0, scale / np.sqrt(blk.width), blk.modulation.weight.shape)
        blk.modulation.bias.data[:] = rng.normal(0, scale, blk.modulation.bias.shape)


@pytest.mark.criterion(3)
def test_gradient_integrity(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)

    # (a) scene encoder with a squared-error head
    enc = SceneEncoder(ModelConfig(hidden=8, heads=2, map_layers=1, agent_layers=1, global_layers=1), rng)
    head = Linear(16, 3, rng)
    target = rng.normal(size=(1, 3))
    sc = scene(2, 2)
    batch = enc.batch([sc])
    # constant one-hot channels pin some weight rows to an exactly-zero gradient; jitter the inputs
    batch.map_vectors += rng.normal(0, 0.1, batch.map_vectors.shape) * batch.map_mask[..., None]
    batch.agent_vectors += rng.normal(0, 0.1, batch.agent_vectors.shape) * batch.agent_mask[..., None]
    enc.batch = lambda scenes: batch

    def encoder_loss():
        tok = encode_scene(sc, enc)
        return F.mse(head(F.concat([tok.agent_token, tok.map_token], axis=1)), target)

    err_a = grad_check(encoder_loss, enc.parameters() + head.parameters(), eps=1e-4, order=4,
                       max_entries=400, rng=np.random.default_rng(0))

    # (b) two mixer blocks, PCA decode, latent projection and the drift loss against a fixed field
    H, K = 12, 4
    trajs = np.cumsum(rng.normal(1.0, 0.3, size=(64, H, 2)), axis=1)
    pca = fit_pca(trajs, d=6)
    dec = MixerDecoder(8, 2, 6, 4, 2, rng)
    _randomize_modulation(dec, rng)
    dec.readout.linear.weight.data *= 300.0
    dec.readout.gain = np.sqrt(pca.explained_variance)
    vae = TrajectoryVAE(H, latent=5, width=8, n_blocks=1, seed=4)
    vae.trained = True
    vae.freeze()
    x = Tensor(rng.normal(size=(K, 3, 8)))
    alphas = np.array([-0.5, 0.3, 1.0, 1.5])
    v_bar = rng.normal(size=(K, 5))

    def latents():
        return vae_project(pca_decode(mixer_forward(x, alphas, dec), pca), vae)

    # the drifted target is detached, so it stays where the unperturbed parameters put it
    target = latents().data + v_bar

    def decoder_loss():
        z = latents()
        return drift_loss(z, target - z.data)

    # entries near 1e-8 sit at the round-off floor of small steps; the five-point stencil tolerates a wide one
    err_b = grad_check(decoder_loss, dec.parameters(), eps=3e-4, order=4)
    elapsed = time.perf_counter() - t0
    measured(record_property, f"max relative error (a) {err_a:.2e}, (b) {err_b:.2e}, {elapsed:.1f} s")
    assert err_a < 1e-4 and err_b < 1e-4 and elapsed < 120


# -- 4 ---------------------------------------------------------------------------
@pytest.mark.criterion(4)
def test_pca_origin_and_full_rank_round_trip(record_property):
    cfg = RunConfig()
    trajs = pipeline.corpus_for(cfg).trajectories
    head = fit_pca(trajs, d=cfg.model.d_pca)
    origin_exact = np.array_equal(pca_decode(np.zeros(head.d), head).reshape(-1), head.mu)
    full = fit_pca(trajs, d=2 * trajs.shape[1])
    err = np.abs(pca_decode(full.encode(trajs), full) - trajs).max()
    measured(record_property, f"zero code decodes to the mean exactly: {origin_exact}; "
                              f"full-rank round trip max error {err:.2e}")
    assert origin_exact and err < 1e-8


# -- 5 ---------------------------------------------------------------------------
@pytest.mark.criterion(5)
@pytest.mark.slow
def test_vae_latent_separates_classes_better_than_pca(artifacts, record_property):
    art, build_time = artifacts
    t0 = time.perf_counter()
    labels = art.corpus.labels
    z = vae_project(art.corpus.trajectories, art.vae)
    y = art.pca.encode(art.corpus.trajectories)
    vae_rep, pca_rep = separation_metrics(z, labels), separation_metrics(y, labels)
    oracle_err = 0.0
    for pts, rep in ((z, vae_rep), (y, pca_rep)):
        slow = brute_force_separation(pts, labels)
        oracle_err = max(oracle_err, abs(slow.intra - rep.intra), abs(slow.inter - rep.inter),
                         abs(slow.ratio - rep.ratio))
    elapsed = build_time + time.perf_counter() - t0
    measured(record_property, f"{len(labels)} trajectories, {len(np.unique(labels))} classes: "
                              f"latent ratio {vae_rep.ratio:.3f} vs PCA ratio {pca_rep.ratio:.3f}, "
                              f"oracle error {oracle_err:.1e}, {elapsed:.0f} s")
    assert len(labels) >= 3200 and len(np.unique(labels)) == 16
    assert z.shape[1] == 32 and y.shape[1] == 12
    assert vae_rep.ratio > pca_rep.ratio and oracle_err < 1e-9 and elapsed < 15 * 60


# -- 6 ---------------------------------------------------------------------------
@pytest.mark.criterion(6)
@pytest.mark.slow
def test_guidance_scale_trades_diversity_for_adherence(artifacts, overfit, overfit_scenes, record_property):
    art, _ = artifacts
    planner, _, train_time = overfit
    t0 = time.perf_counter()
    rows = pipeline.guidance_sweep(planner, art.vae, overfit_scenes, ALPHAS, k=32, seed=100)
    elapsed = train_time + time.perf_counter() - t0
    dist = [r.target_distance for r in rows]
    disp = [r.dispersion for r in rows]
    inversions = sum(b > a for a, b in zip(dist, dist[1:]))
    measured(record_property, "target distance " + " ".join(f"{d:.3f}" for d in dist)
             + f" ({inversions} inversions); dispersion at -0.5 {disp[0]:.3f} vs at 1.5 {disp[-1]:.3f}; "
             f"{elapsed:.0f} s")
    assert inversions <= 1 and disp[0] > disp[-1] and elapsed < 20 * 60


# -- 7 ---------------------------------------------------------------------------
@pytest.mark.criterion(7)
@pytest.mark.slow
def test_single_step_generation_and_latency(overfit, overfit_scenes, tmp_path, record_property):
    planner, _, _ = overfit
    t0 = time.perf_counter()
    nfes = [planner.generate(sc, 64, a, seed=i).nfe
            for i, sc in enumerate(overfit_scenes[::4]) for a in ALPHAS]
    planner.cfg.save(tmp_path / "config.json")
    planner.save(tmp_path / "planner.ckpt")
    scene_path = tmp_path / "scene.json"
    overfit_scenes[0].save(scene_path)
    code = cli.main(["bench", "--out", str(tmp_path), "--scenario", str(scene_path), "--k", "64",
                     "--repeats", "40"])
    rep = json.loads((tmp_path / "latency.json").read_text())
    elapsed = time.perf_counter() - t0
    ratio = rep["speedup_iterative_over_decoder"]
    tm = rep["trimmed_mean_s"]
    measured(record_property, f"NFE {sorted(set(nfes))} over {len(nfes)} calls; decoder {tm['decoder'] * 1e3:.2f} ms "
                              f"vs 10-step {tm['iterative'] * 1e3:.2f} ms = {ratio:.2f}x "
                              f"(reference {rep['reference_speedup']:.1f}x); {elapsed:.0f} s")
    assert code == 0 and set(nfes) == {1} and ratio >= 5.0 and elapsed < 120


# -- 8 ---------------------------------------------------------------------------
@pytest.mark.criterion(8)
def test_idm_free_flow_equilibrium(record_property):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        p = IdmParams(v0=rng.uniform(1, 40), T=rng.uniform(0.5, 3), s0=rng.uniform(0.5, 5),
                      a_max=rng.uniform(0.3, 4), b=rng.uniform(0.5, 5), delta=rng.uniform(1, 8),
                      b_max=rng.uniform(4, 12))
        worst = max(worst, abs(idm_accel(p.v0, p.v0, np.inf, 0.0, p)))
    measured(record_property, f"max |accel| over 100 draws {worst:.1e}")
    assert worst < 1e-9


# -- 9 ---------------------------------------------------------------------------
@pytest.mark.criterion(9)
def test_dictionary_recovers_planted_classes(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    centers = rng.normal(0, 50, size=(16, 80, 2))
    labels = np.repeat(np.arange(16), 20)
    pts = centers[labels] + rng.normal(0, 0.3, size=(len(labels), 80, 2))
    first = build_dictionary(pts, n_fine=48, n_macro=16, seed=7)
    second = build_dictionary(pts, n_fine=48, n_macro=16, seed=7)
    ari = adjusted_rand_score(labels, first.member_labels)
    same = np.array_equal(first.member_labels, second.member_labels) and \
        np.array_equal(first.macro_centroids, second.macro_centroids)
    elapsed = time.perf_counter() - t0
    measured(record_property, f"ARI {ari:.4f}, rerun identical: {same}, {elapsed:.1f} s")
    assert ari == 1.0 and same and elapsed < 30


# -- 10 --------------------------------------------------------------------------
@pytest.mark.criterion(10)
@pytest.mark.slow
def test_closed_loop_straight_and_blocked_lane(overfit, record_property):
    planner, _, _ = overfit
    t0 = time.perf_counter()
    reports = [run_episode(make_scenario(kind, s), planner, "nr", k=64, alpha=1.0, seed=s)
               for kind in ("straight", "blocked-lane") for s in OVERFIT_SEEDS]
    elapsed = time.perf_counter() - t0
    collisions = sum(r.collisions for r in reports)
    off = sum(r.off_drivable_ticks for r in reports)
    overtakes = sum(r.left_start_lane for r in reports if r.scenario.startswith("blocked-lane"))
    errors = [r.error for r in reports if r.error]
    measured(record_property, f"{len(reports)} episodes: {collisions} collisions, {off} off-drivable ticks, "
                              f"{overtakes}/10 blocked-lane episodes leave the blocked lane, {elapsed:.0f} s")
    assert not errors and collisions == 0 and off == 0 and overtakes >= 1 and elapsed < 10 * 60


# -- 11 --------------------------------------------------------------------------
@pytest.mark.criterion(11)
@pytest.mark.slow
def test_single_scenario_overfit_halves_loss(artifacts, record_property):
    art, _ = artifacts
    t0 = time.perf_counter()
    trainer = art.trainer(0)
    sc = make_scenario("straight", 0)
    losses = [trainer.step([sc], alpha=1.0).loss for _ in range(200)]
    elapsed = time.perf_counter() - t0
    measured(record_property, f"loss {losses[0]:.4f} -> {losses[-1]:.4f} "
                              f"({losses[-1] / losses[0]:.3f} of initial) in 200 steps, {elapsed:.0f} s")
    assert losses[-1] < 0.5 * losses[0] and elapsed < 5 * 60
