import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftplan.config import ModelConfig, RunConfig
from driftplan.decoder import (
    GenerationError,
    MixerBlock,
    MixerDecoder,
    Planner,
    ProposalSet,
    assemble_input,
    condition_embed,
    mixer_forward,
    sinusoid,
)
from driftplan.manifold import PcaHead, StateError, fit_pca, pca_decode
from driftplan.nn import F, SGDMomentum, Tensor, grad_check
from driftplan.nn.checkpoint import CheckpointError
from driftplan.nn.tensor import DimensionError
from driftplan.scene import SceneTokens
from driftplan.sim.corpus import make_corpus

from builders import scene


def tiny_config(**model):
    kw = dict(hidden=16, heads=2, map_layers=1, agent_layers=1, global_layers=1, mixer_depth=2,
              mixer_token_hidden=4)
    kw.update(model)
    return RunConfig(model=ModelConfig(**kw))


@pytest.fixture(scope="module")
def pca80():
    return fit_pca(make_corpus(320, seed=5).trajectories, d=12)


def randomize_modulation(dec: MixerDecoder, rng, scale=0.3):
    for blk in dec.blocks:
        blk.modulation.weight.data[:] = rng.normal(0, scale / np.sqrt(blk.width), blk.modulation.weight.shape)
        blk.modulation.bias.data[:] = rng.normal(0, scale, blk.modulation.bias.shape)


# -- input assembly ---------------------------------------------------------------
def test_assemble_input_cases():
    D = 8
    zero = SceneTokens(Tensor(np.zeros((1, D))), Tensor(np.zeros((1, D))))
    np.testing.assert_array_equal(assemble_input(np.zeros(D), zero).data, 0.0)
    rng = np.random.default_rng(0)
    tok = SceneTokens(Tensor(rng.normal(size=(1, D))), Tensor(rng.normal(size=(1, D))))
    x = assemble_input(rng.normal(size=(2, D)), tok).data
    assert x.shape == (2, 3, D)
    diff = x[0] - x[1]
    assert np.all(diff[0] != 0) and np.all(diff[1:] == 0)
    with pytest.raises(DimensionError):
        assemble_input(np.zeros(D + 1), tok)


# -- condition embedding -----------------------------------------------------------
def test_condition_embed_zero_fixture_and_determinism():
    planner = Planner(tiny_config())
    mlp = planner.decoder.cond.mlp
    base = np.concatenate([np.zeros(8), np.ones(8)])[None]
    h = base @ mlp.layers[0].weight.data + mlp.layers[0].bias.data
    h = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h ** 3)))
    expect = h @ mlp.layers[1].weight.data + mlp.layers[1].bias.data
    np.testing.assert_allclose(condition_embed(0.0, planner), expect, atol=1e-14)
    np.testing.assert_array_equal(condition_embed(0.7, planner), condition_embed(0.7, planner))


def test_condition_embed_continuity():
    planner = Planner(tiny_config())
    a, b = condition_embed(0.3, planner), condition_embed(0.30000001, planner)
    assert np.max(np.abs(a - b)) < 1e-5


def test_sinusoid_layout():
    s = sinusoid(np.array([0.0, 1.0]), 6)
    np.testing.assert_array_equal(s[0], [0, 0, 0, 1, 1, 1])
    np.testing.assert_allclose(s[1, 0], np.sin(1.0))


# -- mixer ---------------------------------------------------------------------------
def test_mixer_zero_gates_reduce_to_readout():
    rng = np.random.default_rng(1)
    dec = MixerDecoder(16, 3, 5, 4, 2, rng)
    x = Tensor(rng.normal(size=(4, 3, 16)))
    ro = dec.readout
    expect = (x.data.mean(axis=1) @ ro.linear.weight.data + ro.linear.bias.data) * ro.gain
    np.testing.assert_allclose(mixer_forward(x, 0.5, dec).data, expect, atol=1e-14)
    # with zeroed MLPs the output ignores even nonzero modulation
    randomize_modulation(dec, rng)
    for blk in dec.blocks:
        for mlp in (blk.token_mix, blk.channel_mix):
            mlp.layers[-1].weight.data[:] = 0.0
            mlp.layers[-1].bias.data[:] = 0.0
    np.testing.assert_allclose(mixer_forward(x, 0.5, dec).data, expect, atol=1e-14)


def test_mixer_alpha_sensitivity():
    rng = np.random.default_rng(2)
    dec = MixerDecoder(16, 2, 5, 4, 2, rng)
    x = Tensor(rng.normal(size=(2, 3, 16)))
    np.testing.assert_array_equal(dec(x, 0.0).data, dec(x, 1.0).data)
    randomize_modulation(dec, rng)
    assert np.max(np.abs(dec(x, 0.0).data - dec(x, 1.0).data)) > 1e-6


def test_mixer_block_shape_check():
    blk = MixerBlock(8, 3, 4, 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        blk(Tensor(np.zeros((1, 4, 8))), Tensor(np.zeros((1, 8))))


def test_mixer_gradient_check():
    rng = np.random.default_rng(3)
    dec = MixerDecoder(8, 2, 4, 4, 2, rng)
    randomize_modulation(dec, rng)
    dec.readout.linear.weight.data *= 300.0
    x = Tensor(rng.normal(size=(3, 3, 8)))
    target = rng.normal(size=(3, 4))
    loss = lambda: F.mse(dec(x, np.array([-0.5, 0.2, 1.4])), target)
    assert grad_check(loss, dec.parameters(), eps=1e-5, order=4) < 1e-4


def test_context_modulation_path():
    cfg = tiny_config(context_modulation=True)
    planner = Planner(cfg)
    randomize_modulation(planner.decoder, np.random.default_rng(4))
    tok = SceneTokens(Tensor(np.ones((1, 16))), Tensor(np.zeros((1, 16))))
    other = SceneTokens(Tensor(np.ones((1, 16))), Tensor(np.zeros((1, 16)) + 0.5))
    noise = np.random.default_rng(0).normal(size=(2, 16))
    # same input tokens except map; the modulation path adds sensitivity on top of the tokens
    y1 = planner.latents(tok, noise, 1.0).data
    y2 = planner.latents(other, noise, 1.0).data
    assert not np.allclose(y1, y2)
    with pytest.raises(ValueError):
        planner.decoder(Tensor(np.zeros((1, 3, 16))), 1.0)


# -- PCA head --------------------------------------------------------------------
def test_pca_decode_origin_and_basis(pca80):
    np.testing.assert_array_equal(pca_decode(np.zeros(12), pca80), pca80.mu.reshape(80, 2))
    e1 = np.eye(12)[0]
    np.testing.assert_allclose(pca_decode(e1, pca80), (pca80.mu + pca80.W[:, 0]).reshape(80, 2), atol=1e-14)


def test_pca_decode_round_trip_residual(pca80):
    trajs = make_corpus(320, seed=5).trajectories
    rec = pca_decode(pca80.encode(trajs), pca80)
    rmse = np.sqrt(np.mean((rec - trajs) ** 2))
    # residual variance is what the top-12 components leave out
    flat = trajs.reshape(len(trajs), -1)
    total = np.trace(np.cov(flat.T))
    bound = np.sqrt((total - pca80.explained_variance.sum()) * (len(trajs) - 1) / len(trajs) / flat.shape[1])
    assert rmse <= bound * (1 + 1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_pca_decode_affine(a, b, seed):
    rng = np.random.default_rng(seed)
    head = PcaHead(np.linalg.qr(rng.normal(size=(10, 4)))[0], rng.normal(size=10), np.ones(4))
    y1, y2 = rng.normal(size=4), rng.normal(size=4)
    lhs = pca_decode(a * y1 + b * y2, head)
    rhs = a * pca_decode(y1, head) + b * pca_decode(y2, head) - (a + b - 1) * head.mu.reshape(5, 2)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_pca_decode_unfitted():
    with pytest.raises(StateError):
        pca_decode(np.zeros(12), PcaHead())


# -- generation -------------------------------------------------------------------
def test_generate_determinism_nfe_and_init_norm(pca80):
    planner = Planner(RunConfig(), pca80)
    sc = scene()
    a = planner.generate(sc, 1, 1.0, seed=0, allow_untrained=True)
    b = planner.generate(sc, 1, 1.0, seed=0, allow_untrained=True)
    np.testing.assert_array_equal(a.trajectories, b.trajectories)
    big = planner.generate(sc, 1024, 1.0, seed=1, allow_untrained=True)
    assert big.trajectories.shape == (1024, 80, 2) and np.isfinite(big.trajectories).all()
    assert big.nfe == 1 and a.nfe == 1
    assert np.linalg.norm(big.latents, axis=1).max() < 1.0


def test_generate_distinct_seeds(pca80):
    planner = Planner(tiny_config(), pca80)
    randomize_modulation(planner.decoder, np.random.default_rng(0))
    planner.decoder.readout.linear.weight.data *= 100
    planner.trained = True
    a = planner.generate(scene(), 1, 1.0, seed=1)
    b = planner.generate(scene(), 1, 1.0, seed=2)
    assert np.max(np.abs(a.trajectories - b.trajectories)) > 1e-3


def test_generate_errors(pca80):
    planner = Planner(tiny_config(), pca80)
    with pytest.raises(StateError):
        planner.generate(scene(), 1, 1.0, seed=0)
    with pytest.raises(ValueError):
        planner.generate(scene(), 0, 1.0, seed=0, allow_untrained=True)
    planner.decoder.readout.linear.bias.data[0] = np.nan
    with pytest.raises(GenerationError) as e:
        planner.generate(scene(), 3, 1.0, seed=0, allow_untrained=True)
    assert e.value.index == 0


def test_gradients_reach_every_parameter(pca80):
    planner = Planner(tiny_config(context_modulation=True), pca80)
    opt = SGDMomentum(planner.parameters(), lr=0.05, momentum=0.0)
    rng = np.random.default_rng(0)
    target = rng.normal(0, 5, size=(4, 80, 2)) + pca80.mu.reshape(80, 2)
    for step in range(2):
        opt.zero_grad()
        traj, _ = planner.sample([scene()], 4, 1.0, np.random.default_rng(step))
        F.mse(traj, target).backward()
        if step == 0:
            opt.step()
    dead = [n for n, p in planner.named_parameters() if not np.any(p.grad != 0)]
    assert dead == []


def test_proposal_file_round_trip(tmp_path, pca80):
    planner = Planner(tiny_config(), pca80)
    ps = planner.generate(scene(), 3, -0.5, seed=4, allow_untrained=True)
    p = tmp_path / "p.json"
    ps.save(p)
    first = p.read_bytes()
    back = ProposalSet.load(p)
    np.testing.assert_array_equal(back.trajectories, ps.trajectories)
    assert back.alpha_used == -0.5 and back.k == 3 and back.nfe == 1
    back.save(p)
    assert p.read_bytes() == first


def test_planner_checkpoint_round_trip_and_hash(tmp_path, pca80):
    cfg = tiny_config()
    planner = Planner(cfg, pca80, seed=3)
    planner.trained = True
    path = tmp_path / "planner.ckpt"
    planner.save(path)
    back = Planner.load(path, cfg)
    a = planner.generate(scene(), 2, 1.0, seed=0)
    b = back.generate(scene(), 2, 1.0, seed=0)
    np.testing.assert_array_equal(a.trajectories, b.trajectories)
    with pytest.raises(CheckpointError, match="config hash"):
        Planner.load(path, tiny_config(mixer_depth=3))
