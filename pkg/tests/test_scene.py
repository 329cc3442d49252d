import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftplan.config import ModelConfig
from driftplan.nn import F, Linear, Tensor, grad_check
from driftplan.nn.tensor import DimensionError
from driftplan.scene import (
    AgentTrack,
    AttentionPool,
    Lane,
    PointEncoder,
    Scenario,
    ScenarioParseError,
    SceneEncoder,
    SceneError,
    SelfAttentionBlock,
    VECTOR_WIDTH,
    collate,
    encode_scene,
    global_fuse,
    vectorize,
)

from builders import lane, scene, track

SMALL = ModelConfig(hidden=16, heads=2, map_layers=1, agent_layers=1, global_layers=1)


def encoder(cfg=SMALL, seed=0):
    return SceneEncoder(cfg, np.random.default_rng(seed))


# -- scenario file ---------------------------------------------------------------
def test_scenario_round_trip_byte_identical(tmp_path):
    sc = scene()
    sc.positives = [np.zeros((5, 2)), np.ones((5, 2))]
    sc.expert = np.arange(10.0).reshape(5, 2)
    p = tmp_path / "s.json"
    sc.save(p)
    first = p.read_bytes()
    Scenario.load(p).save(p)
    assert p.read_bytes() == first


def test_scenario_parse_errors_carry_lines():
    good = scene().to_json()
    with pytest.raises(ScenarioParseError) as e:
        Scenario.from_json(good[:40] + "}" + good[40:])
    assert e.value.line is not None
    doc = json.loads(good)
    doc["map"][0]["half_width"] = -1.0
    bad = json.dumps(doc, indent=1, sort_keys=True)
    with pytest.raises(ScenarioParseError) as e:
        Scenario.from_json(bad)
    assert "half_width" in str(e.value)
    assert bad.splitlines()[e.value.line - 1].strip().startswith('"half_width"')


def test_scenario_rejects_unknown_version():
    doc = scene().to_dict()
    doc["version"] = 7
    with pytest.raises(ScenarioParseError):
        Scenario.from_json(json.dumps(doc))


def test_agent_state_interpolation():
    a = AgentTrack("a", np.array([[0.0, 0, 0, 0, 1], [1.0, 2, 4, 0, 3]]))
    np.testing.assert_allclose(a.state_at(0.5), [1, 2, 0, 2])
    np.testing.assert_allclose(a.state_at(5.0), [2, 4, 0, 3])


# -- vectorization -----------------------------------------------------------------
def test_vectorize_layout_and_truncation():
    vs = vectorize(scene(), max_vectors=10)
    assert vs.map_vectors.shape == (2, 10, VECTOR_WIDTH)
    assert vs.agent_vectors.shape == (3, 5, VECTOR_WIDTH)
    # ego first, flagged with its own kind
    assert vs.agent_vectors[0, 0, 6] == 1.0
    # kept lane vectors are the ones nearest the ego, consecutive along the lane
    starts = vs.map_vectors[0, :, 0] * 25.0
    assert np.all(np.diff(starts) > 0) and starts.min() < 0 < starts.max()


def test_vectorize_requires_map():
    sc = scene(n_lanes=0)
    with pytest.raises(SceneError):
        vectorize(sc)


# -- point encoder ---------------------------------------------------------------
def test_encode_points_zero_and_single():
    enc = PointEncoder(VECTOR_WIDTH, 16, 1, np.random.default_rng(0))
    np.testing.assert_array_equal(enc(Tensor(np.zeros((1, VECTOR_WIDTH)))).data, 0.0)
    v = np.random.default_rng(1).normal(size=(1, VECTOR_WIDTH))
    assert enc(Tensor(v)).shape == (1, 16)


def test_encode_points_residual_isolation():
    rng = np.random.default_rng(2)
    enc = PointEncoder(VECTOR_WIDTH, 16, 0, rng)
    last = enc.mlp_pt.layers[-1]
    last.weight.data[:] = 0.0
    last.bias.data[:] = 0.0
    v = rng.normal(size=(7, VECTOR_WIDTH))
    np.testing.assert_array_equal(enc(Tensor(v)).data, v @ enc.proj.weight.data + enc.proj.bias.data)


def test_encode_points_width_mismatch():
    enc = PointEncoder(VECTOR_WIDTH, 8, 0, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        enc(Tensor(np.zeros((2, VECTOR_WIDTH + 1))))


# -- attention pooling -------------------------------------------------------------
def test_attention_pool_trivial_cases():
    pool = AttentionPool(8, np.random.default_rng(0))
    row = np.random.default_rng(1).normal(size=(1, 8))
    np.testing.assert_allclose(pool(Tensor(row)).data, row[0])
    two = np.repeat(row, 2, axis=0)
    out = pool(Tensor(two)).data
    np.testing.assert_allclose(pool.last_weights, [0.5, 0.5])
    np.testing.assert_allclose(out, row[0])


def test_attention_pool_direct_summation():
    rng = np.random.default_rng(3)
    pool = AttentionPool(8, rng)
    h = rng.normal(size=(9, 8))
    q, W = pool.q.data[0], pool.W.data
    s = np.array([q @ W @ hj for hj in h])
    a = np.exp(s - s.max())
    a /= a.sum()
    expect = sum(a[j] * h[j] for j in range(9))
    assert np.max(np.abs(pool(Tensor(h)).data - expect)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_attention_pool_weights_simplex(n, seed):
    rng = np.random.default_rng(seed)
    pool = AttentionPool(6, rng)
    pool(Tensor(rng.normal(0, 5, size=(3, n, 6))))
    w = pool.last_weights
    assert np.all(w >= 0) and np.max(np.abs(w.sum(axis=-1) - 1)) < 1e-10


# -- self-attention ----------------------------------------------------------------
def test_self_attention_single_token_and_rows():
    rng = np.random.default_rng(4)
    blk = SelfAttentionBlock(16, 4, rng)
    x = rng.normal(size=(1, 1, 16))
    y1, y2 = blk(Tensor(x)).data, blk(Tensor(x)).data
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(blk.last_weights, 1.0)
    blk(Tensor(rng.normal(size=(2, 7, 16))))
    assert np.max(np.abs(blk.last_weights.sum(axis=-1) - 1)) < 1e-10


def test_self_attention_permutation_equivariant():
    rng = np.random.default_rng(5)
    blk = SelfAttentionBlock(16, 4, rng)
    x = rng.normal(size=(1, 6, 16))
    perm = rng.permutation(6)
    np.testing.assert_allclose(blk(Tensor(x[:, perm])).data, blk(Tensor(x)).data[:, perm], atol=1e-12)


def test_global_fuse_split_boundary():
    rng = np.random.default_rng(6)
    blocks = [SelfAttentionBlock(8, 2, rng)]
    a, m = global_fuse(Tensor(rng.normal(size=(2, 3, 8))), Tensor(rng.normal(size=(2, 5, 8))), blocks)
    assert a.shape == (2, 3, 8) and m.shape == (2, 5, 8)
    a1, m1 = global_fuse(Tensor(np.ones((1, 1, 8))), Tensor(np.zeros((1, 1, 8))), blocks)
    assert blocks[0].last_weights.shape[-1] == 2
    with pytest.raises(SceneError):
        global_fuse(Tensor(np.ones((1, 1, 8))), Tensor(np.zeros((1, 0, 8))), blocks)


# -- full scene ------------------------------------------------------------------
def test_encode_scene_minimal():
    sc = Scenario("min", 0.1, track(0, 0, 5.0), [lane("L0", 0.0)], [])
    tok = encode_scene(sc, encoder(ModelConfig()))
    assert tok.agent_token.shape == (1, 128) and tok.map_token.shape == (1, 128)
    assert np.all(np.isfinite(tok.agent_token.data)) and np.all(np.isfinite(tok.map_token.data))


def test_encode_scene_translation_changes_tokens():
    sc = scene()
    moved = scene()
    for ln in moved.lanes:
        ln.points = ln.points + 1000.0
    for a in moved.agents:
        a.states[:, 1:3] += 1000.0
    moved.ego_states[:, 1:3] += 1000.0
    enc = encoder()
    assert not np.allclose(encode_scene(sc, enc).map_token.data, encode_scene(moved, enc).map_token.data)


def test_encode_scene_duplicate_polyline_changes_map_token():
    enc = encoder()
    sc = scene(n_lanes=2)
    dup = scene(n_lanes=2)
    dup.lanes.append(Lane("L0b", dup.lanes[0].points.copy()))
    t1, t2 = encode_scene(sc, enc).map_token.data, encode_scene(dup, enc).map_token.data
    assert np.max(np.abs(t1 - t2)) > 1e-8


def test_encode_scene_polyline_order_invariant():
    enc = encoder()
    sc = scene(n_lanes=3, n_agents=3)
    rev = scene(n_lanes=3, n_agents=3)
    rev.lanes = rev.lanes[::-1]
    rev.agents = rev.agents[::-1]
    # bypass the distance sort so the encoder sees genuinely permuted inputs
    vs, vr = vectorize(sc), vectorize(rev)
    vr.map_vectors, vr.map_mask = vr.map_vectors[::-1].copy(), vr.map_mask[::-1].copy()
    order = [0] + list(range(vr.n_agent - 1, 0, -1))
    vr.agent_vectors, vr.agent_mask = vr.agent_vectors[order], vr.agent_mask[order]
    a, b = enc(collate([vs])), enc(collate([vr]))
    assert np.max(np.abs(a.agent_token.data - b.agent_token.data)) < 1e-9
    assert np.max(np.abs(a.map_token.data - b.map_token.data)) < 1e-9


def test_encode_scene_batch_matches_single():
    enc = encoder()
    scs = [scene(2, 1), scene(3, 3)]
    batch = encode_scene(scs, enc)
    for i, sc in enumerate(scs):
        single = encode_scene(sc, enc)
        np.testing.assert_allclose(batch.map_token.data[i], single.map_token.data[0], atol=1e-12)
        np.testing.assert_allclose(batch.agent_token.data[i], single.agent_token.data[0], atol=1e-12)


def test_encode_scene_gradient_check():
    rng = np.random.default_rng(9)
    enc = encoder(ModelConfig(hidden=8, heads=2, map_layers=1, agent_layers=1, global_layers=1), 1)
    head = Linear(16, 3, rng)
    target = rng.normal(size=(1, 3))
    batch = enc.batch([scene(2, 2)])
    # one-hot and flag channels are constant in a real scene, which pins their
    # weight rows to an exactly-zero gradient; jitter so every path is exercised
    batch.map_vectors += rng.normal(0, 0.1, batch.map_vectors.shape) * batch.map_mask[..., None]
    batch.agent_vectors += rng.normal(0, 0.1, batch.agent_vectors.shape) * batch.agent_mask[..., None]

    def loss():
        tok = enc(batch)
        return F.mse(head(F.concat([tok.agent_token, tok.map_token], axis=1)), target)

    params = enc.parameters() + head.parameters()
    err = grad_check(loss, params, eps=1e-4, order=4, max_entries=400, rng=np.random.default_rng(0))
    assert err < 1e-4
