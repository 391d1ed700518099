import numpy as np
import pytest

from skelgraph.autodiff import DiffArray, gradient_check
from skelgraph.data.sequence import build_adjacency
from skelgraph.errors import DimensionError, NumericError
from skelgraph.losses import LossWeights, total_loss
from skelgraph.model import ModelConfig, SkeletonGraph, fuse

CHAIN3 = [(0, 1), (1, 2)]


def cfg(**kw):
    base = dict(obs_steps=4, pred_steps=4, joints=5, n_spgcnn=1, n_txcnn=3, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def chain(j):
    return [(i, i + 1) for i in range(j - 1)]


def rand_inputs(c: ModelConfig, n=2, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, size=(n, c.obs_steps, c.joints, 2))
    a = build_adjacency(chain(c.joints), c.joints, c.obs_steps)
    img = None
    if c.vision_mode != "none":
        img = rng.uniform(0, 1, size=(n, c.image_channels, c.image_size, c.image_size))
    return v, a, img


# -- identity preset against a hand-built linear oracle -------------------------------------

def oracle_matrix(adjacency, t_obs, t_pred, j):
    """Matrix M with vec(out) = M @ vec(v) for the identity preset (F=3)."""
    m = np.zeros((t_pred * j * 3, t_obs * j * 2))
    for t in range(min(t_obs, t_pred)):
        for row in range(j):
            for col in range(j):
                for f in range(2):  # the third feature channel starts at zero
                    m[(t * j + row) * 3 + f, (t * j + col) * 2 + f] = adjacency[t, row, col]
    return m


@pytest.mark.parametrize("t_obs,t_pred", [(3, 3), (3, 5), (4, 2)])
@pytest.mark.parametrize("learn", [True, False])
def test_identity_preset_matches_linear_oracle(t_obs, t_pred, learn):
    c = cfg(obs_steps=t_obs, pred_steps=t_pred, joints=3, batch_norm=False, learn_adjacency=learn, n_txcnn=4)
    model = SkeletonGraph(c, seed=3).identity_preset()
    a = build_adjacency(CHAIN3, 3, t_obs)
    m = oracle_matrix(a, t_obs, t_pred, 3)
    rng = np.random.default_rng(0)
    for _ in range(3):
        v = rng.normal(size=(1, t_obs, 3, 2))
        out, learned = model.forward(v, a)
        np.testing.assert_allclose(out.data.ravel(), m @ v.ravel(), atol=1e-12)
        np.testing.assert_allclose(learned.data, a, atol=1e-12)


def test_identity_preset_is_linear():
    c = cfg(joints=3, batch_norm=False)
    model = SkeletonGraph(c).identity_preset()
    a = build_adjacency(CHAIN3, 3, c.obs_steps)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(2, 1, c.obs_steps, 3, 2))
    f = lambda v: model.forward(v, a)[0].data
    np.testing.assert_allclose(f(2.0 * x - 3.0 * y), 2.0 * f(x) - 3.0 * f(y), atol=1e-12)


# -- spgcnn ------------------------------------------------------------------------------

def test_spgcnn_identity_path():
    c = cfg(batch_norm=False)
    model = SkeletonGraph(c).identity_preset()
    x = DiffArray(np.random.default_rng(2).normal(size=(1, c.obs_steps, c.joints, 3)))
    eye = DiffArray(np.repeat(np.eye(c.joints)[None], c.obs_steps, axis=0))
    np.testing.assert_allclose(model.spgcnn_layer(x, eye, 0).data, x.data, atol=1e-12)


def test_spgcnn_uniform_adjacency_gives_joint_mean():
    c = cfg(batch_norm=False)
    model = SkeletonGraph(c).identity_preset()
    xv = np.random.default_rng(3).normal(size=(1, c.obs_steps, c.joints, 3))
    uniform = DiffArray(np.full((c.obs_steps, c.joints, c.joints), 1.0 / c.joints))
    out = model.spgcnn_layer(DiffArray(xv), uniform, 0).data
    expected = np.broadcast_to(xv.mean(axis=2, keepdims=True), xv.shape)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_input_embedding_then_layer_shape():
    c = cfg(obs_steps=6, joints=7)
    model = SkeletonGraph(c)
    emb = model.input_embed(DiffArray(np.zeros((1, 6, 7, 2))))
    assert emb.shape == (1, 6, 7, 3)
    a = DiffArray(build_adjacency(chain(7), 7, 6))
    assert model.spgcnn_layer(emb, a, 0).shape == (1, 6, 7, 3)


def test_spgcnn_nonfinite_adjacency():
    c = cfg()
    model = SkeletonGraph(c)
    bad = np.ones((c.obs_steps, c.joints, c.joints))
    bad[0, 0, 0] = np.nan
    with pytest.raises(NumericError, match="layer 0"):
        model.spgcnn_layer(DiffArray(np.zeros((1, c.obs_steps, c.joints, 3))), DiffArray(bad), 0)


# -- adjacency learning ---------------------------------------------------------------------

def test_zero_adjacency_weights_give_zero_and_zero_aggregation():
    c = cfg()
    model = SkeletonGraph(c)
    for name, p in model.params.items():
        if name.startswith("adjacency.") and (name.endswith("weight") or name.endswith("bias")
                                              or name.endswith("beta")):
            p.data[...] = 0.0
    learned = model.learned_adjacency(chain(c.joints))
    np.testing.assert_array_equal(learned, 0.0)
    # BN, PReLU keep zero at zero; the temporal conv then only sees its bias
    x = DiffArray(np.random.default_rng(4).normal(size=(1, c.obs_steps, c.joints, 3)))
    from skelgraph.autodiff import graph_aggregate
    np.testing.assert_array_equal(graph_aggregate(DiffArray(learned), x).data, 0.0)


@pytest.mark.parametrize("j", [5, 21, 25])
def test_learned_adjacency_shape(j):
    c = cfg(joints=j, obs_steps=3)
    learned = SkeletonGraph(c).learned_adjacency(chain(j))
    assert learned.shape == (3, j, j)
    assert np.all(np.isfinite(learned))


def test_learned_adjacency_is_asymmetric():
    c = cfg()
    for seed in range(10):
        learned = SkeletonGraph(c, seed=seed).learned_adjacency(chain(c.joints))
        assert np.abs(learned - learned.transpose(0, 2, 1)).max() > 0


# -- vision -----------------------------------------------------------------------------

def test_vision_output_grid_shape():
    c = cfg(joints=21, vision_mode="last_image", image_size=128)
    model = SkeletonGraph(c)
    feat = model.extract_vision(DiffArray(np.random.default_rng(5).uniform(size=(1, 3, 128, 128))))
    assert feat.shape == (1, 21, 21, 3)
    assert c.vision_channels == 21


def test_vision_zero_image_gives_zero_features():
    c = cfg(joints=5, vision_mode="last_image", image_size=64)
    model = SkeletonGraph(c)
    zeros = DiffArray(np.zeros((2, 3, 64, 64)))
    for name, p in model.params.items():
        if name.startswith("vision.") and name.endswith("bias"):
            p.data[...] = 0.0
    np.testing.assert_array_equal(model.extract_vision(zeros, train=False).data, 0.0)
    np.testing.assert_array_equal(model.extract_vision(zeros, train=True).data, 0.0)


def test_vision_distinguishes_images():
    c = cfg(vision_mode="last_image", image_size=64)
    model = SkeletonGraph(c)
    rng = np.random.default_rng(6)
    f1 = model.extract_vision(DiffArray(rng.uniform(size=(1, 3, 64, 64)))).data
    f2 = model.extract_vision(DiffArray(rng.uniform(size=(1, 3, 64, 64)))).data
    assert np.abs(f1 - f2).max() > 0


def test_vision_rejects_small_images():
    c = cfg(vision_mode="last_image", image_size=64)
    with pytest.raises(DimensionError):
        SkeletonGraph(c).extract_vision(DiffArray(np.zeros((1, 3, 32, 32))))


def test_sequence_mode_stacks_frames():
    c = cfg(vision_mode="sequence", image_size=64)
    assert c.image_channels == 3 * c.obs_steps
    model = SkeletonGraph(c)
    assert model.params["vision.0.weight"].shape[1] == 3 * c.obs_steps


# -- fuse --------------------------------------------------------------------------------

def test_fuse_default_shape_and_slices():
    rng = np.random.default_rng(7)
    g = DiffArray(rng.normal(size=(1, 30, 21, 3)))
    v = DiffArray(rng.normal(size=(1, 21, 21, 3)))
    out = fuse(g, v)
    assert out.shape == (1, 51, 21, 3)
    np.testing.assert_array_equal(out.data[:, :30], g.data)
    np.testing.assert_array_equal(out.data[:, 30:], v.data)


def test_fuse_without_vision_is_identity():
    g = DiffArray(np.ones((1, 4, 5, 3)))
    assert fuse(g, None) is g


def test_fuse_spatial_mismatch():
    with pytest.raises(DimensionError):
        fuse(DiffArray(np.ones((1, 4, 5, 3))), DiffArray(np.ones((1, 21, 6, 3))))


# -- txcnn -------------------------------------------------------------------------------

def test_txcnn_default_shape():
    c = cfg(obs_steps=30, pred_steps=60, joints=21, n_txcnn=3, dtype="float32")
    out = SkeletonGraph(c).txcnn_stack(DiffArray(np.zeros((1, 30, 21, 3), np.float32)))
    assert out.shape == (1, 60, 21, 3)


def test_txcnn_residual_passthrough():
    c = cfg(n_txcnn=5)
    model = SkeletonGraph(c, seed=8)
    for k in range(1, 4):
        for suffix in ("weight", "bias", "bn.beta"):
            model.params[f"txcnn.{k}.{suffix}"].data[...] = 0.0
    x = DiffArray(np.random.default_rng(9).normal(size=(2, c.obs_steps, c.joints, 3)))
    first = model._norm_act(model._apply_conv(x, "txcnn.0"), "txcnn.0.bn", False, "txcnn.0.prelu")
    expected = model._apply_conv(first, "txcnn.4")
    np.testing.assert_allclose(model.txcnn_stack(x).data, expected.data, atol=1e-12)


def test_removing_residuals_changes_output():
    c = cfg(n_txcnn=4)
    with_res, without = SkeletonGraph(c, seed=1), SkeletonGraph(cfg(n_txcnn=4, residual=False), seed=1)
    v, a, _ = rand_inputs(c)
    assert np.abs(with_res.forward(v, a)[0].data - without.forward(v, a)[0].data).max() > 0


# -- forward -----------------------------------------------------------------------------

def test_forward_deterministic():
    c = cfg()
    model = SkeletonGraph(c, seed=2)
    v, a, _ = rand_inputs(c)
    np.testing.assert_array_equal(model.forward(v, a)[0].data, model.forward(v, a)[0].data)


def test_batch_equals_single_forwards():
    c = cfg()
    model = SkeletonGraph(c, seed=2)
    v, a, _ = rand_inputs(c)
    model.forward(v, a, train=True)  # move running stats away from their init
    both = model.forward(v, a)[0].data
    for i in range(2):
        np.testing.assert_allclose(model.forward(v[i : i + 1], a)[0].data[0], both[i], atol=1e-6)


def test_default_configuration_shape():
    c = ModelConfig(obs_steps=30, pred_steps=60, joints=21)
    v, a, _ = rand_inputs(c, n=1)
    out, learned = SkeletonGraph(c).forward(v, a)
    assert out.shape == (1, 60, 21, 3)
    assert learned.shape == (30, 21, 21)


def test_forward_ignores_images_without_vision():
    c = cfg()
    model = SkeletonGraph(c)
    v, a, _ = rand_inputs(c)
    junk = np.random.default_rng(0).normal(size=(2, 3, 64, 64))
    np.testing.assert_array_equal(model.forward(v, a)[0].data, model.forward(v, a, images=junk)[0].data)


def test_forward_requires_images_in_vision_mode():
    c = cfg(vision_mode="last_image", image_size=64)
    v, a, _ = rand_inputs(c)
    with pytest.raises(DimensionError):
        SkeletonGraph(c).forward(v, a)


def test_forward_shape_mismatch():
    c = cfg()
    with pytest.raises(DimensionError):
        SkeletonGraph(c).forward(np.zeros((1, c.obs_steps, c.joints + 1, 2)),
                                 build_adjacency([], c.joints + 1, c.obs_steps))


def test_forward_names_failing_stage():
    c = cfg()
    model = SkeletonGraph(c)
    model.params["txcnn.1.weight"].data[...] = np.inf
    v, a, _ = rand_inputs(c)
    with pytest.raises(NumericError, match="txcnn"):
        model.forward(v, a)


@pytest.mark.parametrize("seed", range(6))
def test_output_shape_property(seed):
    rng = np.random.default_rng(seed)
    c = cfg(obs_steps=int(rng.integers(1, 7)), pred_steps=int(rng.integers(1, 7)), joints=int(rng.integers(2, 9)),
            n_spgcnn=int(rng.integers(1, 3)), n_txcnn=int(rng.integers(3, 5)))
    v, a, _ = rand_inputs(c, n=int(rng.integers(1, 3)), seed=seed)
    out, learned = SkeletonGraph(c, seed=seed).forward(v, a)
    assert out.shape == (v.shape[0], c.pred_steps, c.joints, 3)
    assert learned.shape == (c.obs_steps, c.joints, c.joints) and np.all(np.isfinite(learned.data))


def test_parameter_names_unique_and_stable():
    a, b = SkeletonGraph(cfg(), seed=0), SkeletonGraph(cfg(), seed=1)
    assert list(a.params) == list(b.params)
    assert all(p.name == n for n, p in a.params.items())


# -- end-to-end gradients ----------------------------------------------------------------------

def _model_check(c, seed, weights=LossWeights()):
    model = SkeletonGraph(c, seed=seed)
    v, a, img = rand_inputs(c, n=2, seed=seed)
    target = np.random.default_rng(seed + 1).normal(scale=0.3, size=(2, c.pred_steps, c.joints, 3))
    fn = lambda: total_loss(target, model.forward(v, a, img, train=True)[0], weights, center_joint=0)
    return gradient_check(fn, model.params, tolerance=1e-4)


def test_tiny_model_gradient_check():
    rep = _model_check(cfg(), seed=0)
    assert rep.passed, str(rep)


def test_two_joint_toy_gradient_check():
    rep = _model_check(cfg(obs_steps=2, pred_steps=2, joints=2), seed=1, weights=LossWeights(0.3, 0.5))
    assert rep.passed, str(rep)
