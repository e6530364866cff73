import numpy as np
import pytest

from trace_risk import tensor as T
from trace_risk.data import Feature, FeatureSchema, TabularDataset, generate_synthetic
from trace_risk.losses import focal_loss
from trace_risk.tensor import ConfigError, Tensor, finite_diff_check
from trace_risk.trace import (EncoderLayer, TraceConfig, TraceModel, encoder_layer,
                              encoder_layer_param_count, multi_head_attention, trace_forward)

from conftest import toy_schema


def small_model(seed=0, **kw):
    cfg = TraceConfig(model_size=8, **kw)
    return TraceModel(toy_schema(), cfg, seed=seed)


def layer(e=8, heads=2, seed=0):
    return EncoderLayer(0, e, heads, 4, np.random.default_rng(seed))


# attention -------------------------------------------------------------------
def test_identical_tokens_give_uniform_attention(rng):
    tok = rng.normal(size=(1, 1, 8))
    x = Tensor(np.repeat(tok, 5, axis=1))
    _, w = multi_head_attention(x, layer(), capture=True)
    np.testing.assert_allclose(w, np.full((1, 2, 5, 5), 0.2), atol=1e-15)


def test_single_token_attention(rng):
    lay = layer()
    x = Tensor(rng.normal(size=(3, 1, 8)))
    out, w = multi_head_attention(x, lay, capture=True)
    assert np.all(w == 1.0)
    v = x.data @ lay.wv.data + lay.bv.data
    np.testing.assert_allclose(out.data, v @ lay.wo.data + lay.bo.data, atol=1e-14)


def test_attention_rows_stochastic(rng):
    x = Tensor(rng.normal(size=(6, 7, 8)) * 3)
    _, w = multi_head_attention(x, layer(), capture=True)
    assert np.all((w >= 0) & (w <= 1))
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)


def test_heads_must_divide_model_size():
    with pytest.raises(ConfigError):
        TraceConfig(model_size=10, n_heads=3)


# encoder layer ---------------------------------------------------------------
def test_zero_sublayers_reduce_to_double_layer_norm(rng):
    lay = layer()
    for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "w_ff1", "b_ff1", "w_ff2", "b_ff2"):
        getattr(lay, name).data[...] = 0.0
    x = Tensor(rng.normal(size=(2, 3, 8)))
    out, _ = encoder_layer(x, lay, TraceConfig(model_size=8))
    one, zero = Tensor(np.ones(8)), Tensor(np.zeros(8))
    expected = T.layer_norm(T.layer_norm(x, one, zero), one, zero)
    np.testing.assert_allclose(out.data, expected.data, atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1, 8), (3, 5, 8), (2, 29, 8)])
def test_encoder_shape_preserved(shape, rng):
    out, _ = encoder_layer(Tensor(rng.normal(size=shape)), layer(), TraceConfig(model_size=8))
    assert out.shape == shape


def test_encoder_layer_gradient(rng):
    lay = layer(seed=3)
    x = Tensor(rng.normal(size=(2, 3, 8)))
    c = rng.normal(size=(2, 3, 8))
    cfg = TraceConfig(model_size=8)
    f = lambda _p: (encoder_layer(x, lay, cfg)[0] * Tensor(c)).sum()  # noqa: E731
    for p in (lay.wq, lay.wv, lay.ln1_g, lay.b_ff2):
        assert finite_diff_check(f, p, h=1e-5) < 1e-4
    fx = lambda t: (encoder_layer(t, lay, cfg)[0] * Tensor(c)).sum()  # noqa: E731
    assert finite_diff_check(fx, Tensor(x.data.copy()), h=1e-5) < 1e-4


def test_token_permutation_equivariance(rng):
    lay = layer(seed=5)
    cfg = TraceConfig(model_size=8)
    x = rng.normal(size=(2, 6, 8))
    perm = rng.permutation(6)
    a, _ = encoder_layer(Tensor(x), lay, cfg)
    b, _ = encoder_layer(Tensor(x[:, perm]), lay, cfg)
    np.testing.assert_allclose(b.data, a.data[:, perm], atol=1e-12)


# full model ------------------------------------------------------------------
def test_constant_head(toy_data):
    m = small_model()
    m.head_w.data[...] = 0.0
    m.head_b.data[...] = 0.37
    assert np.all(m.forward(m.prepare(toy_data)).data == 0.37)


def test_duplicate_samples_identical_logits(toy_data):
    m = small_model()
    batch = m.prepare(toy_data.take([3, 5, 3]))
    out = m.forward(batch).data
    assert out[0] == out[2]


def test_29_feature_schema_gives_29_tokens():
    feats = [Feature(f"n{i}", "continuous") for i in range(4)]
    feats += [Feature(f"b{i}", "checkbox", 3) for i in range(2)]
    feats += [Feature(f"c{i}", "categorical", 3) for i in range(23)]
    s = FeatureSchema(tuple(feats), "y")
    ds, _ = generate_synthetic(s, 6, 0.5, 0)
    m = TraceModel(s, TraceConfig(model_size=8))
    assert m.n_tokens == 29
    assert m.embed(m.prepare(ds)).shape == (6, 29, 8)
    logits, att = trace_forward(m.prepare(ds), m, capture=True)
    assert logits.shape == (6,) and att[0].shape == (6, 2, 29, 29)


def test_forward_deterministic(toy_data):
    m = small_model()
    b = m.prepare(toy_data)
    assert m.forward(b).data.tobytes() == m.forward(b).data.tobytes()


def test_masked_raw_values_do_not_move_logits(toy_data, rng):
    m = small_model(seed=2)
    m.fit_preprocessing(toy_data)
    base = m.forward(m.prepare(toy_data)).data
    noisy_cont = np.where(toy_data.cont_missing, rng.normal(size=toy_data.cont.shape) * 100, toy_data.cont)
    noisy_check = tuple(np.where(toy_data.check_missing[:, k:k + 1], rng.integers(0, 2, b.shape), b)
                        for k, b in enumerate(toy_data.check))
    perturbed = TabularDataset(toy_data.schema, noisy_cont, toy_data.cont_missing, toy_data.cat,
                               noisy_check, toy_data.check_missing, toy_data.labels)
    assert m.forward(m.prepare(perturbed)).data.tobytes() == base.tobytes()


def test_checkbox_flag_changes_token_layout(toy_data):
    m = small_model(checkbox_embeddings=False)
    assert m.token_names == ["x", "c.1", "c.2", "c.3", "k"]
    assert m.forward(m.prepare(toy_data)).shape == (len(toy_data),)


# parameter counts -------------------------------------------------------------
def test_head_and_layer_counts():
    m = small_model()
    assert m.count_params()["head"] == 9
    assert encoder_layer_param_count(128) == 198_272
    big = TraceModel(toy_schema(), TraceConfig(model_size=128))
    assert big.count_params()["head"] == 129
    assert big.count_params()["enc.0"] == 198_272


def test_adding_a_layer_adds_one_layer_count():
    one = small_model().count_params()["total"]
    two = small_model(n_encoder_layers=2).count_params()["total"]
    assert two - one == encoder_layer_param_count(8)


def test_published_depth_increments():
    # totals at depth 1 and 2 for E=64 and E=128
    assert 140_481 - 90_497 == encoder_layer_param_count(64)
    assert 526_721 - 328_449 == encoder_layer_param_count(128)


@pytest.mark.parametrize("dim,total", [(64, 90_497), (128, 328_449), (256, 1_246_721)])
def test_published_totals_with_per_feature_continuous_mlps(dim, total):
    # 6 continuous features; 23 categoricals of 9 levels give 230 embedding rows
    feats = [Feature(f"n{i}", "continuous") for i in range(6)]
    feats += [Feature(f"c{i}", "categorical", 9) for i in range(23)]
    s = FeatureSchema(tuple(feats), "y")
    assert TraceModel(s, TraceConfig(model_size=dim)).count_params()["total"] == total
    shared = TraceModel(s, TraceConfig(model_size=dim, shared_continuous_mlp=True))
    assert shared.count_params()["total"] != total


# gradients -------------------------------------------------------------------
def test_full_loss_gradient(toy_data):
    m = small_model(seed=1)
    rng = np.random.default_rng(101)
    for k, p in m.parameters().items():
        if "table" in k:
            p.data[...] = rng.normal(size=p.shape)
    batch = m.prepare(toy_data.take(np.arange(4)))
    f = lambda _p: focal_loss(m.forward(batch), batch.labels, 0.8, 2.0)  # noqa: E731
    for name in ("cont.w2", "cat.table", "check.0.table", "enc.0.wq", "enc.0.ff1.w", "head.w"):
        assert finite_diff_check(f, m.parameters()[name], h=1e-4) < 1e-4, name
