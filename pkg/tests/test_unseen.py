import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ezavood.data import LabelMap, generate_synthetic, split_views
from ezavood.errors import ConfigError, DimensionError, HygieneError, ValidationError
from ezavood.numerics import grad_check
from ezavood.unseen import (
    LAYERS,
    AlignerConfig,
    AlignerParams,
    build_unseen_expert,
    encode_sample,
    encode_text,
    init_aligner,
    loss_reg,
    loss_rec,
    loss_xe,
    losses_and_grad,
    nearest_index,
    predict_nn,
    register_unseen_expert,
    total_loss,
    train_unseen,
    UNSEEN_EXPERTS,
)

from conftest import small_synth


def perturbed(params, rng, scale=0.3):
    return params.with_arrays([a + scale * rng.standard_normal(a.shape) for a in params.arrays])


def naive_branch(layers, prefix, x):
    """Loop oracle: relu encoder, linear projector, linear decoder."""

    def affine(v, w, b, relu):
        out = []
        for j in range(w.shape[1]):
            z = b[j] + sum(v[k] * w[k, j] for k in range(w.shape[0]))
            out.append(max(z, 0.0) if relu else z)
        return np.array(out)

    o = affine(x, *layers[f"{prefix}_encoder"], True)
    th = affine(o, *layers[f"{prefix}_projector"], False)
    return o, th, affine(th, *layers[f"{prefix}_decoder"], False)


def test_zero_params_give_zero_outputs():
    p = init_aligner(4, 3, 5, 2, seed=0)
    zero = p.with_arrays([np.zeros_like(a) for a in p.arrays])
    for part in encode_sample(zero, np.ones(4)) + encode_text(zero, np.ones(3)):
        assert not np.any(part)


def test_identity_stack_passes_input_through():
    d = 4
    eye = (np.eye(d), np.zeros(d))
    p = AlignerParams({name: eye for name in LAYERS})
    x = np.array([0.5, 1.0, 2.0, 3.0])
    o, th, rho = encode_sample(p, x)
    assert np.array_equal(th, x) and np.array_equal(rho, x)
    assert np.array_equal(encode_text(p, x)[1], x)


@pytest.mark.parametrize("prefix", ["sample", "text"])
def test_branches_match_naive_oracle(rng, prefix):
    p = perturbed(init_aligner(5, 4, 6, 3, seed=1), rng)
    x = rng.standard_normal(5 if prefix == "sample" else 4)
    fast = (encode_sample if prefix == "sample" else encode_text)(p, x)
    for a, b in zip(fast, naive_branch(p.layers, prefix, x)):
        assert np.allclose(a, b, atol=1e-12)


def test_branch_dim_mismatch():
    p = init_aligner(4, 3, 5, 2, seed=0)
    with pytest.raises(DimensionError):
        encode_sample(p, np.ones(3))
    with pytest.raises(DimensionError):
        encode_text(p, np.ones(4))


def test_bad_layer_chain():
    p = init_aligner(4, 3, 5, 2, seed=0)
    layers = dict(p.layers)
    layers["sample_decoder"] = (np.zeros((2, 7)), np.zeros(7))
    with pytest.raises(DimensionError):
        AlignerParams(layers)


def test_loss_xe_examples():
    table = np.ones((3, 2))
    assert loss_xe(np.ones((1, 2)), table, [1]) == pytest.approx(math.log(3))
    big = np.array([[50.0, 0.0], [0.0, 50.0]])
    assert loss_xe(np.array([[1.0, 0.0]]), big, [0]) == pytest.approx(0.0, abs=1e-20)
    # dots (1, 2), true class 0
    value = loss_xe(np.array([[1.0]]), np.array([[1.0], [2.0]]), [0])
    assert value == pytest.approx(math.log(math.e + math.e**2) - 1.0, abs=1e-14)
    assert value == pytest.approx(1.313262, abs=1e-6)
    with pytest.raises(ValidationError):
        loss_xe(np.ones((1, 2)), table, [3])


def test_loss_rec_examples(rng):
    w = rng.standard_normal((4, 6))
    assert loss_rec(w, w, w) == 0.0
    assert loss_rec(w + 1, w, w) == pytest.approx(1.0)
    a, b = rng.standard_normal((2, 4, 6))
    naive = 0.0
    for i in range(4):
        naive += sum((a[i, j] - w[i, j]) ** 2 for j in range(6)) / 6
        naive += sum((b[i, j] - w[i, j]) ** 2 for j in range(6)) / 6
    assert loss_rec(a, b, w) == pytest.approx(naive / 4, rel=1e-13)
    with pytest.raises(DimensionError):
        loss_rec(a, b, w[:, :5])


def test_loss_reg_examples(rng):
    t = rng.standard_normal((3, 5))
    assert loss_reg(t, t) == 0.0
    assert loss_reg(t + 1, t) == pytest.approx(1.0)
    u = rng.standard_normal((3, 5))
    assert loss_reg(t, u) == pytest.approx(np.sum((t - u) ** 2) / 15, rel=1e-13)


@pytest.mark.parametrize("normalize", [False, True])
@pytest.mark.parametrize("terms", [("xe",), ("rec",), ("reg",), ("xe", "rec", "reg")])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(normalize, terms, seed):
    rng = np.random.default_rng(seed)
    p = perturbed(init_aligner(5, 4, 6, 3, seed=seed, normalize=normalize), rng)
    x = rng.standard_normal((6, 5))
    table = rng.standard_normal((3, 4))
    labels = rng.integers(0, 3, 6)
    _, grads = losses_and_grad(p, x, labels, table, terms)
    analytic = np.concatenate([g.ravel() for g in grads])
    f = lambda v: losses_and_grad(p.from_flat(v), x, labels, table, terms)[0]["total"]
    assert grad_check(f, analytic, p.flat()) < 1e-5


def test_loss_values_agree_with_standalone_terms(rng):
    p = perturbed(init_aligner(5, 4, 6, 3, seed=3), rng)
    x, table, labels = rng.standard_normal((6, 5)), rng.standard_normal((3, 4)), rng.integers(0, 3, 6)
    values, _ = losses_and_grad(p, x, labels, table)
    o, th_o, rho_o = encode_sample(p, x)
    w, th_w, rho_w = encode_text(p, table)
    assert values["xe"] == pytest.approx(loss_xe(th_o, th_w, labels), rel=1e-13)
    assert values["rec"] == pytest.approx(loss_rec(rho_o, rho_w[labels], w[labels]), rel=1e-13)
    assert values["reg"] == pytest.approx(loss_reg(th_o, th_w[labels]), rel=1e-13)
    assert values["total"] == pytest.approx(values["xe"] + values["rec"] + values["reg"], rel=1e-15)
    assert values["total"] >= 0


def test_unknown_loss_term(rng):
    p = init_aligner(2, 2, 2, 2, seed=0)
    with pytest.raises(ValidationError):
        losses_and_grad(p, np.ones((1, 2)), [0], np.ones((1, 2)), ("xe", "kl"))


def test_train_zero_epochs_returns_init(small_views, small_data):
    cfg = AlignerConfig(embed_dim=8, proj_dim=4, epochs=0, seed=3)
    params, history = train_unseen(small_views.train_seen, small_data[1], cfg)
    ds = small_data[0]
    assert params.equals(init_aligner(ds.dim, small_data[1].dim, 8, 4, 3))
    assert history == []


def test_train_deterministic(small_views, small_data):
    cfg = AlignerConfig(embed_dim=8, proj_dim=4, epochs=2)
    a, ha = train_unseen(small_views.train_seen, small_data[1], cfg)
    b, hb = train_unseen(small_views.train_seen, small_data[1], cfg)
    assert a.equals(b) and ha == hb


def test_train_rejects_unseen(small_views, small_data):
    with pytest.raises(HygieneError):
        train_unseen(small_views.test_unseen, small_data[1], AlignerConfig(epochs=1))


def test_total_loss_halves_in_30_epochs():
    ds, table = generate_synthetic(small_synth(n_seen_classes=5, n_unseen_classes=3, dim_feature=64, dim_text=32,
                                                samples_per_class_train=300))
    view = split_views(ds).train_seen
    cfg = AlignerConfig(epochs=30)
    lm = LabelMap(view.seen_classes)
    y, text_seen = lm.to_dense(view.labels), table.embeddings[lm.classes]
    before = total_loss(init_aligner(ds.dim, table.dim, 512, 64, cfg.seed), view.features, y, text_seen)
    params, _ = train_unseen(view, table, cfg)
    after = total_loss(params, view.features, y, text_seen)
    assert after <= 0.5 * before


def test_nearest_examples():
    anchors = np.array([[0.0, 0.0], [3.0, 4.0], [10.0, 0.0]])
    assert nearest_index(np.array([3.0, 4.0]), anchors) == 1
    # equidistant -> lower index
    assert nearest_index(np.array([5.0, 0.0]), np.array([[0.0, 0.0], [10.0, 0.0]])) == 0
    # hand-placed distances 2, 1, 5
    assert nearest_index(np.zeros(1), np.array([[2.0], [-1.0], [5.0]])) == 1


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-100, 100))
def test_nearest_translation_invariant(shift, scale):
    rng = np.random.default_rng(0)
    anchors = rng.standard_normal((6, 3))
    q = rng.standard_normal((4, 3))
    t = np.array(shift) + scale
    assert np.array_equal(nearest_index(q, anchors), nearest_index(q + t, anchors + t))


def test_predict_nn_empty_candidates():
    p = init_aligner(3, 2, 4, 2, seed=0)
    with pytest.raises(ValidationError):
        predict_nn(p, np.ones(3), np.zeros((0, 2)))


def test_expert_registry(small_views, small_data):
    oracle = build_unseen_expert("oracle", small_views.train_seen, small_data[1], AlignerConfig())
    labels = small_views.test_unseen.labels
    cands = small_data[0].unseen_classes
    assert np.array_equal(oracle.predict(small_views.test_unseen.features, cands, labels), labels)
    # a single candidate is always predicted
    assert np.all(oracle.predict(small_views.test_unseen.features, cands[:1], labels) == cands[0])
    with pytest.raises(ConfigError):
        oracle.predict(small_views.test_unseen.features, cands)
    with pytest.raises(ConfigError):
        build_unseen_expert("missing", small_views.train_seen, small_data[1], AlignerConfig())


def test_register_custom_expert(small_views, small_data):
    class First:
        def predict(self, features, candidates, labels=None):
            return np.full(len(features), candidates[0])

    register_unseen_expert("first", lambda view, table, cfg: First())
    try:
        e = build_unseen_expert("first", small_views.train_seen, small_data[1], AlignerConfig())
        assert np.all(e.predict(np.zeros((3, 2)), [7, 8]) == 7)
    finally:
        UNSEEN_EXPERTS.pop("first")


def test_aligner_expert_candidates_restricted(small_views, small_data):
    cfg = AlignerConfig(embed_dim=8, proj_dim=4, epochs=1)
    expert = build_unseen_expert("aligner", small_views.train_seen, small_data[1], cfg)
    cands = small_data[0].unseen_classes
    pred = expert.predict(small_views.test_unseen.features, cands)
    assert set(pred) <= set(cands)
    with pytest.raises(ValidationError):
        expert.predict(small_views.test_unseen.features, [])
