import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from hiqc.corpus import CorpusSplit, gen_synthetic, split
from hiqc.errors import EmptyTrainSet, NonFiniteLoss, ShapeMismatch
from hiqc.evaluation import micro_macro_f1
from hiqc.losses import LossWeights
from hiqc.model import backward, forward_batch, init_params, predict
from hiqc.taxonomy import build_label_graph
from hiqc.losses import classification_loss_grad
from hiqc.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    grad_check,
    grad_errors,
    loss_and_grads,
    make_batches,
    train,
)

from ._toys import random_batch, shop, toy_params, toy_records, toy_store


def _hand_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for step, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**step)) / (math.sqrt(v / (1 - b2**step)) + eps)
    return p


def test_adam_two_steps_match_hand_trace():
    cfg = TrainConfig(learning_rate=0.01)
    p = {"w": np.array([0.5, -1.0, 2.0])}
    g = {"w": np.array([0.3, -0.02, 4.0])}
    state = AdamState.zeros(p)
    cur = p
    for _ in range(2):
        cur, state = adam_step(cur, g, state, cfg)
    want = [_hand_adam(x, [dg, dg], 0.01) for x, dg in zip(p["w"], g["w"])]
    np.testing.assert_allclose(cur["w"], want, rtol=0, atol=1e-12)
    assert state.step == 2


def test_adam_first_step_is_sign_sized():
    cfg = TrainConfig(learning_rate=1e-3)
    g = np.array([5.0, -0.001, 1e-5])
    new, _ = adam_step({"w": np.zeros(3)}, {"w": g}, AdamState.zeros({"w": np.zeros(3)}), cfg)
    np.testing.assert_allclose(new["w"], -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_zero_gradient():
    cfg = TrainConfig()
    p = {"w": np.array([1.0, 2.0])}
    # from a fresh state a zero gradient is a fixed point
    same, st = adam_step(p, {"w": np.zeros(2)}, AdamState.zeros(p), cfg)
    np.testing.assert_array_equal(same["w"], p["w"])
    np.testing.assert_array_equal(st.m["w"], 0.0)
    # with history, both moments decay geometrically
    state = AdamState({"w": np.array([0.2, -0.1])}, {"w": np.array([0.04, 0.5])}, step=3)
    _, st = adam_step(p, {"w": np.zeros(2)}, state, cfg)
    np.testing.assert_allclose(st.m["w"], 0.9 * state.m["w"], rtol=1e-15)
    np.testing.assert_allclose(st.v["w"], 0.999 * state.v["w"], rtol=1e-15)


def test_adam_shape_mismatch():
    p = {"w": np.zeros(3)}
    with pytest.raises(ShapeMismatch):
        adam_step(p, {"w": np.zeros(4)}, AdamState.zeros(p), TrainConfig())


def test_config_validation():
    for bad in (dict(epochs=0), dict(batch_size=1), dict(learning_rate=-1.0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def _toy_split():
    t, g = shop()
    recs = toy_records(t)
    return t, g, CorpusSplit(recs, recs[::4], [])


def test_zero_learning_rate_keeps_init():
    t, g, s = _toy_split()
    init = toy_params(t, g)
    out, rep = train(s, t, g, init, TrainConfig(epochs=1, learning_rate=0.0, batch_size=4))
    for k, v in init.arrays().items():
        np.testing.assert_array_equal(out.arrays()[k], v)
    assert len(rep.epochs) == 1


def test_training_is_deterministic():
    t, g, s = _toy_split()
    cfg = TrainConfig(seed=3, epochs=4, batch_size=4, learning_rate=1e-2)
    a = train(s, t, g, toy_params(t, g), cfg)
    b = train(s, t, g, toy_params(t, g), cfg)
    assert a[1].to_json() == b[1].to_json()
    for k, v in a[0].arrays().items():
        np.testing.assert_array_equal(b[0].arrays()[k], v)


def test_empty_train_set():
    t, g = shop()
    with pytest.raises(EmptyTrainSet):
        train(CorpusSplit([], [], []), t, g, toy_params(t, g), TrainConfig())


def test_non_finite_loss_aborts():
    t, g, s = _toy_split()
    p = toy_params(t, g)
    p = replace(p, head_b=np.full_like(p.head_b, np.nan))
    with pytest.raises(NonFiniteLoss):
        train(s, t, g, p, TrainConfig(epochs=1, batch_size=4))


@pytest.mark.parametrize("seed", range(3))
def test_separable_corpus(seed):
    c = gen_synthetic(seed, 1, 2, 40)
    t = c.taxonomy
    g = build_label_graph(t)
    s = CorpusSplit(c.records, [], [])
    params, rep = train(s, t, g, init_params(t, g, seed=seed), TrainConfig(seed=seed))
    losses = [e.loss for e in rep.epochs]
    assert all(b < a for a, b in zip(losses[:5], losses[1:5]))
    res = micro_macro_f1([r.child_label for r in s.train], predict(params, g, s.train), t)
    assert res.child_micro_f1 >= 0.95


def test_early_stopping_and_best_epoch():
    c = gen_synthetic(1, 2, 2, 30)
    t = c.taxonomy
    g = build_label_graph(t)
    s = split(c.records, 1)
    _, rep = train(s, t, g, init_params(t, g, seed=1), TrainConfig(seed=1, epochs=40, early_stop_patience=2))
    assert rep.stopped_epoch == len(rep.epochs)
    assert 1 <= rep.best_epoch <= rep.stopped_epoch
    if rep.stopped_epoch < 40:
        assert rep.stopped_epoch - rep.best_epoch == 2
    assert all(e.val_macro_f1 is not None for e in rep.epochs)


def test_batches_pair_sibling_children():
    c = gen_synthetic(0, 3, 3, 12, imbalance=0.5)
    t = c.taxonomy
    rng = np.random.default_rng(0)
    for _ in range(20):
        for batch in make_batches(c.records, t, 4, rng):
            by_parent = {}
            for r in batch:
                by_parent.setdefault(t.parent_of[r.child_label], set()).add(r.child_label)
            assert any(len(v) >= 2 for v in by_parent.values())
            assert len(batch) >= 2


def test_batches_cover_every_record_once_before_top_up():
    t, _ = shop()
    recs = toy_records(t)
    batches = make_batches(recs, t, 4, np.random.default_rng(1))
    seen = [r.id for b in batches for r in b]
    assert set(seen) == {r.id for r in recs}


def test_updates_stay_finite():
    t, g = shop()
    recs = toy_records(t)
    rng = np.random.default_rng(0)
    p = toy_params(t, g)
    cfg = TrainConfig(learning_rate=0.05)
    state = AdamState.zeros(p.trainable())
    for _ in range(100):
        _, _, grads = loss_and_grads(p, g, random_batch(recs, rng), cfg.weights)
        upd, state = adam_step(p.trainable(), grads, state, cfg)
        p = p.with_arrays(upd)
        assert all(np.all(np.isfinite(v)) for v in p.arrays().values())


# ---------------------------------------------------------------------------
# gradient checks


@pytest.mark.parametrize("seed", range(4))
def test_grad_check_toy(seed):
    t, g = shop()
    recs = toy_records(t)
    p = toy_params(t, g, seed=seed)
    assert p.num_parameters() <= 2000 + 1024 * 8  # every table row counts, only touched rows are checked
    batch = random_batch(recs, np.random.default_rng(seed))
    assert grad_check(p, batch, t, g, TrainConfig()) < 1e-4


def test_grad_check_store_model():
    t, g = shop()
    recs = toy_records(t)
    p = init_params(t, g, seed=0, d_h=4, d_g=4, store=toy_store(recs), label_records=recs)
    assert p.num_parameters() <= 2000
    batch = random_batch(recs, np.random.default_rng(5))
    assert grad_check(p, batch, t, g, TrainConfig()) < 1e-4


def test_grad_check_without_contrastive():
    t, g = shop()
    recs = toy_records(t)
    p = toy_params(t, g, seed=1)
    batch = random_batch(recs, np.random.default_rng(2))
    cfg = TrainConfig(weights=LossWeights(w_contrastive=0.0))
    assert grad_check(p, batch, t, g, cfg) < 1e-4
    # the gradient is the classification path alone
    _, parts, grads = loss_and_grads(p, g, batch, cfg.weights)
    assert parts["intra"] == parts["inter"] == 0.0
    cache = forward_batch(p, g, batch)
    _, d_probs = classification_loss_grad(cache.P, [r.child_label for r in batch], t, cfg.weights)
    ref = backward(p, g, cache, d_probs)
    for k in grads:
        np.testing.assert_array_equal(grads[k], ref[k])


def test_central_difference_error_is_second_order():
    # at 1e-4 rounding noise is as large as the truncation error, so the order is read off at 1e-3
    t, g = shop()
    recs = toy_records(t)
    p = toy_params(t, g, seed=0)
    batch = random_batch(recs, np.random.default_rng(0))
    cfg = TrainConfig()
    small = grad_errors(p, batch, t, g, cfg, step=1e-3)
    big = grad_errors(p, batch, t, g, cfg, step=2e-3)
    for k in small:
        assert 3.0 < big[k]["max_abs"] / small[k]["max_abs"] < 5.0, k


# ---------------------------------------------------------------------------
# independent BCE trainer


def _torch_bce_run(init, g, batches_per_epoch, lr):
    t = g.taxonomy
    names = ["embedding_table", "label_features", "gcn_w1", "gcn_w2", "align_w", "head_w", "head_b"]
    w = {k: torch.tensor(init.arrays()[k].copy(), requires_grad=True) for k in names}
    opt = torch.optim.Adam(list(w.values()), lr=lr, betas=(0.9, 0.999), eps=1e-8)
    a = torch.tensor(g.adjacency)
    enc = init.encoder
    from hiqc.encoder import _bucket, features

    def rows(text):
        return [_bucket(f, enc.hash_seed, enc.buckets) for f in features(text)]

    out = []
    for batches in batches_per_epoch:
        total = 0.0
        for batch in batches:
            opt.zero_grad()
            e = torch.stack([w["embedding_table"][rows(r.text)].mean(dim=0) for r in batch])
            emb_g = a @ torch.relu(a @ w["label_features"] @ w["gcn_w1"]) @ w["gcn_w2"]
            attn = torch.softmax(e @ w["align_w"] @ emb_g.T, dim=1)
            probs = torch.sigmoid(torch.cat([e, attn @ emb_g], dim=1) @ w["head_w"] + w["head_b"])
            y = torch.zeros_like(probs)
            for i, r in enumerate(batch):
                y[i, r.child_label - 1] = 1.0
                y[i, t.parent_of[r.child_label] - 1] = 1.0
            loss = -(y * torch.log(probs) + (1 - y) * torch.log(1 - probs)).sum(dim=1).mean()
            loss.backward()
            opt.step()
            total += loss.item()
        out.append(total / len(batches))
    return out


def test_matches_independent_bce_trainer():
    t, g = shop()
    recs = toy_records(t)
    init = toy_params(t, g, seed=7)
    cfg = TrainConfig(seed=11, epochs=6, batch_size=4, learning_rate=1e-2, weights=LossWeights(lam=0.0, w_contrastive=0.0))
    _, rep = train(CorpusSplit(recs, [], []), t, g, init, cfg)
    rng = np.random.default_rng(11)
    batches = [make_batches(recs, t, 4, rng) for _ in range(6)]
    ref = _torch_bce_run(init, g, batches, 1e-2)
    np.testing.assert_allclose([e.loss for e in rep.epochs], ref, rtol=0, atol=1e-9)
