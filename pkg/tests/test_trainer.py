import math

import numpy as np
import pytest

from legged_est import nmn, trainer
from legged_est.trainer import Batch, TrainConfig


def tiny_model(rng, hidden=8, mlp=(10, 6)):
    m = nmn.init_model(rng, hidden=hidden, mlp=mlp)
    m.norm_mean = rng.normal(size=42)
    m.norm_std = rng.uniform(0.5, 2.0, size=42)
    return m


def random_batch(rng, B=3, T=5):
    return Batch(
        rng.normal(size=(B, T, 42)),
        (rng.random((B, T, 4)) < 0.5).astype(float),
        rng.normal(size=(B, T, 3)),
    )


# ----------------------------------------------------------------------------- losses


def scalar_bce(l, y):
    l = max(-30.0, min(30.0, l))
    p = 1 / (1 + math.exp(-l))
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def test_perfect_prediction_loss():
    labels = np.array([[1.0, 0.0, 1.0, 0.0]] * 6)
    logits = np.where(labels > 0, np.inf, -np.inf)
    v = np.ones((6, 3))
    assert trainer.loss_supervised(logits, v, labels, v) < 1e-9


def test_balanced_zero_logit_bce_is_ln2():
    labels = np.tile([1.0, 0.0], (10, 2))
    loss = trainer.loss_supervised(np.zeros((10, 4)), np.zeros((10, 3)), labels, np.zeros((10, 3)))
    assert abs(loss - math.log(2)) < 1e-9


def test_supervised_loss_scalar_oracle():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=5, size=(4, 7, 4))
    labels = (rng.random((4, 7, 4)) < 0.5).astype(float)
    v_hat, v = rng.normal(size=(4, 7, 3)), rng.normal(size=(4, 7, 3))
    bce = math.fsum(scalar_bce(a, b) for a, b in zip(logits.ravel(), labels.ravel())) / logits.size
    l1 = math.fsum(abs(a - b) for a, b in zip(v_hat.ravel(), v.ravel())) / v.size
    assert abs(trainer.loss_supervised(logits, v_hat, labels, v) - (bce + l1)) < 1e-12


def scalar_smooth(seq):
    terms = []
    for t in range(2, len(seq)):
        d1 = [seq[t][k] - seq[t - 1][k] for k in range(len(seq[t]))]
        d2 = [seq[t][k] - 2 * seq[t - 1][k] + seq[t - 2][k] for k in range(len(seq[t]))]
        terms.append(math.fsum(x * x for x in d1) + 0.5 * math.fsum(x * x for x in d2))
    return math.fsum(terms) / len(terms)


@pytest.mark.parametrize("fn, dim", [(trainer.loss_smooth_velocity, 3), (trainer.loss_smooth_contact, 4)])
def test_smoothness_losses(fn, dim):
    rng = np.random.default_rng(1)
    assert fn(np.tile(rng.normal(size=dim), (9, 1))) == 0.0
    a = rng.normal(size=dim)
    ramp = np.outer(np.arange(12), a)
    assert abs(fn(ramp) - a @ a) < 1e-12
    seq = rng.normal(size=(15, dim))
    assert abs(fn(seq) - scalar_smooth(seq.tolist())) < 1e-12
    with pytest.raises(ValueError):
        fn(np.zeros((2, dim)))


def test_total_loss_composition():
    rng = np.random.default_rng(2)
    b = random_batch(rng, T=8)
    logits, v = rng.normal(size=(3, 8, 4)), rng.normal(size=(3, 8, 3))
    sp = trainer.loss_supervised(logits, v, b.contact, b.velocity)
    assert trainer.total_loss(logits, v, b.contact, b.velocity, TrainConfig(smooth_target="none")) == sp
    assert trainer.total_loss(logits, v, b.contact, b.velocity, TrainConfig(lam=0.0)) == sp
    manual = sp + 50 * np.mean([scalar_smooth(s.tolist()) for s in v])
    assert abs(trainer.total_loss(logits, v, b.contact, b.velocity, TrainConfig()) - manual) < 1e-12
    c = nmn.sigmoid(logits)
    manual_c = sp + 50 * np.mean([scalar_smooth(s.tolist()) for s in c])
    got = trainer.total_loss(logits, v, b.contact, b.velocity, TrainConfig(smooth_target="contact"))
    assert abs(got - manual_c) < 1e-12


# ----------------------------------------------------------------------------- gradients


def numeric_grads(model, batch, cfg, eps=1e-5):
    out = {}
    for name, w in model.tensors().items():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            lp, vp, _ = trainer.forward_batch(model, batch.inputs, keep=False)
            up = trainer.total_loss(lp, vp, batch.contact, batch.velocity, cfg)
            w[idx] = old - eps
            lm, vm, _ = trainer.forward_batch(model, batch.inputs, keep=False)
            down = trainer.total_loss(lm, vm, batch.contact, batch.velocity, cfg)
            w[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


@pytest.mark.parametrize("target", ["velocity", "contact", "none"])
def test_backward_matches_finite_differences(target):
    rng = np.random.default_rng(3)
    model = tiny_model(rng)
    batch = random_batch(rng)
    cfg = TrainConfig(smooth_target=target, lam=50.0)
    _, grads = trainer.backward(model, batch, cfg)
    num = numeric_grads(model, batch, cfg)
    for name in grads:
        scale = max(np.max(np.abs(num[name])), 1e-6)
        rel = np.max(np.abs(grads[name] - num[name])) / scale
        assert rel < 1e-4, (name, rel)


def test_velocity_smoothing_leaves_contact_head_untouched():
    rng = np.random.default_rng(4)
    model = tiny_model(rng)
    batch = random_batch(rng, T=6)
    _, g0 = trainer.backward(model, batch, TrainConfig(lam=0.0))
    _, g1 = trainer.backward(model, batch, TrainConfig(lam=50.0, smooth_target="velocity"))
    last = f"mlp{len(model.layers) - 1}"
    assert np.array_equal(g0[last + ".w"][:4], g1[last + ".w"][:4])
    assert np.array_equal(g0[last + ".b"][:4], g1[last + ".b"][:4])
    assert not np.allclose(g0[last + ".w"][4:], g1[last + ".w"][4:])


def test_zero_lambda_ignores_smoothing_branch():
    rng = np.random.default_rng(5)
    model = tiny_model(rng)
    batch = random_batch(rng)
    ref = trainer.backward(model, batch, TrainConfig(lam=0.0, smooth_target="velocity"))[1]
    for target in ("contact", "none"):
        g = trainer.backward(model, batch, TrainConfig(lam=0.0, smooth_target=target))[1]
        for k in ref:
            assert np.array_equal(ref[k], g[k])


def test_forward_batch_matches_inference():
    rng = np.random.default_rng(6)
    model = tiny_model(rng)
    seq = rng.normal(size=(20, 42))
    logits, v, _ = trainer.forward_batch(model, seq[None])
    c, v_ref = nmn.run_sequence(model, seq)
    assert np.allclose(nmn.sigmoid(logits[0]), c, atol=1e-13)
    assert np.allclose(v[0], v_ref, atol=1e-13)


# ----------------------------------------------------------------------------- optimizer


def test_adam_zero_gradient_keeps_model():
    rng = np.random.default_rng(7)
    model = tiny_model(rng)
    before = {k: v.copy() for k, v in model.tensors().items()}
    state = trainer.AdamState.zeros(model)
    trainer.adam_step(model, {k: np.zeros_like(v) for k, v in before.items()}, 5e-4, state)
    for k, v in model.tensors().items():
        assert np.array_equal(v, before[k])


def test_adam_first_step_is_lr_sized():
    rng = np.random.default_rng(8)
    model = tiny_model(rng)
    before = {k: v.copy() for k, v in model.tensors().items()}
    grads = {k: rng.normal(size=v.shape) * 10 ** rng.uniform(-3, 3) for k, v in before.items()}
    trainer.adam_step(model, grads, 5e-4, trainer.AdamState.zeros(model))
    for k, v in model.tensors().items():
        step = before[k] - v
        assert np.allclose(step, 5e-4 * np.sign(grads[k]), rtol=1e-3)


# ----------------------------------------------------------------------------- training


def small_cfg(**kw):
    base = dict(hidden=8, mlp=(16,), max_iters=3, epochs_per_iter=2, windows_per_iter=4, batch_size=2, seq_len=50, seed=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_dataset():
    return trainer.synthesize_dataset(6, seed=1, duration=1.0)


def test_training_is_deterministic(tiny_dataset):
    m1, r1 = trainer.train(tiny_dataset, small_cfg())
    m2, r2 = trainer.train(tiny_dataset, small_cfg())
    for k, v in m1.tensors().items():
        assert np.array_equal(v, m2.tensors()[k])
    assert r1.train_loss == r2.train_loss and len(r1.val_loss) == 3


def test_training_reduces_loss(tiny_dataset):
    _, rep = trainer.train(tiny_dataset, small_cfg(max_iters=15, lr=3e-3, epochs_per_iter=4))
    assert rep.train_loss[-1] < rep.train_loss[0]
    assert set(rep.final) >= {"contact_accuracy", "velocity_l1", "contact_f1", "velocity_error_std"}


def test_early_stopping_returns_best(tiny_dataset):
    model, rep = trainer.train(tiny_dataset, small_cfg(max_iters=30, early_stopping=True, patience=2, lr=3e-2))
    assert rep.stopped_iter - rep.best_iter <= 2
    assert rep.final["loss"] == pytest.approx(min(rep.val_loss))


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        trainer.train([], small_cfg())


def test_config_validation_and_json():
    cfg = TrainConfig(lam=3.0, mlp=[32, 16])
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        TrainConfig(smooth_target="both")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)


def test_learning_rate_schedule():
    flat = TrainConfig(lr=1e-3, max_iters=10)
    assert all(trainer.learning_rate(flat, i) == 1e-3 for i in range(10))
    cos = TrainConfig(lr=1e-3, lr_final=1e-5, max_iters=11)
    rates = [trainer.learning_rate(cos, i) for i in range(11)]
    assert rates[0] == pytest.approx(1e-3) and rates[-1] == pytest.approx(1e-5)
    assert rates[5] == pytest.approx(0.5 * (1e-3 + 1e-5))
    assert all(a > b for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        TrainConfig(lr=1e-3, lr_final=2e-3)
