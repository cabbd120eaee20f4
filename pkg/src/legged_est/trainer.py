"""Supervised training of the measurement network with hand-written BPTT.

Loss: binary cross-entropy on contact logits + L1 on body velocity, plus an
optional smoothness penalty (first and half of second temporal differences)
on either the velocity output or the contact probabilities.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import contact as contact_mod
from . import nmn, sim
from .nmn import NUM_FEET, NmnModel, elu, sigmoid

log = logging.getLogger(__name__)

LOGIT_CLAMP = 30.0
SMOOTH_TARGETS = ("velocity", "contact", "none")
# channel layout of the network input
ACCEL, GYRO, Q, DQ = slice(0, 3), slice(3, 6), slice(6, 18), slice(18, 30)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    epochs_per_iter: int = 32
    max_iters: int = 200
    lam: float = 50.0
    smooth_target: str = "velocity"
    noise_randomization: bool = True
    domain_randomization: bool = False
    seed: int = 0
    batch_size: int = 32
    windows_per_iter: int = 32
    seq_len: int = 400
    hidden: int = nmn.HIDDEN
    mlp: tuple[int, ...] = nmn.MLP_HIDDEN
    val_fraction: float = 0.1
    early_stopping: bool = False
    patience: int = 10
    grad_clip: float | None = None
    lr_final: float | None = None  # cosine decay from lr to this value over max_iters
    noise_gyro: float = 0.01
    noise_accel: float = 0.1
    noise_encoder: float = 0.001
    noise_joint_velocity: float = 0.05

    def __post_init__(self):
        if self.smooth_target not in SMOOTH_TARGETS:
            raise ValueError(f"smooth_target must be one of {SMOOTH_TARGETS}")
        for name in ("lr", "epochs_per_iter", "max_iters", "batch_size", "windows_per_iter", "seq_len", "hidden"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.seq_len < 3:
            raise ValueError("seq_len must be at least 3")
        if self.lr_final is not None and not 0.0 <= self.lr_final <= self.lr:
            raise ValueError("lr_final must lie in [0, lr]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        self.mlp = tuple(int(w) for w in self.mlp)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class Sequence:
    """One labeled stream: inputs (T, 42), contact (T, 4) bool, velocity (T, 3)."""

    inputs: np.ndarray
    contact: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.contact = np.asarray(self.contact, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        n = len(self.inputs)
        if len(self.contact) != n or len(self.velocity) != n:
            raise ValueError("sequence channels differ in length")
        if not (np.all(np.isfinite(self.contact)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("labels must be finite")

    def __len__(self) -> int:
        return len(self.inputs)

    @classmethod
    def from_log(cls, log: sim.SimLog) -> "Sequence":
        return cls(log.nmn_inputs(), log.contact, log.v_body)


@dataclass
class Batch:
    inputs: np.ndarray  # (B, T, I)
    contact: np.ndarray  # (B, T, 4)
    velocity: np.ndarray  # (B, T, 3)


# ----------------------------------------------------------------------------- losses


def _bce_terms(logits, labels):
    lc = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    return np.maximum(lc, 0.0) - lc * labels + np.log1p(np.exp(-np.abs(lc)))


def loss_supervised(logits, v_hat, contact, velocity) -> float:
    """Mean BCE on logits plus mean absolute velocity error."""
    return float(np.mean(_bce_terms(logits, contact)) + np.mean(np.abs(v_hat - velocity)))


def _check_smooth_len(y):
    if y.shape[-2] < 3:
        raise ValueError("smoothness loss needs at least 3 time steps")


def _smooth(y) -> float:
    _check_smooth_len(y)
    d1 = y[..., 2:, :] - y[..., 1:-1, :]
    d2 = y[..., 2:, :] - 2 * y[..., 1:-1, :] + y[..., :-2, :]
    terms = np.sum(d1 * d1, axis=-1) + 0.5 * np.sum(d2 * d2, axis=-1)
    return float(np.mean(terms))


def loss_smooth_velocity(v_hat) -> float:
    """Temporal smoothness of a (..., T, 3) velocity sequence."""
    return _smooth(np.asarray(v_hat, dtype=float))


def loss_smooth_contact(c_hat) -> float:
    """Same penalty applied to (..., T, 4) contact probabilities."""
    return _smooth(np.asarray(c_hat, dtype=float))


def _smooth_grad(y):
    d1 = y[..., 2:, :] - y[..., 1:-1, :]
    d2 = y[..., 2:, :] - 2 * y[..., 1:-1, :] + y[..., :-2, :]
    n = np.prod(y.shape[:-1]) // y.shape[-2] * (y.shape[-2] - 2)
    g = np.zeros_like(y)
    g[..., 2:, :] += (2 * d1 + d2) / n
    g[..., 1:-1, :] += (-2 * d1 - 2 * d2) / n
    g[..., :-2, :] += d2 / n
    return g


def total_loss(logits, v_hat, contact, velocity, cfg: TrainConfig) -> float:
    loss = loss_supervised(logits, v_hat, contact, velocity)
    if cfg.lam == 0 or cfg.smooth_target == "none":
        return loss
    if cfg.smooth_target == "velocity":
        return loss + cfg.lam * loss_smooth_velocity(v_hat)
    return loss + cfg.lam * loss_smooth_contact(sigmoid(logits))


# ----------------------------------------------------------------------------- forward / backward


@dataclass
class _Cache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    n: np.ndarray
    gh_n: np.ndarray
    acts: list = field(default_factory=list)  # layer inputs
    pre: list = field(default_factory=list)  # hidden-layer pre-activations


def forward_batch(model: NmnModel, inputs: np.ndarray, keep: bool = True):
    """Run (B, T, I) inputs from a zero state. Returns (logits, v_hat, cache)."""
    B, T, _ = inputs.shape
    H = model.hidden
    x = nmn.normalize(model, inputs)
    gi = x @ model.w_ih.T + model.b_ih
    hs = np.empty((B, T, H))
    h_prev = np.empty((B, T, H)) if keep else None
    z_all = np.empty((B, T, H)) if keep else None
    r_all = np.empty((B, T, H)) if keep else None
    n_all = np.empty((B, T, H)) if keep else None
    ghn_all = np.empty((B, T, H)) if keep else None
    h = np.zeros((B, H))
    w_hhT = model.w_hh.T
    for t in range(T):
        gh = h @ w_hhT + model.b_hh
        g = gi[:, t]
        z = sigmoid(g[:, :H] + gh[:, :H])
        r = sigmoid(g[:, H : 2 * H] + gh[:, H : 2 * H])
        ghn = gh[:, 2 * H :]
        n = np.tanh(g[:, 2 * H :] + r * ghn)
        if keep:
            h_prev[:, t], z_all[:, t], r_all[:, t], n_all[:, t], ghn_all[:, t] = h, z, r, n, ghn
        h = (1.0 - z) * n + z * h
        hs[:, t] = h
    cache = _Cache(x, h_prev, z_all, r_all, n_all, ghn_all)
    a = np.concatenate([hs, x], axis=-1)
    last = len(model.layers) - 1
    for i, (w, b) in enumerate(model.layers):
        if keep:
            cache.acts.append(a)
        a = a @ w.T + b
        if i < last:
            if keep:
                cache.pre.append(a)
            a = elu(a)
    return a[..., :NUM_FEET], a[..., NUM_FEET:], cache


def backward(model: NmnModel, batch: Batch, cfg: TrainConfig):
    """Loss and exact gradients of ``total_loss`` for every trainable tensor."""
    logits, v_hat, cache = forward_batch(model, batch.inputs)
    loss = total_loss(logits, v_hat, batch.contact, batch.velocity, cfg)
    B, T, _ = batch.inputs.shape
    H = model.hidden

    inside = np.abs(logits) < LOGIT_CLAMP
    d_logits = (sigmoid(logits) - batch.contact) * inside / logits.size
    d_v = np.sign(v_hat - batch.velocity) / v_hat.size
    if cfg.lam > 0 and cfg.smooth_target == "velocity":
        d_v = d_v + cfg.lam * _smooth_grad(v_hat)
    elif cfg.lam > 0 and cfg.smooth_target == "contact":
        c = sigmoid(logits)
        d_logits = d_logits + cfg.lam * _smooth_grad(c) * c * (1 - c)

    grads: dict[str, np.ndarray] = {}
    d = np.concatenate([d_logits, d_v], axis=-1)
    for i in range(len(model.layers) - 1, -1, -1):
        w, _ = model.layers[i]
        a = cache.acts[i]
        grads[f"mlp{i}.w"] = d.reshape(-1, d.shape[-1]).T @ a.reshape(-1, a.shape[-1])
        grads[f"mlp{i}.b"] = d.sum(axis=(0, 1))
        d = d @ w
        if i > 0:
            pre = cache.pre[i - 1]
            d = d * np.where(pre > 0, 1.0, np.exp(np.minimum(pre, 0.0)))
    dh_out = d[..., :H]

    w_hh = model.w_hh
    dgi = np.empty((B, T, 3 * H))
    d_w_hh = np.zeros_like(w_hh)
    d_b_hh = np.zeros(3 * H)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + dh_out[:, t]
        z, r, n, ghn, hp = cache.z[:, t], cache.r[:, t], cache.n[:, t], cache.gh_n[:, t], cache.h_prev[:, t]
        da_n = dh * (1 - z) * (1 - n * n)
        da_z = dh * (hp - n) * z * (1 - z)
        da_r = da_n * ghn * r * (1 - r)
        dgh = np.concatenate([da_z, da_r, da_n * r], axis=1)
        dgi[:, t] = np.concatenate([da_z, da_r, da_n], axis=1)
        d_w_hh += dgh.T @ hp
        d_b_hh += dgh.sum(axis=0)
        dh = dh * z + dgh @ w_hh
    x = cache.x
    grads["w_ih"] = dgi.reshape(-1, 3 * H).T @ x.reshape(-1, x.shape[-1])
    grads["b_ih"] = dgi.sum(axis=(0, 1))
    grads["w_hh"] = d_w_hh
    grads["b_hh"] = d_b_hh
    return loss, grads


# ----------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, model: NmnModel) -> "AdamState":
        t = model.tensors()
        return cls({k: np.zeros_like(a) for k, a in t.items()}, {k: np.zeros_like(a) for k, a in t.items()})


def adam_step(
    model: NmnModel,
    grads: dict,
    lr: float,
    state: AdamState,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place bias-corrected Adam update of the model tensors."""
    state.step += 1
    c1 = 1 - beta1**state.step
    c2 = 1 - beta2**state.step
    for name, w in model.tensors().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def learning_rate(cfg: TrainConfig, it: int) -> float:
    if cfg.lr_final is None or cfg.max_iters < 2:
        return cfg.lr
    u = it / (cfg.max_iters - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + np.cos(np.pi * u))


def _clip(grads: dict, limit: float | None) -> dict:
    if limit is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > limit:
        return {k: g * (limit / norm) for k, g in grads.items()}
    return grads


# ----------------------------------------------------------------------------- data


def inject_noise(inputs: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    out = inputs.copy()
    for sl, sd in ((ACCEL, cfg.noise_accel), (GYRO, cfg.noise_gyro), (Q, cfg.noise_encoder), (DQ, cfg.noise_joint_velocity)):
        out[..., sl] += rng.normal(size=out[..., sl].shape) * sd
    return out


def synthesize_dataset(
    n: int,
    seed: int,
    duration: float = 10.0,
    domain_randomization: bool = False,
    profiles: tuple[str, ...] = ("flat", "slippery", "soft"),
) -> list[Sequence]:
    """Noise-free labeled trajectories over a mix of terrain profiles."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        cfg = sim.TerrainConfig(
            profile=profiles[i % len(profiles)],
            duration=duration,
            command="zero" if rng.random() < 0.05 else "random",
            slip_probability=0.05,
            link_scale_range=0.05 if domain_randomization else 0.0,
        )
        out.append(Sequence.from_log(sim.generate(cfg, int(rng.integers(2**31)))))
    return out


def normalization(seqs: list[Sequence]) -> tuple[np.ndarray, np.ndarray]:
    data = np.concatenate([s.inputs for s in seqs])
    return data.mean(axis=0), np.maximum(data.std(axis=0), 1e-3)


def sample_windows(seqs: list[Sequence], count: int, length: int, rng: np.random.Generator) -> Batch:
    idx = rng.integers(len(seqs), size=count)
    ins, cs, vs = [], [], []
    for i in idx:
        s = seqs[i]
        if len(s) < length:
            raise ValueError(f"sequence shorter than seq_len={length}")
        a = int(rng.integers(len(s) - length + 1))
        ins.append(s.inputs[a : a + length])
        cs.append(s.contact[a : a + length])
        vs.append(s.velocity[a : a + length])
    return Batch(np.stack(ins), np.stack(cs), np.stack(vs))


# ----------------------------------------------------------------------------- evaluation


def f1_score(pred: np.ndarray, label: np.ndarray) -> float:
    pred, label = pred.astype(bool), label.astype(bool)
    tp = np.sum(pred & label)
    fp = np.sum(pred & ~label)
    fn = np.sum(~pred & label)
    return float(2 * tp / max(2 * tp + fp + fn, 1))


def evaluate_model(model: NmnModel, seqs: list[Sequence], cfg: TrainConfig, dt: float = 1.0 / sim.RATE) -> dict:
    """Loss, contact accuracy/F1 (after low-pass) and velocity error statistics."""
    losses, correct, total, l1 = [], 0, 0, []
    errs, preds, labels = [], [], []
    for s in seqs:
        logits, v_hat, _ = forward_batch(model, s.inputs[None], keep=False)
        losses.append(total_loss(logits, v_hat, s.contact[None], s.velocity[None], cfg))
        c_hat = sigmoid(logits[0])
        decision = contact_mod.nmn_contact(contact_mod.lpf_filter(c_hat, dt, contact_mod.CONTACT_CUTOFF))
        correct += int(np.sum((c_hat >= 0.5) == (s.contact > 0.5)))
        total += s.contact.size
        l1.append(np.mean(np.abs(v_hat[0] - s.velocity)))
        errs.append(v_hat[0] - s.velocity)
        preds.append(decision)
        labels.append(s.contact > 0.5)
    err = np.concatenate(errs)
    return {
        "loss": float(np.mean(losses)),
        "contact_accuracy": correct / total,
        "contact_f1": f1_score(np.concatenate(preds), np.concatenate(labels)),
        "velocity_l1": float(np.mean(l1)),
        "velocity_error_std": [float(x) for x in err.std(axis=0)],
    }


# ----------------------------------------------------------------------------- training loop


@dataclass
class TrainReport:
    config: dict
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_contact_accuracy: list = field(default_factory=list)
    val_velocity_l1: list = field(default_factory=list)
    best_iter: int = -1
    stopped_iter: int = -1
    wall_time: float = 0.0
    final: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def split(seqs: list[Sequence], val_fraction: float, rng: np.random.Generator):
    order = rng.permutation(len(seqs))
    n_val = int(round(val_fraction * len(seqs)))
    if val_fraction > 0 and len(seqs) > 1:
        n_val = max(n_val, 1)
    val = [seqs[i] for i in order[:n_val]]
    train = [seqs[i] for i in order[n_val:]]
    return train, val


def train(dataset: list[Sequence], cfg: TrainConfig, model: NmnModel | None = None):
    """Train and return (model, report).

    Each iteration draws fresh random windows from the training pool (with
    sensor-noise injection if enabled) and runs ``epochs_per_iter`` passes over
    them. With ``early_stopping`` the best-validation model is returned once
    validation loss stalls for ``patience`` iterations; otherwise the model
    after ``max_iters`` iterations is returned.
    """
    if not dataset:
        raise ValueError("empty dataset")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    train_set, val_set = split(dataset, cfg.val_fraction, rng)
    if not train_set:
        raise ValueError("no training sequences after the validation split")
    if model is None:
        model = nmn.init_model(rng, dataset[0].inputs.shape[1], cfg.hidden, cfg.mlp)
        model.norm_mean, model.norm_std = normalization(train_set)
    if cfg.noise_randomization:
        noise_rng = np.random.default_rng(cfg.seed + 1)
        val_set = [Sequence(inject_noise(s.inputs, cfg, noise_rng), s.contact, s.velocity) for s in val_set]
    adam = AdamState.zeros(model)
    report = TrainReport(asdict(cfg))
    best, best_loss, since_best = model.copy(), np.inf, 0
    for it in range(cfg.max_iters):
        pool = sample_windows(train_set, cfg.windows_per_iter, cfg.seq_len, rng)
        if cfg.noise_randomization:
            pool.inputs = inject_noise(pool.inputs, cfg, rng)
        losses = []
        lr = learning_rate(cfg, it)
        for _ in range(cfg.epochs_per_iter):
            order = rng.permutation(cfg.windows_per_iter)
            for b0 in range(0, cfg.windows_per_iter, cfg.batch_size):
                sel = order[b0 : b0 + cfg.batch_size]
                batch = Batch(pool.inputs[sel], pool.contact[sel], pool.velocity[sel])
                loss, grads = backward(model, batch, cfg)
                adam_step(model, _clip(grads, cfg.grad_clip), lr, adam)
                losses.append(loss)
        report.train_loss.append(float(np.mean(losses)))
        if val_set:
            ev = evaluate_model(model, val_set, cfg)
            report.val_loss.append(ev["loss"])
            report.val_contact_accuracy.append(ev["contact_accuracy"])
            report.val_velocity_l1.append(ev["velocity_l1"])
            if ev["loss"] < best_loss:
                best, best_loss, since_best = model.copy(), ev["loss"], 0
                report.best_iter = it
            else:
                since_best += 1
            log.info("iter %d train %.4f val %.4f acc %.4f", it, report.train_loss[-1], ev["loss"], ev["contact_accuracy"])
        report.stopped_iter = it
        if cfg.early_stopping and val_set and since_best >= cfg.patience:
            break
    if cfg.early_stopping and val_set:
        model = best
    if val_set:
        report.final = evaluate_model(model, val_set, cfg)
    report.wall_time = time.perf_counter() - start
    return model, report
