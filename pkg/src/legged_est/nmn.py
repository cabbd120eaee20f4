"""Neural measurement network: GRU followed by an MLP head.

Input per tick is ``m_t = [accel(3), gyro(3), q(12), dq(12), q_des_prev(12)]``.
Outputs are 4 contact logits (sigmoid -> probabilities) and the body-frame
linear velocity (3). The GRU gate order is ``z, r, n`` with::

    z  = sigmoid(W_z x + b_iz + U_z h + b_hz)
    r  = sigmoid(W_r x + b_ir + U_r h + b_hr)
    n  = tanh(W_n x + b_in + r * (U_n h + b_hn))
    h' = (1 - z) * n + z * h

The MLP consumes ``concat(h', normalized x)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

INPUT_DIM = 42
HIDDEN = 128
MLP_HIDDEN = (256, 128)
NUM_FEET = 4
OUTPUT_DIM = NUM_FEET + 3
FORMAT_VERSION = 1
GATE_ORDER = "z,r,n"


class ModelFormatError(ValueError):
    """Weight file cannot be parsed or has inconsistent tensor shapes."""


@dataclass
class NmnModel:
    w_ih: np.ndarray  # (3H, I)
    w_hh: np.ndarray  # (3H, H)
    b_ih: np.ndarray  # (3H,)
    b_hh: np.ndarray  # (3H,)
    layers: list[tuple[np.ndarray, np.ndarray]]  # (out, in) weights and biases
    norm_mean: np.ndarray
    norm_std: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w_ih.shape[0] // 3

    @property
    def input_dim(self) -> int:
        return self.w_ih.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name (views, not copies)."""
        out = {"w_ih": self.w_ih, "w_hh": self.w_hh, "b_ih": self.b_ih, "b_hh": self.b_hh}
        for i, (w, b) in enumerate(self.layers):
            out[f"mlp{i}.w"] = w
            out[f"mlp{i}.b"] = b
        return out

    def copy(self) -> "NmnModel":
        return NmnModel(
            self.w_ih.copy(),
            self.w_hh.copy(),
            self.b_ih.copy(),
            self.b_hh.copy(),
            [(w.copy(), b.copy()) for w, b in self.layers],
            self.norm_mean.copy(),
            self.norm_std.copy(),
        )

    def validate(self) -> None:
        H, I = self.hidden, self.input_dim
        expect = {
            "gru.w_ih": (self.w_ih, (3 * H, I)),
            "gru.w_hh": (self.w_hh, (3 * H, H)),
            "gru.b_ih": (self.b_ih, (3 * H,)),
            "gru.b_hh": (self.b_hh, (3 * H,)),
            "norm.mean": (self.norm_mean, (I,)),
            "norm.std": (self.norm_std, (I,)),
        }
        for name, (arr, shape) in expect.items():
            if arr.shape != shape:
                raise ModelFormatError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        fan_in = H + I
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or w.shape[1] != fan_in:
                raise ModelFormatError(f"tensor mlp.layers[{i}].w has shape {w.shape}, expected (*, {fan_in})")
            if b.shape != (w.shape[0],):
                raise ModelFormatError(f"tensor mlp.layers[{i}].b has shape {b.shape}, expected ({w.shape[0]},)")
            fan_in = w.shape[0]
        if fan_in != OUTPUT_DIM:
            raise ModelFormatError(f"tensor mlp.layers[-1].w produces {fan_in} outputs, expected {OUTPUT_DIM}")
        for name, arr in self.tensors().items():
            if not np.all(np.isfinite(arr)):
                raise ModelFormatError(f"tensor {name} has non-finite entries")
        if not np.all(self.norm_std > 0):
            raise ModelFormatError("tensor norm.std must be positive")


@dataclass
class NmnOutput:
    c_hat: np.ndarray
    v_hat: np.ndarray
    h: np.ndarray
    logits: np.ndarray


def init_model(
    rng: np.random.Generator,
    input_dim: int = INPUT_DIM,
    hidden: int = HIDDEN,
    mlp: tuple[int, ...] = MLP_HIDDEN,
) -> NmnModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    k = 1.0 / np.sqrt(hidden)
    uni = lambda shape, bound: rng.uniform(-bound, bound, size=shape)
    layers = []
    fan_in = hidden + input_dim
    for width in (*mlp, OUTPUT_DIM):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((uni((width, fan_in), bound), uni(width, bound)))
        fan_in = width
    return NmnModel(
        uni((3 * hidden, input_dim), k),
        uni((3 * hidden, hidden), k),
        uni(3 * hidden, k),
        uni(3 * hidden, k),
        layers,
        np.zeros(input_dim),
        np.ones(input_dim),
    )


def zero_model(input_dim: int = INPUT_DIM, hidden: int = HIDDEN, mlp: tuple[int, ...] = MLP_HIDDEN) -> NmnModel:
    m = init_model(np.random.default_rng(0), input_dim, hidden, mlp)
    for arr in m.tensors().values():
        arr[...] = 0.0
    return m


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def gru_step(model: NmnModel, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU update on an already normalized input (works on batches too)."""
    H = model.hidden
    gi = x @ model.w_ih.T + model.b_ih
    gh = h @ model.w_hh.T + model.b_hh
    z = sigmoid(gi[..., :H] + gh[..., :H])
    r = sigmoid(gi[..., H : 2 * H] + gh[..., H : 2 * H])
    n = np.tanh(gi[..., 2 * H :] + r * gh[..., 2 * H :])
    return (1.0 - z) * n + z * h


def mlp_head(model: NmnModel, features: np.ndarray) -> np.ndarray:
    a = features
    last = len(model.layers) - 1
    for i, (w, b) in enumerate(model.layers):
        a = a @ w.T + b
        if i < last:
            a = elu(a)
    return a


def normalize(model: NmnModel, m: np.ndarray) -> np.ndarray:
    return (m - model.norm_mean) / model.norm_std


def forward(model: NmnModel, m: np.ndarray, h: np.ndarray | None = None) -> NmnOutput:
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite network input")
    if h is None:
        h = np.zeros(model.hidden)
    x = normalize(model, m)
    h_new = gru_step(model, x, h)
    out = mlp_head(model, np.concatenate([h_new, x], axis=-1))
    logits = out[..., :NUM_FEET]
    return NmnOutput(sigmoid(logits), out[..., NUM_FEET:], h_new, logits)


def run_sequence(model: NmnModel, inputs: np.ndarray, h0: np.ndarray | None = None):
    """Run the network over a (T, I) stream. Returns (c_hat, v_hat) arrays."""
    inputs = np.asarray(inputs, dtype=float)
    if not np.all(np.isfinite(inputs)):
        raise ValueError("non-finite network input")
    x = normalize(model, inputs)
    H = model.hidden
    gi_all = x @ model.w_ih.T + model.b_ih
    h = np.zeros(H) if h0 is None else np.asarray(h0, dtype=float)
    hs = np.empty((len(x), H))
    w_hh, b_hh = model.w_hh, model.b_hh
    for t in range(len(x)):
        gi = gi_all[t]
        gh = w_hh @ h + b_hh
        z = sigmoid(gi[:H] + gh[:H])
        r = sigmoid(gi[H : 2 * H] + gh[H : 2 * H])
        n = np.tanh(gi[2 * H :] + r * gh[2 * H :])
        h = (1.0 - z) * n + z * h
        hs[t] = h
    out = mlp_head(model, np.concatenate([hs, x], axis=1))
    return sigmoid(out[:, :NUM_FEET]), out[:, NUM_FEET:]


def to_dict(model: NmnModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "norm": {"mean": model.norm_mean.tolist(), "std": model.norm_std.tolist()},
        "gru": {
            "w_ih": model.w_ih.tolist(),
            "w_hh": model.w_hh.tolist(),
            "b_ih": model.b_ih.tolist(),
            "b_hh": model.b_hh.tolist(),
            "gate_order": GATE_ORDER,
        },
        "mlp": {"layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in model.layers]},
    }


def _array(data, name: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"tensor {name} is not a numeric array") from exc
    if arr.ndim != ndim:
        raise ModelFormatError(f"tensor {name} has {arr.ndim} dimensions, expected {ndim}")
    return arr


def from_dict(data: dict) -> NmnModel:
    try:
        if data["format_version"] != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format_version {data['format_version']}")
        gru = data["gru"]
        if gru.get("gate_order", GATE_ORDER) != GATE_ORDER:
            raise ModelFormatError(f"gate_order must be {GATE_ORDER!r}")
        model = NmnModel(
            _array(gru["w_ih"], "gru.w_ih", 2),
            _array(gru["w_hh"], "gru.w_hh", 2),
            _array(gru["b_ih"], "gru.b_ih", 1),
            _array(gru["b_hh"], "gru.b_hh", 1),
            [
                (_array(L["w"], f"mlp.layers[{i}].w", 2), _array(L["b"], f"mlp.layers[{i}].b", 1))
                for i, L in enumerate(data["mlp"]["layers"])
            ],
            _array(data["norm"]["mean"], "norm.mean", 1),
            _array(data["norm"]["std"], "norm.std", 1),
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"missing or malformed field: {exc}") from exc
    model.validate()
    return model


def save_model(model: NmnModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(model), fh)


def load_model(path: str | Path) -> NmnModel:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"cannot parse weight file {path}: {exc}") from exc
    return from_dict(data)


def default_model_path() -> Path:
    return Path(str(resources.files("legged_est.data").joinpath("nmn_default.json")))


def load_default_model() -> NmnModel:
    return load_model(default_model_path())
