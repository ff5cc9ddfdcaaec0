"""Two-hidden-layer tanh network with exact reverse-mode gradients and Adam."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class MlpParams:
    """Layers [in, hidden, hidden, out]; ``arrays`` is [W1, b1, W2, b2, W3, b3] with W of shape (out, in)."""

    sizes: tuple
    arrays: list
    init_seed: int | None = None

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays)

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, [a.copy() for a in self.arrays], self.init_seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        i = 0
        for a in self.arrays:
            a[...] = vec[i:i + a.size].reshape(a.shape)
            i += a.size


def layer_sizes(d: int, out: int | None = None) -> tuple:
    return (1, 20 + d, 20 + d, d if out is None else out)


def init_mlp(sizes, seed: int = 0, zero: bool = False) -> MlpParams:
    """Glorot normal weights (std sqrt(2/(fan_in+fan_out))) and zero biases."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    arrays = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if zero:
            w = np.zeros((fan_out, fan_in))
        else:
            w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / (fan_in + fan_out))
        arrays += [w, np.zeros(fan_out)]
    return MlpParams(tuple(int(s) for s in sizes), arrays, int(seed))


def forward(params: MlpParams, v):
    """out = W3 tanh(W2 tanh(W1 v + b1) + b2) + b3 for a batch of scalars v, shape (n, out)."""
    w1, b1, w2, b2, w3, b3 = params.arrays
    x = np.asarray(v, dtype=float).reshape(-1, 1)
    a1 = np.tanh(x @ w1.T + b1)
    a2 = np.tanh(a1 @ w2.T + b2)
    return a2 @ w3.T + b3, (x, a1, a2)


def backward(params: MlpParams, cache, grad_out) -> list:
    """Gradients of sum(out * grad_out) for every array, in the order of ``params.arrays``."""
    w1, _, w2, _, w3, _ = params.arrays
    x, a1, a2 = cache
    g = np.asarray(grad_out, dtype=float).reshape(a2.shape[0], -1)
    gw3, gb3 = g.T @ a2, g.sum(axis=0)
    d2 = (g @ w3) * (1.0 - a2 * a2)
    gw2, gb2 = d2.T @ a1, d2.sum(axis=0)
    d1 = (d2 @ w2) * (1.0 - a1 * a1)
    gw1, gb1 = d1.T @ x, d1.sum(axis=0)
    return [gw1, gb1, gw2, gb2, gw3, gb3]


def predict(params: MlpParams, v):
    return forward(params, v)[0]


@dataclass
class TrainState:
    """Networks, trainable ergodic cost and Adam moments."""

    nets: list
    lambda_bar: float = 0.0
    lr: float = 3e-4
    K: float = 1.0
    step: int = 0
    lr_decay: bool = False
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    m_lambda: float = 0.0
    v_lambda: float = 0.0

    def __post_init__(self):
        if not self.m:
            self.m = [[np.zeros_like(a) for a in n.arrays] for n in self.nets]
            self.v = [[np.zeros_like(a) for a in n.arrays] for n in self.nets]
        self.lambda_bar = float(np.clip(self.lambda_bar, -self.K, self.K))

    def current_lr(self) -> float:
        return self.lr * 0.5 ** (self.step // 2500) if self.lr_decay else self.lr


def adam_step(state: TrainState, grads: list, grad_lambda: float) -> TrainState:
    """One Adam update of every network array and of lambda_bar, then clamp lambda_bar to [-K, K]."""
    lr = state.current_lr()
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - ADAM_BETA1 ** t, 1.0 - ADAM_BETA2 ** t
    for net, g_net, m_net, v_net in zip(state.nets, grads, state.m, state.v):
        for a, g, m, v in zip(net.arrays, g_net, m_net, v_net):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    gl = float(grad_lambda)
    state.m_lambda = ADAM_BETA1 * state.m_lambda + (1.0 - ADAM_BETA1) * gl
    state.v_lambda = ADAM_BETA2 * state.v_lambda + (1.0 - ADAM_BETA2) * gl * gl
    lam = state.lambda_bar - lr * (state.m_lambda / c1) / (math.sqrt(state.v_lambda / c2) + ADAM_EPS)
    state.lambda_bar = float(min(max(lam, -state.K), state.K))
    return state


# ---------------------------------------------------------------- checkpoints
#
# JSON document {"version", "lambda_bar", "step", "lr", "K", "lr_decay",
# "m_lambda", "v_lambda", "nets": [{"sizes", "init_seed", "arrays", "m", "v"}]}.
# Arrays are nested lists; Python's float repr makes the round trip exact.


def _dump_arrays(arrays):
    return [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in arrays]


def _load_arrays(items):
    return [np.asarray(it["data"], dtype=float).reshape(it["shape"]) for it in items]


def state_to_dict(state: TrainState) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "lambda_bar": state.lambda_bar,
        "step": state.step,
        "lr": state.lr,
        "K": state.K,
        "lr_decay": state.lr_decay,
        "m_lambda": state.m_lambda,
        "v_lambda": state.v_lambda,
        "nets": [{"sizes": list(n.sizes), "init_seed": n.init_seed, "arrays": _dump_arrays(n.arrays),
                  "m": _dump_arrays(m), "v": _dump_arrays(v)}
                 for n, m, v in zip(state.nets, state.m, state.v)],
    }


def state_from_dict(doc: dict) -> TrainState:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    nets = [MlpParams(tuple(n["sizes"]), _load_arrays(n["arrays"]), n["init_seed"]) for n in doc["nets"]]
    return TrainState(nets, doc["lambda_bar"], doc["lr"], doc["K"], doc["step"], doc["lr_decay"],
                      [_load_arrays(n["m"]) for n in doc["nets"]], [_load_arrays(n["v"]) for n in doc["nets"]],
                      doc["m_lambda"], doc["v_lambda"])


def save_checkpoint(state: TrainState, path, extra: dict | None = None):
    doc = state_to_dict(state)
    if extra:
        doc["meta"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[TrainState, dict]:
    doc = json.loads(Path(path).read_text())
    return state_from_dict(doc), doc.get("meta", {})
