"""From-scratch logistic regression and a 32/16 ReLU MLP.

Forward passes, analytic gradients, Adam, and the flat parameter-vector
layout that federated aggregation exchanges. Numerical conventions:

  * sigmoid uses the overflow-free branch per sign and its output is
    kept strictly inside (0, 1) (floored at the smallest positive normal
    float, capped at 1 - 2**-53);
  * probabilities are clamped to [1e-12, 1 - 1e-12] before any log;
  * the ReLU derivative at exactly 0 is 0;
  * batch reductions run in a fixed order, so reruns are bit-identical.

Flat layouts (versioned by the layout tag, e.g. ``"mlp:d=24:v1"``):
LR is w then b (d + 1 values); MLP is W1 row-major, b1, W2, b2, W3, b3.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, DatasetError, LayoutError, TrainingDivergedError

HIDDEN1 = 32
HIDDEN2 = 16

PROB_CLAMP = _kernels.PROB_CLAMP
LAYOUT_VERSION = "v1"

_SIGMOID_FLOOR = float(np.finfo(np.float64).tiny)
_SIGMOID_CAP = 1.0 - 2.0**-53


# ---------------------------------------------------------------------------
# activations and loss
# ---------------------------------------------------------------------------


def sigmoid(z):
    """1 / (1 + e^-z), overflow-free, output strictly inside (0, 1)."""
    arr = np.asarray(z, dtype=np.float64)
    out = _kernels._sigmoid_vec(np.atleast_1d(arr))
    out = np.clip(out, _SIGMOID_FLOOR, _SIGMOID_CAP)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def bce_loss(y, y_hat):
    """Binary cross-entropy with the prediction clamped away from {0, 1}."""
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(np.asarray(y_hat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    out = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    return float(out) if out.ndim == 0 else out


def relu(z):
    out = np.maximum(np.asarray(z, dtype=np.float64), 0.0)
    return float(out) if out.ndim == 0 else out


def relu_derivative(z):
    """1 where z > 0, else 0 (including exactly at 0)."""
    out = np.where(np.asarray(z, dtype=np.float64) > 0.0, 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# model containers
# ---------------------------------------------------------------------------


@dataclass
class LinearModel:
    w: np.ndarray
    b: float


@dataclass
class MlpModel:
    W1: np.ndarray  # (32, d)
    b1: np.ndarray  # (32,)
    W2: np.ndarray  # (16, 32)
    b2: np.ndarray  # (16,)
    W3: np.ndarray  # (1, 16)
    b3: float


@dataclass
class MlpGradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: float


@dataclass
class MlpCache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: float


def _check_mlp_shapes(m: MlpModel) -> int:
    d = m.W1.shape[1]
    expected = {
        "W1": (HIDDEN1, d),
        "b1": (HIDDEN1,),
        "W2": (HIDDEN2, HIDDEN1),
        "b2": (HIDDEN2,),
        "W3": (1, HIDDEN2),
    }
    for name, shape in expected.items():
        if getattr(m, name).shape != shape:
            raise LayoutError(f"MLP field {name} has shape {getattr(m, name).shape}, expected {shape}")
    return d


# ---------------------------------------------------------------------------
# forward / gradient
# ---------------------------------------------------------------------------


def lr_forward(m: LinearModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != m.w.shape:
        raise LayoutError(f"input has shape {x.shape}, model expects {m.w.shape}")
    return sigmoid(float(m.w @ x) + m.b)


def lr_predict_proba(m: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != m.w.shape[0]:
        raise LayoutError(f"input has {X.shape[1]} features, model expects {m.w.shape[0]}")
    return sigmoid(X @ m.w + m.b)


def lr_gradient(m: LinearModel, X, y, l2_lambda: float = 0.0):
    """Mean-over-batch BCE gradient: ((1/B) X^T (p - y) + l2 w, (1/B) sum(p - y))."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise DatasetError("gradient of an empty batch is undefined")
    err = lr_predict_proba(m, X) - y
    inv = 1.0 / X.shape[0]
    grad_w = (X.T @ err) * inv + l2_lambda * m.w
    grad_b = float(np.sum(err) * inv)
    return grad_w, grad_b


def mlp_forward(m: MlpModel, x):
    """Single-sample forward pass; returns (probability, cache for backprop)."""
    d = _check_mlp_shapes(m)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise LayoutError(f"input has shape {x.shape}, model expects ({d},)")
    z1 = m.W1 @ x + m.b1
    a1 = np.maximum(z1, 0.0)
    z2 = m.W2 @ a1 + m.b2
    a2 = np.maximum(z2, 0.0)
    z3 = float(m.W3[0] @ a2) + m.b3
    prob = sigmoid(z3)
    return prob, MlpCache(x=x, z1=z1, a1=a1, z2=z2, a2=a2, z3=z3)


def mlp_predict_proba(m: MlpModel, X) -> np.ndarray:
    d = _check_mlp_shapes(m)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != d:
        raise LayoutError(f"input has {X.shape[1]} features, model expects {d}")
    A1 = np.maximum(X @ m.W1.T + m.b1, 0.0)
    A2 = np.maximum(A1 @ m.W2.T + m.b2, 0.0)
    return sigmoid(A2 @ m.W3[0] + m.b3)


def mlp_backprop(m: MlpModel, X, y) -> MlpGradients:
    """Mean-over-batch BCE gradients; the output delta is (p - y)."""
    d = _check_mlp_shapes(m)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise DatasetError("gradient of an empty batch is undefined")

    Z1 = X @ m.W1.T + m.b1
    A1 = np.maximum(Z1, 0.0)
    Z2 = A1 @ m.W2.T + m.b2
    A2 = np.maximum(Z2, 0.0)
    prob = sigmoid(A2 @ m.W3[0] + m.b3)

    d3 = prob - y
    D2 = np.where(Z2 > 0.0, d3[:, None] * m.W3[0][None, :], 0.0)
    D1 = np.where(Z1 > 0.0, D2 @ m.W2, 0.0)

    inv = 1.0 / X.shape[0]
    return MlpGradients(
        W1=(D1.T @ X) * inv,
        b1=D1.sum(axis=0) * inv,
        W2=(D2.T @ A1) * inv,
        b2=D2.sum(axis=0) * inv,
        W3=(d3 @ A2)[None, :] * inv,
        b3=float(d3.sum() * inv),
    )


# ---------------------------------------------------------------------------
# flat parameter vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout_tag: str


def make_layout_tag(family: str, d: int) -> str:
    if family not in ("lr", "mlp"):
        raise LayoutError(f"unknown model family {family!r}")
    return f"{family}:d={d}:{LAYOUT_VERSION}"


def parse_layout_tag(tag: str) -> tuple[str, int]:
    try:
        family, d_part, version = tag.split(":")
        d = int(d_part.removeprefix("d="))
    except ValueError:
        raise LayoutError(f"malformed layout tag {tag!r}") from None
    if family not in ("lr", "mlp") or not d_part.startswith("d=") or version != LAYOUT_VERSION:
        raise LayoutError(f"malformed layout tag {tag!r}")
    return family, d


def param_count(family: str, d: int) -> int:
    if family == "lr":
        return d + 1
    if family == "mlp":
        return HIDDEN1 * d + HIDDEN1 + HIDDEN2 * HIDDEN1 + HIDDEN2 + HIDDEN2 + 1
    raise LayoutError(f"unknown model family {family!r}")


def _validate(pv: ParamVector) -> tuple[str, int]:
    family, d = parse_layout_tag(pv.layout_tag)
    expected = param_count(family, d)
    if pv.values.shape != (expected,):
        raise LayoutError(
            f"{pv.layout_tag} expects {expected} values, got shape {pv.values.shape}"
        )
    return family, d


def flatten(model) -> ParamVector:
    if isinstance(model, LinearModel):
        values = np.concatenate([model.w, [model.b]]).astype(np.float64)
        return ParamVector(values, make_layout_tag("lr", model.w.shape[0]))
    if isinstance(model, MlpModel):
        d = _check_mlp_shapes(model)
        values = np.concatenate(
            [model.W1.ravel(), model.b1, model.W2.ravel(), model.b2, model.W3.ravel(), [model.b3]]
        ).astype(np.float64)
        return ParamVector(values, make_layout_tag("mlp", d))
    raise LayoutError(f"cannot flatten {type(model).__name__}")


def unflatten(pv: ParamVector):
    family, d = _validate(pv)
    vals = pv.values
    if family == "lr":
        return LinearModel(w=vals[:d].copy(), b=float(vals[d]))
    o1 = HIDDEN1 * d
    o2 = o1 + HIDDEN1
    o3 = o2 + HIDDEN2 * HIDDEN1
    o4 = o3 + HIDDEN2
    o5 = o4 + HIDDEN2
    return MlpModel(
        W1=vals[:o1].reshape(HIDDEN1, d).copy(),
        b1=vals[o1:o2].copy(),
        W2=vals[o2:o3].reshape(HIDDEN2, HIDDEN1).copy(),
        b2=vals[o3:o4].copy(),
        W3=vals[o4:o5].reshape(1, HIDDEN2).copy(),
        b3=float(vals[o5]),
    )


def init_params(family: str, d: int, seed: int) -> ParamVector:
    """Zeros for LR; Glorot-uniform weights and zero biases for the MLP."""
    if d < 1:
        raise ConfigError(f"feature count must be >= 1, got {d}")
    if family == "lr":
        return ParamVector(np.zeros(d + 1), make_layout_tag("lr", d))
    if family != "mlp":
        raise LayoutError(f"unknown model family {family!r}")
    rng = np.random.default_rng(seed)

    def glorot(fan_out, fan_in):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    model = MlpModel(
        W1=glorot(HIDDEN1, d),
        b1=np.zeros(HIDDEN1),
        W2=glorot(HIDDEN2, HIDDEN1),
        b2=np.zeros(HIDDEN2),
        W3=glorot(1, HIDDEN2),
        b3=0.0,
    )
    return flatten(model)


def predict_proba(pv: ParamVector, X) -> np.ndarray:
    family, _ = _validate(pv)
    model = unflatten(pv)
    if family == "lr":
        return lr_predict_proba(model, X)
    return mlp_predict_proba(model, X)


def save_params(pv: ParamVector, path) -> None:
    _validate(pv)
    with open(path, "w") as fh:
        json.dump({"layout_tag": pv.layout_tag, "values": pv.values.tolist()}, fh)


def load_params(path) -> ParamVector:
    with open(path) as fh:
        raw = json.load(fh)
    pv = ParamVector(np.asarray(raw["values"], dtype=np.float64), raw["layout_tag"])
    _validate(pv)
    return pv


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_init(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), t=0)


def adam_step(
    p: ParamVector,
    g: ParamVector,
    s: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if p.layout_tag != g.layout_tag:
        raise LayoutError(f"layout mismatch: {p.layout_tag} vs {g.layout_tag}")
    if s.m.shape != p.values.shape:
        raise LayoutError("Adam state length does not match parameters")
    t = s.t + 1
    m = beta1 * s.m + (1.0 - beta1) * g.values
    v = beta2 * s.v + (1.0 - beta2) * g.values**2
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    new_values = p.values - lr * mhat / (np.sqrt(vhat) + eps)
    return ParamVector(new_values, p.layout_tag), AdamState(m=m, v=v, t=t)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    l2_lambda: float = 0.0
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ConfigError("adam_epsilon must be positive")


def lr_train_defaults(epochs: int = 100, shuffle_seed: int = 0) -> TrainConfig:
    return TrainConfig(
        learning_rate=0.1,
        epochs=epochs,
        batch_size=64,
        l2_lambda=1e-4,
        optimizer="sgd",
        shuffle_seed=shuffle_seed,
    )


def mlp_train_defaults(epochs: int = 20, shuffle_seed: int = 0) -> TrainConfig:
    return TrainConfig(
        learning_rate=0.001,
        epochs=epochs,
        batch_size=64,
        l2_lambda=0.0,
        optimizer="adam",
        shuffle_seed=shuffle_seed,
    )


@dataclass(frozen=True)
class TrainResult:
    params: ParamVector
    epoch_losses: tuple[float, ...] = field(default=())


def train(model_family: str, ds, cfg: TrainConfig, init: ParamVector) -> TrainResult:
    """Mini-batch training from ``init``; one seeded reshuffle per epoch.

    LR trains with SGD plus L2, the MLP with Adam. The last short batch
    of each epoch is kept. The recorded per-epoch loss is the mean
    pre-update cross-entropy over the epoch's samples.
    """
    family, d_tag = parse_layout_tag(init.layout_tag)
    if family != model_family:
        raise LayoutError(f"init has family {family!r}, requested {model_family!r}")
    _validate(init)
    X = np.ascontiguousarray(ds.X, dtype=np.float64)
    y = np.ascontiguousarray(ds.y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise DatasetError("cannot train on an empty dataset")
    if X.shape[1] != d_tag:
        raise LayoutError(f"dataset has {X.shape[1]} features, init expects {d_tag}")
    if cfg.epochs == 0:
        return TrainResult(ParamVector(init.values.copy(), init.layout_tag), ())

    rng = np.random.default_rng(cfg.shuffle_seed)
    orders = np.empty((cfg.epochs, n), dtype=np.int64)
    for e in range(cfg.epochs):
        orders[e] = rng.permutation(n)

    if model_family == "lr":
        if cfg.optimizer != "sgd":
            raise ConfigError("logistic regression trains with optimizer='sgd'")
        w = init.values[:d_tag].copy()
        b, losses = _kernels.lr_train_epochs(
            X, y, w, float(init.values[d_tag]), cfg.learning_rate, cfg.l2_lambda, cfg.batch_size, orders
        )
        values = np.concatenate([w, [b]])
    else:
        if cfg.optimizer != "adam":
            raise ConfigError("the MLP trains with optimizer='adam'")
        values = init.values.copy()
        state_m = np.zeros_like(values)
        state_v = np.zeros_like(values)
        _, losses = _kernels.mlp_train_epochs(
            X,
            y,
            values,
            state_m,
            state_v,
            0,
            d_tag,
            HIDDEN1,
            HIDDEN2,
            cfg.learning_rate,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_epsilon,
            cfg.batch_size,
            orders,
        )

    bad = np.nonzero(~np.isfinite(losses))[0]
    if bad.size or not np.all(np.isfinite(values)):
        epoch = int(bad[0]) + 1 if bad.size else cfg.epochs
        raise TrainingDivergedError(epoch, cfg.learning_rate)
    return TrainResult(ParamVector(values, init.layout_tag), tuple(float(x) for x in losses))
