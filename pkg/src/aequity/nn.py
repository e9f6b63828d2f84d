"""Small dense-network engine: Glorot init, forward/backward passes, Adam and training loops.

All parameters of a network live in one contiguous float64 buffer; the per-layer
weight matrices and bias vectors are views into it. That keeps the Adam update a
handful of vector operations, which matters because learning curves train
thousands of tiny networks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError

ACTIVATIONS = ("relu", "sigmoid", "identity")
LOSS_KINDS = ("mse", "binary_cross_entropy")


@dataclass
class NetworkParams:
    layer_dims: list[int]
    activations: list[str]
    flat: np.ndarray
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    @classmethod
    def from_flat(cls, layer_dims, activations, flat):
        weights, biases = _views(layer_dims, flat)
        return cls(list(layer_dims), list(activations), flat, weights, biases)

    @classmethod
    def zeros_like(cls, other):
        return cls.from_flat(other.layer_dims, other.activations, np.zeros_like(other.flat))

    def copy(self):
        return NetworkParams.from_flat(self.layer_dims, self.activations, self.flat.copy())

    @property
    def input_width(self):
        return self.layer_dims[0]

    @property
    def output_width(self):
        return self.layer_dims[-1]


def _n_params(layer_dims):
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def _views(layer_dims, flat):
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out])
        pos += fan_out
    return weights, biases


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    early_stop_patience: int = 5
    early_stop_min_delta: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_kind: str = "mse"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("batch_size", "max_epochs", "early_stop_patience"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value}")
        if not self.early_stop_min_delta > 0:
            raise ConfigError("early_stop_min_delta must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")

    @classmethod
    def classifier(cls, **kw):
        kw.setdefault("max_epochs", 30)
        kw.setdefault("loss_kind", "binary_cross_entropy")
        return cls(**kw)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def for_params(cls, params: NetworkParams):
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0)


@dataclass
class TrainResult:
    params: NetworkParams
    trace: list[float]
    final_loss: float
    val_trace: list[float] = field(default_factory=list)
    best_epoch: int | None = None


def init_network(layer_dims, activations=None, seed=0) -> NetworkParams:
    """Glorot-uniform weights, zero biases. ``activations`` defaults to ReLU hidden
    layers with an identity output."""
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ConfigError(f"invalid layer_dims {layer_dims}")
    n_layers = len(layer_dims) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    activations = list(activations)
    if len(activations) != n_layers:
        raise ConfigError(f"need {n_layers} activations, got {len(activations)}")
    bad = [a for a in activations if a not in ACTIVATIONS]
    if bad:
        raise ConfigError(f"unknown activations {bad}")

    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    flat = np.zeros(_n_params(layer_dims))
    params = NetworkParams.from_flat(layer_dims, activations, flat)
    for w in params.weights:
        bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def autoencoder_dims(input_dim, hidden=(64,), latent=2):
    hidden = list(hidden)
    return [input_dim, *hidden, latent, *reversed(hidden), input_dim]


def init_autoencoder(input_dim, seed, hidden=(64,), latent=2):
    return init_network(autoencoder_dims(input_dim, hidden, latent), seed=seed)


def init_classifier(input_dim, seed, hidden=(64, 32)):
    dims = [input_dim, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["sigmoid"]
    return init_network(dims, acts, seed=seed)


def _sigmoid(z):
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    return z


def forward(params: NetworkParams, batch):
    """Returns ``(outputs, cache)``. ``cache`` holds ``(pre_activations, activations)``
    where ``activations[0]`` is the input batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_width:
        raise DataError(f"batch shape {batch.shape} does not match input width {params.input_width}")
    pre, acts = [], [batch]
    a = batch
    # overflow is reported below with the offending layer, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for w, b, kind in zip(params.weights, params.biases, params.activations):
            z = a @ w
            z += b
            a = _activate(z, kind)
            pre.append(z)
            acts.append(a)
    if not np.isfinite(a).all():
        for i, layer_out in enumerate(acts[1:]):
            if not np.isfinite(layer_out).all():
                raise NumericError(f"non-finite activations in layer {i}", layer=i)
    return a, (pre, acts)


def predict(params, batch):
    return forward(params, batch)[0]


def _loss_and_delta(out, z_last, target, loss_kind, last_activation):
    n = out.shape[0]
    if loss_kind == "mse":
        diff = out - target
        loss = float(np.mean(diff * diff))
        return loss, diff * (2.0 / diff.size), False
    # Binary cross-entropy, evaluated on logits when the head is a sigmoid.
    if last_activation == "sigmoid":
        z = z_last
        loss = float(np.mean(np.logaddexp(0.0, z) - target * z))
        return loss, (out - target) / out.size, True
    p = np.clip(out, 1e-12, 1 - 1e-12)
    loss = float(-np.mean(target * np.log(p) + (1 - target) * np.log(1 - p)))
    return loss, (p - target) / (p * (1 - p)) / out.size, False


def backprop_grads(params: NetworkParams, batch_in, batch_target, loss_kind="mse", out=None):
    """Exact gradients of the mean loss. Returns ``(grads, loss)``; ``grads`` is a
    NetworkParams with the same layout as ``params``.

    ``out`` may be a preallocated gradient NetworkParams to write into."""
    batch_target = np.asarray(batch_target, dtype=np.float64)
    if batch_target.ndim == 1:
        batch_target = batch_target[:, None]
    y, (pre, acts) = forward(params, batch_in)
    if batch_target.shape != y.shape:
        raise DataError(f"target shape {batch_target.shape} != output shape {y.shape}")
    if loss_kind == "binary_cross_entropy" and not np.isin(batch_target, (0.0, 1.0)).all():
        raise DataError("binary_cross_entropy targets must be 0 or 1")
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss_kind {loss_kind!r}")

    grads = out if out is not None else NetworkParams.zeros_like(params)
    loss, delta, at_logits = _loss_and_delta(y, pre[-1], batch_target, loss_kind, params.activations[-1])
    for layer in range(len(params.weights) - 1, -1, -1):
        kind = params.activations[layer]
        if not (layer == len(params.weights) - 1 and at_logits):
            if kind == "relu":
                delta = delta * (pre[layer] > 0)
            elif kind == "sigmoid":
                a = acts[layer + 1]
                delta = delta * a * (1.0 - a)
        np.matmul(acts[layer].T, delta, out=grads.weights[layer])
        np.sum(delta, axis=0, out=grads.biases[layer])
        if layer:
            delta = delta @ params.weights[layer].T
    if not np.isfinite(grads.flat).all():
        raise NumericError("non-finite gradients")
    return grads, loss


def adam_update(params: NetworkParams, grads: NetworkParams, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam step, applied in place. Returns ``(params, state)``."""
    if grads.flat.shape != params.flat.shape:
        raise DataError("gradient layout does not match parameters")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    g = grads.flat
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    params.flat -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return params, state


def batch_order(n_rows, epoch, seed):
    """Row permutation for one epoch; a pure function of ``(seed, epoch)``."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(epoch)])
    return rng.permutation(n_rows)


def mean_loss(params, x, y, loss_kind="mse"):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    out, (pre, _) = forward(params, x)
    return _loss_and_delta(out, pre[-1], y, loss_kind, params.activations[-1])[0]


class _Workspace:
    """Preallocated buffers for one network and one batch size."""

    def __init__(self, params, batch_size):
        self.z = [np.empty((batch_size, w.shape[1])) for w in params.weights]
        self.a = [np.empty((batch_size, w.shape[1])) for w in params.weights]
        self.delta = [np.empty((batch_size, w.shape[1])) for w in params.weights]
        self.mask = [np.empty((batch_size, w.shape[1]), dtype=bool) for w in params.weights]
        self.grads = NetworkParams.zeros_like(params)
        self.tmp = np.empty_like(params.flat)
        self.tmp2 = np.empty_like(params.flat)


def _step(params, ws, xb, yb, loss_kind, state, cfg):
    """Forward, backward and Adam update for one mini-batch without argument checks.

    Numerically the same computation as ``backprop_grads`` followed by
    ``adam_update``; returns the batch loss."""
    nb = xb.shape[0]
    n_layers = len(params.weights)
    a = xb
    for i in range(n_layers):
        z = ws.z[i][:nb]
        np.matmul(a, params.weights[i], out=z)
        z += params.biases[i]
        kind = params.activations[i]
        out = ws.a[i][:nb]
        if kind == "relu":
            np.maximum(z, 0.0, out=out)
        elif kind == "sigmoid":
            out[...] = _sigmoid(z)
        else:
            out = z
        a = out
    last = n_layers - 1
    delta = ws.delta[last][:nb]
    if loss_kind == "mse":
        np.subtract(a, yb, out=delta)
        loss = float(np.vdot(delta, delta)) / delta.size
        delta *= 2.0 / delta.size
        at_logits = False
    else:
        loss, d, at_logits = _loss_and_delta(a, ws.z[last][:nb], yb, loss_kind, params.activations[last])
        delta[...] = d
    g = ws.grads
    for i in range(last, -1, -1):
        kind = params.activations[i]
        if not (i == last and at_logits):
            if kind == "relu":
                mask = ws.mask[i][:nb]
                np.greater(ws.z[i][:nb], 0.0, out=mask)
                delta *= mask
            elif kind == "sigmoid":
                s = ws.a[i][:nb]
                delta *= s * (1.0 - s)
        prev = xb if i == 0 else (ws.a[i - 1][:nb] if params.activations[i - 1] != "identity" else ws.z[i - 1][:nb])
        np.matmul(prev.T, delta, out=g.weights[i])
        np.sum(delta, axis=0, out=g.biases[i])
        if i:
            nxt = ws.delta[i - 1][:nb]
            np.matmul(delta, params.weights[i].T, out=nxt)
            delta = nxt

    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.step_count += 1
    t = state.step_count
    m, v, gf, tmp, tmp2 = state.first_moment, state.second_moment, g.flat, ws.tmp, ws.tmp2
    m *= b1
    np.multiply(gf, 1.0 - b1, out=tmp)
    m += tmp
    v *= b2
    np.multiply(gf, gf, out=tmp)
    tmp *= 1.0 - b2
    v += tmp
    # m_hat / (sqrt(v_hat) + eps), same operation order as adam_update
    np.divide(m, 1.0 - b1 ** t, out=tmp)
    np.divide(v, 1.0 - b2 ** t, out=tmp2)
    np.sqrt(tmp2, out=tmp2)
    tmp2 += cfg.adam_eps
    np.divide(tmp, tmp2, out=tmp)
    tmp *= cfg.learning_rate
    params.flat -= tmp
    return loss


def train(params: NetworkParams, x, y, cfg: TrainConfig, val=None, seed=0) -> TrainResult:
    """Mini-batch Adam training, modifying ``params`` in place.

    With ``loss_kind='mse'`` and no ``val`` the run stops once the epoch loss has
    failed to improve on its best by a relative ``early_stop_min_delta`` for
    ``early_stop_patience`` consecutive epochs. With ``val=(x_val, y_val)`` and
    binary cross-entropy, the parameters from the epoch with the best validation
    AUROC are returned.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n = x.shape[0]
    if n == 0:
        raise DataError("cannot train on empty data")
    if y.shape[0] != n:
        raise DataError("x and y row counts differ")

    if x.shape[1] != params.input_width or y.shape[1] != params.output_width:
        raise DataError(f"data shapes {x.shape}, {y.shape} do not fit network {params.layer_dims}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("training data contains non-finite values")
    if cfg.loss_kind == "binary_cross_entropy" and not np.isin(y, (0.0, 1.0)).all():
        raise DataError("binary_cross_entropy targets must be 0 or 1")

    state = AdamState.for_params(params)
    bs = cfg.batch_size
    ws = _Workspace(params, min(bs, n))
    trace, val_trace = [], []
    best, wait = np.inf, 0
    best_auc, best_params, best_epoch = -np.inf, None, None
    use_val = val is not None and cfg.loss_kind == "binary_cross_entropy"
    if use_val:
        from .metrics import auroc

        x_val = np.asarray(val[0], dtype=np.float64)
        y_val = np.asarray(val[1]).ravel()

    for epoch in range(cfg.max_epochs):
        order = batch_order(n, epoch, seed)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            total += _step(params, ws, x[idx], y[idx], cfg.loss_kind, state, cfg) * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss) or not np.isfinite(params.flat).all():
            forward(params, x)  # names the failing layer
            raise NumericError(f"non-finite training loss in epoch {epoch}")
        trace.append(epoch_loss)

        if use_val:
            auc = auroc(predict(params, x_val).ravel(), y_val)
            val_trace.append(auc)
            if auc > best_auc:
                best_auc, best_params, best_epoch, wait = auc, params.copy(), epoch, 0
            else:
                wait += 1
        else:
            if epoch_loss < best * (1.0 - cfg.early_stop_min_delta):
                best, wait = epoch_loss, 0
            else:
                wait += 1
        if wait >= cfg.early_stop_patience:
            break

    if use_val and best_params is not None:
        params.flat[...] = best_params.flat
    final = mean_loss(params, x, y, cfg.loss_kind)
    return TrainResult(params, trace, final, val_trace, best_epoch)
