"""Losses, metrics, Adam, finite-difference gradient checks and the training loop."""
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError
from .numerics import seeded_rng


def mse_loss(pred, target):
    """Mean squared error over every element and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


_TINY = 1e-300


def cross_entropy_loss(probs, labels):
    """Mean negative log-likelihood of integer ``labels`` under row-wise ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError(f"need probs (N, k) and labels (N,), got {probs.shape} and {labels.shape}")
    N, k = probs.shape
    if N == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"class index outside [0, {k})")
    labels = labels.astype(np.intp)
    picked = np.maximum(probs[np.arange(N), labels], _TINY)
    grad = np.zeros_like(probs)
    grad[np.arange(N), labels] = -1.0 / (N * picked)
    return float(-np.mean(np.log(picked))), grad


def nrmse(pred, target):
    """Root-mean-square error divided by the root-mean-square of the target."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise DimensionError("prediction and target lengths differ")
    scale = math.sqrt(float(np.mean(target * target)))
    if scale == 0.0:
        raise ValueError("target has zero RMS; NRMSE undefined")
    return math.sqrt(float(np.mean((pred - target) ** 2))) / scale


def accuracy(probs, labels):
    return float(np.mean(np.argmax(probs, axis=-1) == np.asarray(labels)))


LOSSES = {"mse": mse_loss, "cross_entropy": cross_entropy_loss}


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def arrays(self):
        out = {}
        for k, a in self.m.items():
            out["m/" + k] = a
        for k, a in self.v.items():
            out["v/" + k] = a
        return out

    def hyper(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "epsilon": self.epsilon, "step": self.step}

    @classmethod
    def from_arrays(cls, hyper, arrays):
        state = cls(**hyper)
        for k, a in arrays.items():
            slot, name = k.split("/", 1)
            getattr(state, slot)[name] = np.array(a)
        return state


def adam_step(state, params, grads):
    """In-place Adam update of ``params`` (dict of arrays) from ``grads``."""
    if set(params) != set(grads):
        raise DimensionError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


def loss_and_grads(model, x, y, loss="mse"):
    pred = model.forward(x)
    value, g = LOSSES[loss](pred, y)
    model.backward(g)
    return value, pred


def grad_check(model, x, y, loss="mse", eps=1e-5, max_params=10_000):
    """Compare analytic gradients to central differences for every parameter entry.

    Returns a report with the worst per-array relative error
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
    """
    params = model.parameters()
    total = sum(p.size for p in params.values())
    if total > max_params:
        raise ValueError(f"{total} parameters exceeds grad_check limit {max_params}")
    loss_fn = LOSSES[loss]
    loss_and_grads(model, x, y, loss)
    analytic = {k: np.array(v) for k, v in model.gradients().items()}
    errors = {}
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn(model.forward(x), y)[0]
            flat[i] = old - eps
            down = loss_fn(model.forward(x), y)[0]
            flat[i] = old
            nflat[i] = (up - down) / (2 * eps)
        a = analytic[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-12)
        errors[name] = float(np.linalg.norm(a - numeric) / scale)
    worst = max(errors, key=errors.get)
    return {"max_rel_error": errors[worst], "worst_param": worst, "per_param": errors}


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    loss: str = "mse"
    metrics: tuple = ()
    lr: float = 0.001
    lr_drop_epoch: int = 0
    shuffle: bool = True
    clip_norm: float = 0.0  # global gradient-norm cap; 0 disables
    weight_decay: float = 0.0  # L2 coefficient added to the gradient; 0 disables

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.clip_norm < 0 or self.weight_decay < 0:
            raise ValueError("clip_norm and weight_decay must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        self.metrics = tuple(self.metrics)
        for m in self.metrics:
            if m not in METRICS:
                raise ValueError(f"unknown metric {m!r}")


def _metric_nrmse(pred, y, denorm):
    return nrmse(denorm(pred), denorm(y))


def _metric_accuracy(pred, y, denorm):
    return accuracy(pred, y)


METRICS = {"nrmse": _metric_nrmse, "accuracy": _metric_accuracy}


def predict(model, x, batch_size=256):
    outs = [model.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def evaluate(model, x, y, metrics, denorm=None, batch_size=256):
    denorm = denorm or (lambda a: a)
    pred = predict(model, x, batch_size)
    return {m: METRICS[m](pred, y, denorm) for m in metrics}


def _regularise(grads, params, config):
    if config.weight_decay:
        grads = {k: g + config.weight_decay * params[k] for k, g in grads.items()}
    if config.clip_norm:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > config.clip_norm:
            grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
    return grads


def fit(model, x, y, config, eval_sets=None, history_path=None, denorm=None,
        optimizer=None, on_epoch=None, start_epoch=1):
    """Mini-batch Adam training.

    ``eval_sets`` maps a prefix (e.g. ``"test"``) to ``(x, y)``; their metrics
    are recorded under ``"<prefix>_<metric>"`` after each epoch's timed pass.
    Every epoch appends one JSON line ``{epoch, loss, ..., wall_seconds}`` to
    ``history_path`` when given.

    To resume, pass the saved ``optimizer`` and ``start_epoch``; the shuffle
    stream is replayed so the run continues exactly where it stopped.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    rng = seeded_rng(config.seed)
    state = optimizer or AdamState(lr=config.lr)
    params = model.parameters()
    history = []
    regularised = config.weight_decay or config.clip_norm
    for _ in range(1, start_epoch):
        if config.shuffle:
            rng.permutation(n)
    sink = open(history_path, "w" if start_epoch == 1 else "a") if history_path else None
    try:
        for epoch in range(start_epoch, config.epochs + 1):
            if config.lr_drop_epoch and epoch == config.lr_drop_epoch:
                state.lr /= 10.0
            order = rng.permutation(n) if config.shuffle else np.arange(n)
            start = time.perf_counter()
            total, seen = 0.0, 0
            for lo in range(0, n, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                value, _ = loss_and_grads(model, x[idx], y[idx], config.loss)
                grads = model.gradients()
                if regularised:
                    grads = _regularise(grads, params, config)
                adam_step(state, params, grads)
                total += value * len(idx)
                seen += len(idx)
            wall = time.perf_counter() - start
            record = {"epoch": epoch, "loss": total / seen}
            for prefix, (ex, ey) in (eval_sets or {}).items():
                for k, val in evaluate(model, ex, ey, config.metrics, denorm).items():
                    record[f"{prefix}_{k}"] = val
            record["wall_seconds"] = wall
            history.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            if on_epoch:
                on_epoch(record)
    finally:
        if sink:
            sink.close()
    return history


def config_dict(config):
    return asdict(config)
