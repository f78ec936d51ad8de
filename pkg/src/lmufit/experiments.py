"""Task runners shared by the CLI and the test suite.

Each runner takes a loaded config (see :mod:`lmufit.config`), trains with
:func:`lmufit.train.fit`, and writes into an output directory:

* ``history.jsonl`` -- one line per epoch
* ``result.json``   -- final metrics, reference value, reproduction stanza
* ``model.ckpt`` / ``optimizer.ckpt`` -- binary checkpoints
"""
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, data as dataset
from .checkpoint import save_model, save_optimizer
from .dn import decoder, delay_lti
from .layers import Dense, LmuFitLayer, Sequential
from .lti import scan_sequential
from .numerics import seeded_rng
from .train import AdamState, TrainConfig, evaluate, fit, nrmse

DATA_ENV = "LMUFIT_DATA_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# published numbers, echoed in result.json for comparison only
REFERENCE = {
    "mackey": {"metric": "test_nrmse", "value": 0.044},
    "psmnist": {"metric": "test_accuracy", "value": 0.9849},
}


class MissingDataError(FileNotFoundError):
    pass


def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def reproduction(argv=None, seeds=None, config=None):
    return {
        "command": ["lmufit", *(sys.argv[1:] if argv is None else argv)],
        "seeds": seeds or {},
        "config": config,
        "version": version_string(),
    }


def data_dir(override=None):
    return Path(override or os.environ.get(DATA_ENV) or "data")


def find_mnist(root):
    """Locate the four MNIST IDX files (plain or ``.gz``) under ``root``."""
    root = Path(root)
    found, missing = {}, []
    for key, stem in MNIST_FILES.items():
        for name in (stem, stem + ".gz"):
            if (root / name).is_file():
                found[key] = root / name
                break
        else:
            missing.append(stem)
    if missing:
        raise MissingDataError(
            f"MNIST files not found in {root}: {', '.join(missing)}. "
            f"Run `lmufit fetch --dest {root}` or point {DATA_ENV} at a directory holding them."
        )
    return found


# ---------------------------------------------------------------- delay sweep

def delay_signal(kind, n, seed, cutoff=dataset.DEFAULT_CUTOFF):
    if kind == "bandlimited":
        return dataset.bandlimited_noise(seeded_rng(seed), n, cutoff)
    if kind == "constant":
        return np.ones(n)
    raise ValueError(f"unknown signal kind {kind!r}")


def reconstruction_nrmse(u, d, theta, theta_prime=None, skip=None):
    """NRMSE of decoding ``u(t - theta_prime)`` from the state driven by ``u``.

    Samples before ``skip`` (default ``theta``, rounded up) are excluded.
    """
    theta_prime = theta if theta_prime is None else theta_prime
    lag = int(round(theta_prime))
    if abs(lag - theta_prime) > 1e-12:
        raise ValueError("theta_prime must be a whole number of steps")
    skip = int(math.ceil(theta)) if skip is None else int(skip)
    skip = max(skip, lag)
    u = np.asarray(u, dtype=np.float64)
    if skip >= len(u):
        raise ValueError(f"signal of length {len(u)} too short to skip {skip} steps")
    m = scan_sequential(delay_lti(d, theta), u[None, :, None])[0]
    y = m @ decoder(d, theta_prime, theta).coeffs
    return nrmse(y[skip:], u[skip - lag:len(u) - lag])


def delay_sweep(theta, orders, signal_seed=0, length=4096, signal="bandlimited",
                cutoff=dataset.DEFAULT_CUTOFF, skip=None):
    u = delay_signal(signal, length, signal_seed, cutoff)
    if skip is None and signal == "constant":
        # judge the steady state, after the start-up transient has died out
        skip = min(int(20 * theta), length // 2)
    return [(int(d), reconstruction_nrmse(u, d, theta, skip=skip)) for d in orders]


# ---------------------------------------------------------------- models

def build_model(m, d_x, d_out, head_activation, seed):
    rng = seeded_rng(seed)
    lmu = LmuFitLayer(
        d_x, m.get("d_u", 1), m["d"], m["theta"], m["d_o"],
        f1=m.get("f1", "identity"), f2=m.get("f2", "tanh"),
        mode=m.get("mode", "parallel"),
        return_sequences=m.get("return_sequences", False),
        conv=m.get("conv", "fft"), gated=m.get("gated", False), rng=rng,
    )
    layers = [lmu]
    width = m["d_o"]
    for h in _as_list(m.get("hidden", [])):
        layers.append(Dense(width, h, m.get("hidden_activation", "relu"), rng=rng))
        width = h
    layers.append(Dense(width, d_out, head_activation, rng=rng))
    return Sequential(layers)


def _as_list(v):
    if v in (None, "", 0):
        return []
    return list(v) if isinstance(v, list) else [v]


def _train_config(t, loss, metrics, epochs=None):
    return TrainConfig(
        epochs=int(epochs or t.get("epochs", 10)),
        batch_size=int(t.get("batch_size", 32)),
        seed=int(t.get("seed", 0)),
        loss=loss, metrics=metrics,
        lr=float(t.get("lr", 1e-3)),
        lr_drop_epoch=int(t.get("lr_drop_epoch", 0)),
        clip_norm=float(t.get("clip_norm", 0.0)),
        weight_decay=float(t.get("weight_decay", 0.0)),
    )


def _finish(out, name, model, state, history, final, cfg, argv):
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.ckpt", model)
    save_optimizer(out / "optimizer.ckpt", state)
    result = {
        "task": name,
        "final": final,
        "epochs": len(history),
        "n_params": model.n_params,
        "reproduce": reproduction(argv, {"train": cfg["train"].get("seed", 0),
                                         "data": cfg["data"].get("seed", 0)},
                                  _public(cfg)),
    }
    if name in REFERENCE:
        result["reference"] = REFERENCE[name]
    with open(out / "result.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    return result


def _public(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# ---------------------------------------------------------------- tasks

def prepare_mackey(dcfg):
    mg = dataset.MackeyGlassConfig(
        length=int(dcfg.get("length", 5000)),
        horizon=int(dcfg.get("horizon", 15)),
        tau=float(dcfg.get("tau", 17.0)),
        warmup=float(dcfg.get("warmup", 1000.0)),
        seed=int(dcfg.get("seed", 0)),
    )
    series = dataset.mackey_glass(mg)
    train, test = dataset.chronological_split(
        series, int(dcfg.get("window", 100)), mg.horizon, float(dcfg.get("test_fraction", 0.2)))
    mu, sd = float(train.inputs.mean()), float(train.inputs.std())
    norm = lambda a: (a - mu) / sd  # noqa: E731
    return (dataset.LabeledDataset(norm(train.inputs), norm(train.targets), "train"),
            dataset.LabeledDataset(norm(test.inputs), norm(test.targets), "test"),
            lambda a: a * sd + mu)


def run_mackey(cfg, out, epochs=None, argv=None, on_epoch=None):
    out = Path(out)
    train, test, denorm = prepare_mackey(cfg["data"])
    seed = int(cfg["train"].get("seed", 0))
    model = build_model(cfg["model"], 1, 1, "identity", seed)
    tc = _train_config(cfg["train"], "mse", ("nrmse",), epochs)
    state = AdamState(lr=tc.lr)
    out.mkdir(parents=True, exist_ok=True)
    history = fit(model, train.inputs, train.targets, tc, eval_sets={"test": (test.inputs, test.targets)},
                  history_path=out / "history.jsonl", denorm=denorm, optimizer=state, on_epoch=on_epoch)
    final = {"test_nrmse": history[-1]["test_nrmse"],
             "train_nrmse": evaluate(model, train.inputs, train.targets, ("nrmse",), denorm)["nrmse"]}
    return _finish(out, "mackey", model, state, history, final, cfg, argv)


def prepare_psmnist(dcfg, root=None):
    files = find_mnist(data_dir(root or dcfg.get("dir")))
    images = dataset.load_idx(files["train_images"])
    labels = dataset.load_idx(files["train_labels"])
    test_images = dataset.load_idx(files["test_images"])
    test_labels = dataset.load_idx(files["test_labels"])
    limit = int(dcfg.get("train_limit", 0))
    if limit:
        images, labels = images[:limit], labels[:limit]
    tlimit = int(dcfg.get("test_limit", 0))
    if tlimit:
        test_images, test_labels = test_images[:tlimit], test_labels[:tlimit]
    split = dataset.psmnist(images, labels, int(dcfg.get("seed", 0)), test_images, test_labels,
                            val_size=int(dcfg.get("val_size", 0)), permute=bool(dcfg.get("permute", True)))
    if dcfg.get("standardize", True):
        tr = split["train"].inputs
        mu, sd = float(tr.mean()), float(tr.std())
        for key in ("train", "val", "test"):
            ds = split[key]
            ds.inputs = (ds.inputs - mu) / sd
    return split


def run_psmnist(cfg, out, epochs=None, argv=None, data_root=None, on_epoch=None):
    out = Path(out)
    split = prepare_psmnist(cfg["data"], data_root)
    seed = int(cfg["train"].get("seed", 0))
    model = build_model(cfg["model"], 1, 10, "softmax", seed)
    tc = _train_config(cfg["train"], "cross_entropy", ("accuracy",), epochs)
    state = AdamState(lr=tc.lr)
    evals = {"test": (split["test"].inputs, split["test"].targets)}
    if len(split["val"]):
        evals["val"] = (split["val"].inputs, split["val"].targets)
    out.mkdir(parents=True, exist_ok=True)
    history = fit(model, split["train"].inputs, split["train"].targets, tc, eval_sets=evals,
                  history_path=out / "history.jsonl", optimizer=state, on_epoch=on_epoch)
    final = {k: v for k, v in history[-1].items() if k.endswith("accuracy")}
    final["train_size"] = len(split["train"])
    final["test_size"] = len(split["test"])
    return _finish(out, "psmnist", model, state, history, final, cfg, argv)


def prepare_delay(dcfg):
    n = int(dcfg.get("length", 1000))
    theta = int(dcfg.get("delay", 50))
    samples = int(dcfg.get("samples", 64))
    cutoff = float(dcfg.get("cutoff", dataset.DEFAULT_CUTOFF))
    seed = int(dcfg.get("seed", 0))
    train = dataset.delay_task(seed, n, theta, samples, cutoff)
    test = dataset.delay_task(seed + 1, n, theta, max(samples // 4, 1), cutoff)
    test.split = "test"
    return train, test


def run_delay(cfg, out, epochs=None, argv=None, on_epoch=None):
    out = Path(out)
    train, test = prepare_delay(cfg["data"])
    m = dict(cfg["model"])
    m.setdefault("return_sequences", True)
    seed = int(cfg["train"].get("seed", 0))
    rng = seeded_rng(seed)
    model = Sequential([LmuFitLayer(
        1, m.get("d_u", 1), m["d"], m["theta"], 1, f1=m.get("f1", "identity"),
        f2=m.get("f2", "identity"), mode=m.get("mode", "parallel"),
        return_sequences=m["return_sequences"], conv=m.get("conv", "fft"), rng=rng)])
    tc = _train_config(cfg["train"], "mse", ("nrmse",), epochs)
    state = AdamState(lr=tc.lr)
    out.mkdir(parents=True, exist_ok=True)
    history = fit(model, train.inputs, train.targets, tc, eval_sets={"test": (test.inputs, test.targets)},
                  history_path=out / "history.jsonl", optimizer=state, on_epoch=on_epoch)
    final = {"test_nrmse": history[-1]["test_nrmse"],
             "train_nrmse": evaluate(model, train.inputs, train.targets, ("nrmse",))["nrmse"]}
    return _finish(out, "delay", model, state, history, final, cfg, argv)


TASKS = {"mackey": run_mackey, "psmnist": run_psmnist, "delay": run_delay}
