"""Scaling benchmarks: instrumented op counts and training-epoch wall times."""
import os
import platform
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import _backend, lti
from .dn import delay_lti, impulse_response
from .layers import Dense, LmuFitLayer, Sequential
from .numerics import seeded_rng
from .train import AdamState, adam_step, loss_and_grads

PATHS = ("scan", "conv_dense", "conv_fft", "final_state")

# mode -> (LmuFitLayer mode, return_sequences)
MODES = {
    "sequential": ("sequential", False),
    "parallel": ("parallel", False),
    "sequential-full": ("sequential", True),
    "parallel-full": ("parallel", True),
}

# reported only; measured on a GPU we do not have
REFERENCE_SPEEDUPS = {"psmnist": 220.0, "mackey": 64.0}


def environment(threads):
    blas = [{"api": p.get("internal_api"), "threads": p.get("num_threads")} for p in threadpool_info()]
    return {
        "threads": threads,
        "precision": "float64",
        "backend": _backend.active(),
        "numpy": np.__version__,
        "python": platform.python_version(),
        "cpu_count": os.cpu_count(),
        "blas": blas,
    }


def op_counts(n, d, d_x=1, seed=0):
    """Multiply-adds tallied by each execution path on one ``(1, n, d_x)`` input."""
    sys_ = delay_lti(d, n)
    H = impulse_response(sys_, n)
    u = seeded_rng(seed).standard_normal((1, n, d_x))
    runs = {
        "scan": lambda: lti.scan_sequential(sys_, u),
        "conv_dense": lambda: lti.conv_dense(H, u),
        "conv_fft": lambda: lti.conv_fft(H, u),
        "final_state": lambda: lti.final_state(H, u),
    }
    out = {}
    for path, run in runs.items():
        with lti.counting() as counts:
            run()
        out[path] = int(counts[path])
    return out


def fft_theory(n, d, d_x=1):
    """The FFT path's count formula, used to judge its measured growth."""
    N = 2 ** int(np.ceil(np.log2(2 * n - 1)))
    log = int(np.log2(N))
    return d_x * (N // 2) * log + d_x * d * N + d_x * d * (N // 2) * log


def _workload(n, d_x, batch, batches, seed):
    rng = seeded_rng(seed)
    x = rng.standard_normal((batch * batches, n, d_x))
    y = rng.standard_normal((batch * batches, 1))
    return x, y


def _model(mode, n, d, d_x, d_o, seed):
    lmu_mode, full = MODES[mode]
    rng = seeded_rng(seed)
    lmu = LmuFitLayer(d_x, 1, d, n, d_o, mode=lmu_mode, return_sequences=full, rng=rng)
    return Sequential([lmu, Dense(d_o, 1, rng=rng)]), full


def epoch_seconds(mode, n, d=64, d_x=1, d_o=32, batch=32, batches=4, repeats=3, seed=0):
    """Median wall time of one training epoch (forward, backward, Adam) over
    ``batches`` mini-batches. One untimed warm-up epoch builds cached kernels."""
    model, full = _model(mode, n, d, d_x, d_o, seed)
    x, y = _workload(n, d_x, batch, batches, seed)
    if full:
        y = np.repeat(y[:, None, :], n, axis=1)
    state = AdamState()
    params = model.parameters()

    def epoch():
        for lo in range(0, len(x), batch):
            loss_and_grads(model, x[lo:lo + batch], y[lo:lo + batch])
            adam_step(state, params, model.gradients())

    epoch()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        epoch()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run(lengths, d=64, d_x=1, modes=("sequential", "parallel"), repeats=3, batch=32,
        batches=4, d_o=32, threads=1, seed=0):
    """Full benchmark; returns a JSON-ready report."""
    lengths = [int(n) for n in lengths]
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
    config = {"lengths": lengths, "d": d, "d_x": d_x, "modes": list(modes), "repeats": repeats,
              "batch": batch, "batches": batches, "d_o": d_o, "threads": threads, "seed": seed}
    records = []
    ops = {}
    with threadpool_limits(limits=threads):
        env = environment(threads)
        for n in lengths:
            ops[n] = op_counts(n, d, d_x, seed)
            for mode in modes:
                wall = epoch_seconds(mode, n, d, d_x, d_o, batch, batches, repeats, seed)
                records.append({
                    "n": n, "d": d, "d_x": d_x, "mode": mode, "wall_seconds": wall,
                    "op_count": ops[n], "batch": batch, "batches": batches, "d_o": d_o,
                    "repeats": repeats, "seed": seed, "threads": threads,
                })
    return {
        "benchmark": "lmu-scaling",
        "config": config,
        "environment": env,
        "records": records,
        "summary": summarize(records, ops, d, d_x),
        "reference_speedups": REFERENCE_SPEEDUPS,
    }


def summarize(records, ops, d, d_x=1):
    lengths = sorted(ops)
    growth = []
    for a, b in zip(lengths, lengths[1:]):
        row = {"from": a, "to": b}
        for path in PATHS:
            row[path] = ops[b][path] / ops[a][path]
        row["conv_fft_theory"] = fft_theory(b, d, d_x) / fft_theory(a, d, d_x)
        growth.append(row)
    walls = {(r["n"], r["mode"]): r["wall_seconds"] for r in records}
    speedups = {}
    for n in lengths:
        for seq, par in (("sequential", "parallel"), ("sequential-full", "parallel-full")):
            if (n, seq) in walls and (n, par) in walls:
                speedups[f"{n}:{seq}/{par}"] = walls[(n, seq)] / walls[(n, par)]
    return {"op_growth": growth, "speedups": speedups}


def check_shape(report, tol=0.10):
    """Scaling-shape assertions over the report's first and last lengths.

    Returns ``(ok, messages)``. The final-state path must grow like n, dense
    convolution like n^2 and the FFT path like its n log n formula, each
    within ``tol``.
    """
    ops = {}
    for r in report["records"]:
        ops[r["n"]] = r["op_count"]
    lengths = sorted(ops)
    if len(lengths) < 2:
        return True, ["fewer than two lengths; nothing to check"]
    lo, hi = lengths[0], lengths[-1]
    k = hi / lo
    d, d_x = report["config"]["d"], report["config"]["d_x"]
    expect = {
        "final_state": k,
        "conv_dense": k * (k * lo + 1) / (lo + 1),
        "conv_fft": fft_theory(hi, d, d_x) / fft_theory(lo, d, d_x),
        "scan": k,
    }
    ok, msgs = True, []
    for path, want in expect.items():
        got = ops[hi][path] / ops[lo][path]
        good = abs(got / want - 1.0) <= tol
        ok &= good
        msgs.append(f"{'PASS' if good else 'FAIL'} {path} ops x{got:.3f} from n={lo} to n={hi} (theory x{want:.3f})")
    return ok, msgs
