"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_backends.py [--repeats 5] [--json out.json]

Each kernel runs on the same inputs under both backends. Outputs are
checked to agree before any timing is reported.
"""
import argparse
import json
import statistics
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from lmufit import _backend
from lmufit.dn import delay_lti, impulse_response
from lmufit.numerics import next_pow2, seeded_rng


def cases(seed=0):
    rng = seeded_rng(seed)
    for n, d, rows in ((256, 16, 4), (1024, 32, 8), (4096, 64, 8)):
        s = delay_lti(d, n / 2)
        HT = np.ascontiguousarray(impulse_response(s, n).HT)
        u = rng.standard_normal((rows, n))
        g = rng.standard_normal((rows, n, d))
        m0 = np.zeros((rows, d))
        N = next_pow2(2 * n - 1)
        x = rng.standard_normal((rows, N)) + 1j * rng.standard_normal((rows, N))
        tag = f"n={n} d={d} rows={rows}"
        yield "scan", tag, lambda b, s=s, u=u, m0=m0: _backend.scan(s.Abar, s.b, u, m0, backend=b)
        yield "scan_adjoint", tag, lambda b, s=s, g=g: _backend.scan_adjoint(s.Abar, s.b, g, backend=b)
        yield "causal_conv", tag, lambda b, HT=HT, u=u: _backend.causal_conv(HT, u, backend=b)
        yield "causal_corr", tag, lambda b, HT=HT, g=g: _backend.causal_corr(HT, g, backend=b)
        yield "fft_rows", f"N={N} rows={rows}", lambda b, x=x: _backend.fft_rows(x, backend=b)


def timed(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--json", help="write records here as well")
    args = ap.parse_args(argv)
    if "compiled" not in _backend.BACKENDS:
        print("compiled kernels are not built; run `pip install -e .` first", file=sys.stderr)
        return 1
    records = []
    print(f"{'kernel':<13} {'case':<22} {'python s':>10} {'compiled s':>11} {'speedup':>8}")
    with threadpool_limits(limits=args.threads):
        for kernel, tag, run in cases():
            dev = float(np.max(np.abs(run("python") - run("compiled"))))
            if dev > 1e-9:
                print(f"{kernel} {tag}: backends disagree by {dev:.2e}", file=sys.stderr)
                return 1
            py = timed(lambda: run("python"), args.repeats)
            c = timed(lambda: run("compiled"), args.repeats)
            records.append({"kernel": kernel, "case": tag, "python_s": py, "compiled_s": c,
                            "speedup": py / c, "max_abs_dev": dev})
            print(f"{kernel:<13} {tag:<22} {py:>10.5f} {c:>11.5f} {py / c:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"threads": args.threads, "repeats": args.repeats, "records": records}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
