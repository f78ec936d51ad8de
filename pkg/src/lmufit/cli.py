"""``lmufit`` command line.

Subcommands: ``verify``, ``delay-sweep``, ``bench``, ``train``, ``fetch``.
Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""
import argparse
import csv
import hashlib
import json
import shutil
import sys
import tempfile
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from . import _backend, bench, experiments, lti
from .config import apply_overrides, load_config
from .dn import delay_lti, impulse_response
from .numerics import seeded_rng

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
)
# md5 of the gzipped distribution files
MNIST_MD5 = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}

DEFAULT_CONFIGS = {"mackey": "mackey", "psmnist": "psmnist_smoke", "delay": "delay"}


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


pos_int = _positive(int)
pos_float = _positive(float)


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _flags(args):
    return {k: v for k, v in vars(args).items() if k not in ("func", "argv")}


# ---------------------------------------------------------------- verify

def verify_report(d=16, theta=100.0, n=512, channels=2, batch=2, seed=0):
    sys_ = delay_lti(d, theta)
    H = impulse_response(sys_, n)
    rng = seeded_rng(seed)
    u = rng.standard_normal((batch, n, channels))
    g = rng.standard_normal((batch, n, channels * d))
    scan = lti.scan_sequential(sys_, u)
    dense = lti.conv_dense(H, u)
    fft = lti.conv_fft(H, u)
    final = lti.final_state(H, u)
    g_scan = lti.scan_adjoint(sys_, g)
    g_dense = lti.corr_dense(H, g)
    g_fft = lti.corr_fft(H, g)
    last = np.zeros_like(g)
    last[:, -1] = g[:, -1]
    g_last_scan = lti.scan_adjoint(sys_, last)
    g_final = lti.final_state_adjoint(H, g[:, -1], n)

    def dev(a, b):
        return float(np.max(np.abs(a - b)))

    return {
        "conv_dense_vs_scan": dev(dense, scan),
        "conv_fft_vs_scan": dev(fft, scan),
        "conv_fft_vs_conv_dense": dev(fft, dense),
        "final_state_vs_scan": dev(final, scan[:, -1]),
        "corr_dense_vs_scan_adjoint": dev(g_dense, g_scan),
        "corr_fft_vs_scan_adjoint": dev(g_fft, g_scan),
        "final_state_adjoint_vs_scan_adjoint": dev(g_final, g_last_scan),
    }


def cmd_verify(args):
    devs = verify_report(args.d, args.theta, args.n, args.channels, args.batch, args.seed)
    worst = max(devs.values())
    ok = worst <= args.tolerance
    _emit({
        "ok": ok,
        "max_abs_deviation": worst,
        "tolerance": args.tolerance,
        "deviations": devs,
        "backend": _backend.active(),
        "reproduce": experiments.reproduction(args.argv, {"seed": args.seed}, _flags(args)),
    }, args.out)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- delay sweep

def cmd_delay_sweep(args):
    if args.length <= args.theta:
        raise UsageError(f"--length {args.length} must exceed --theta {args.theta}")
    rows = experiments.delay_sweep(args.theta, args.orders, args.signal_seed, args.length,
                                   args.signal, args.cutoff, args.skip)
    stanza = experiments.reproduction(args.argv, {"signal_seed": args.signal_seed}, _flags(args))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        fh.write("# reproduce: " + json.dumps(stanza, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["order", "nrmse"])
        for d, err in rows:
            w.writerow([d, repr(err)])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------- bench

def cmd_bench(args):
    if args.backend:
        _backend.set_backend(args.backend)
    report = bench.run(args.lengths, args.d, args.d_x, args.modes, args.repeats, args.batch,
                       args.batches, args.d_o, args.threads, args.seed)
    report["reproduce"] = experiments.reproduction(args.argv, {"seed": args.seed}, _flags(args))
    status = EXIT_OK
    if args.check:
        ok, msgs = bench.check_shape(report)
        report["shape_check"] = {"ok": ok, "messages": msgs}
        for m in msgs:
            print(m, file=sys.stderr)
        status = EXIT_OK if ok else EXIT_FAIL
    _emit(report, args.out)
    return status


# ---------------------------------------------------------------- train

def cmd_train(args):
    cfg = load_config(args.config or DEFAULT_CONFIGS[args.task])
    try:
        apply_overrides(cfg, args.set)
    except ValueError as e:
        raise UsageError(str(e))
    name = cfg["task"].get("name", args.task)
    if name != args.task:
        raise UsageError(f"config {cfg['_path']} is for task {name!r}, not {args.task!r}")
    out = Path(args.out or Path("runs") / args.task)
    kwargs = {"epochs": args.epochs, "argv": args.argv}
    if not args.quiet:
        kwargs["on_epoch"] = lambda r: print(json.dumps(r), file=sys.stderr, flush=True)
    if args.task == "psmnist":
        kwargs["data_root"] = args.data_dir
    result = experiments.TASKS[args.task](cfg, out, **kwargs)
    result["output_dir"] = str(out)
    _emit(result, None)
    return EXIT_OK


# ---------------------------------------------------------------- fetch

def _md5(path):
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def fetch_mnist(dest, mirrors=MNIST_MIRRORS, force=False, log=print):
    """Download the four MNIST files into ``dest`` and check their md5 digests.

    Returns the list of files whose digest did not match (left on disk with a
    ``.bad`` suffix). Raises ``OSError`` when no mirror serves a file.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    bad = []
    for name, digest in MNIST_MD5.items():
        target = dest / name
        if target.exists() and not force and _md5(target) == digest:
            log(f"ok       {target}")
            continue
        errors = []
        for base in mirrors:
            url = base.rstrip("/") + "/" + name
            try:
                with urllib.request.urlopen(url, timeout=60) as resp, \
                        tempfile.NamedTemporaryFile(dir=dest, delete=False) as tmp:
                    shutil.copyfileobj(resp, tmp)
                break
            except (urllib.error.URLError, OSError) as e:
                errors.append(f"{url}: {e}")
        else:
            raise OSError(f"could not download {name}: " + "; ".join(errors))
        got = _md5(tmp.name)
        if got != digest:
            Path(tmp.name).replace(target.with_name(name + ".bad"))
            log(f"MISMATCH {name}: md5 {got}, expected {digest}")
            bad.append(name)
        else:
            Path(tmp.name).replace(target)
            log(f"fetched  {target}")
    return bad


def cmd_fetch(args):
    dest = experiments.data_dir(args.dest)
    mirrors = args.base_url or MNIST_MIRRORS
    bad = fetch_mnist(dest, mirrors, args.force, log=lambda m: print(m, file=sys.stderr))
    _emit({"dest": str(dest), "ok": not bad, "mismatched": bad,
           "reproduce": experiments.reproduction(args.argv, {}, _flags(args))}, None)
    return EXIT_FAIL if bad else EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="lmufit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="check that the execution paths agree")
    v.add_argument("--d", type=pos_int, default=16, help="memory order")
    v.add_argument("--theta", type=pos_float, default=100.0, help="window length in steps")
    v.add_argument("--n", type=pos_int, default=512, help="sequence length")
    v.add_argument("--channels", type=pos_int, default=2, help="input channels d_u")
    v.add_argument("--batch", type=pos_int, default=2)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tolerance", type=_nonneg_float, default=1e-9, help="max-abs deviation allowed")
    v.add_argument("--out", help="write the JSON report here instead of stdout")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("delay-sweep", help="delay reconstruction error per memory order (CSV)")
    s.add_argument("--theta", type=pos_int, default=100)
    s.add_argument("--orders", type=_int_list, default=[2, 4, 8, 12], help="comma-separated memory orders")
    s.add_argument("--signal-seed", type=int, default=0)
    s.add_argument("--signal", choices=("bandlimited", "constant"), default="bandlimited")
    s.add_argument("--length", type=pos_int, default=4096, help="signal length")
    s.add_argument("--cutoff", type=pos_float, default=experiments.dataset.DEFAULT_CUTOFF,
                   help="noise bandwidth in cycles per step")
    s.add_argument("--skip", type=int, default=None, help="leading samples excluded from the error")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_delay_sweep)

    b = sub.add_parser("bench", help="op counts and epoch wall times versus sequence length")
    b.add_argument("--lengths", type=_int_list, default=[512, 1024, 2048, 4096],
                   help="comma-separated sequence lengths")
    b.add_argument("--d", type=pos_int, default=64)
    b.add_argument("--d_x", "--d-x", dest="d_x", type=pos_int, default=1)
    b.add_argument("--d_o", "--d-o", dest="d_o", type=pos_int, default=32)
    b.add_argument("--modes", type=lambda t: t.split(","), default=["sequential", "parallel"],
                   help="comma-separated subset of " + ", ".join(bench.MODES))
    b.add_argument("--repeats", type=pos_int, default=3, help="timed epochs per point; the median is kept")
    b.add_argument("--batch", type=pos_int, default=32)
    b.add_argument("--batches", type=pos_int, default=4, help="mini-batches per epoch")
    b.add_argument("--threads", type=pos_int, default=1, help="BLAS thread limit")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--backend", choices=("compiled", "python"))
    b.add_argument("--check", action="store_true", help="exit 1 unless op counts scale as expected")
    b.add_argument("--out", help="JSON report path (default stdout)")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="train on one of the shipped tasks")
    t.add_argument("--task", choices=sorted(experiments.TASKS), required=True)
    t.add_argument("--config", help="INI path or shipped config name")
    t.add_argument("--out", help="output directory (default runs/<task>)")
    t.add_argument("--epochs", type=pos_int, help="override the configured epoch count")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    t.add_argument("--data-dir", help=f"MNIST directory (default ${experiments.DATA_ENV} or ./data)")
    t.add_argument("--quiet", action="store_true", help="no per-epoch lines on stderr")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fetch", help="download the MNIST IDX files")
    f.add_argument("--dest", help=f"target directory (default ${experiments.DATA_ENV} or ./data)")
    f.add_argument("--base-url", action="append", help="mirror base URL; repeat to try several")
    f.add_argument("--force", action="store_true", help="download even if verified files exist")
    f.set_defaults(func=cmd_fetch)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    args.argv = argv
    try:
        code = args.func(args)
    except UsageError as e:
        print(f"lmufit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except experiments.MissingDataError as e:
        print(f"lmufit: {e}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as e:
        print(f"lmufit: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"lmufit: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"lmufit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
