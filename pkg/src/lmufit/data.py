"""Dataset generation and ingestion."""
import gzip
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .numerics import fft, ifft, next_pow2, seeded_rng

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
SEQ_LEN = 784


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")

    def __len__(self):
        return len(self.inputs)


@dataclass
class MackeyGlassConfig:
    beta: float = 0.2
    gamma: float = 0.1
    exponent: float = 10.0
    tau: float = 17.0
    dt: float = 1.0
    warmup: float = 1000.0
    length: int = 5000
    horizon: int = 15
    seed: int = 0
    x0: float = 1.2
    history_noise: float = 0.0
    sample_every: float = 1.0

    def validate(self):
        if not self.tau > 0 or not self.dt > 0:
            raise ValueError("tau and dt must be positive")
        if self.tau < self.dt:
            raise ValueError("tau must be at least one integration step")
        if self.length <= self.horizon:
            raise ValueError("length must exceed the prediction horizon")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        ratio = self.sample_every / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("sample_every must be a positive multiple of dt")


def mackey_glass(config):
    """Integrate dx/dt = beta x(t-tau) / (1 + x(t-tau)^n) - gamma x(t).

    Fixed-step RK4; delayed values come from linear interpolation on the grid
    of already computed points (history before t=0 is the constant ``x0``).
    Returns ``length`` samples spaced ``sample_every`` apart after ``warmup``
    time units.
    """
    config.validate()
    c = config
    dt = c.dt
    stride = int(round(c.sample_every / dt))
    skip = int(round(c.warmup / c.sample_every))
    steps = (skip + c.length - 1) * stride
    lag = c.tau / dt
    pad = int(math.ceil(lag)) + 1
    xs = np.empty(pad + steps + 1)
    xs[: pad + 1] = c.x0
    if c.history_noise:
        xs[:pad + 1] += c.history_noise * seeded_rng(c.seed).standard_normal(pad + 1)

    def delayed(pos):
        # pos: fractional grid index of t - tau
        lo = int(math.floor(pos))
        frac = pos - lo
        return xs[lo] + frac * (xs[lo + 1] - xs[lo]) if frac else xs[lo]

    def rhs(x, xd):
        return c.beta * xd / (1.0 + xd**c.exponent) - c.gamma * x

    for k in range(steps):
        i = pad + k
        x = xs[i]
        d0 = delayed(i - lag)
        dh = delayed(i + 0.5 - lag)
        d1 = delayed(i + 1 - lag)
        k1 = rhs(x, d0)
        k2 = rhs(x + 0.5 * dt * k1, dh)
        k3 = rhs(x + 0.5 * dt * k2, dh)
        k4 = rhs(x + dt * k3, d1)
        xs[i + 1] = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    out = xs[pad::stride][skip:skip + c.length]
    return np.ascontiguousarray(out)


def windowize(series, window, horizon, split="train"):
    """Sliding windows of ``window`` samples; target sits ``horizon`` past the window end."""
    series = np.asarray(series, dtype=np.float64)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if window < 1:
        raise ValueError("window must be >= 1")
    count = len(series) - window - horizon + 1
    if count < 1:
        raise ValueError(f"series of length {len(series)} too short for window {window} + horizon {horizon}")
    idx = np.arange(count)[:, None] + np.arange(window)[None, :]
    inputs = series[idx][:, :, None]
    targets = series[np.arange(count) + window - 1 + horizon][:, None]
    return LabeledDataset(inputs, targets, split)


def chronological_split(series, window, horizon, test_fraction=0.2):
    """Cut the series in time first, then window each part; no sample is shared."""
    series = np.asarray(series, dtype=np.float64)
    cut = int(round(len(series) * (1.0 - test_fraction)))
    return (windowize(series[:cut], window, horizon, "train"),
            windowize(series[cut:], window, horizon, "test"))


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def load_idx(path):
    """Parse an MNIST IDX file (optionally gzipped).

    Image files give float64 arrays ``(N, rows, cols)`` scaled to [0, 1];
    label files give int64 ``(N,)`` arrays checked to lie in 0..9.
    """
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError("truncated IDX header", len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"unexpected IDX magic 0x{magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError("truncated IDX header", len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + count:
        raise FormatError(f"payload needs {count} bytes, file has {len(raw) - header}", len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if magic == IDX_IMAGES:
        return data.astype(np.float64) / 255.0
    labels = data.astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"label {labels[bad]} at index {bad} outside 0..9")
    return labels


def write_idx(path, array):
    """Write uint8 images ``(N, rows, cols)`` or labels ``(N,)`` in IDX layout."""
    a = np.asarray(array)
    if a.ndim == 3:
        magic = IDX_IMAGES
    elif a.ndim == 1:
        magic = IDX_LABELS
    else:
        raise ValueError(f"IDX writer takes 1-D labels or 3-D images, got {a.ndim}-D")
    if a.size and (a.min() < 0 or a.max() > 255):
        raise ValueError("IDX payload must fit in unsigned bytes")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.astype(np.uint8).tobytes())


def pixel_permutation(seed, size=SEQ_LEN, permute=True):
    return seeded_rng(seed).permutation(size) if permute else np.arange(size)


def psmnist(images, labels, seed, test_images=None, test_labels=None, val_size=10_000, permute=True):
    """Permuted sequential MNIST: flatten, apply one fixed pixel permutation, split.

    The last ``val_size`` training images become the validation split; the
    separate test file (when given) is the test split.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or len(images) != len(labels):
        raise ValueError(f"need (N, rows, cols) images matched to labels, got {images.shape}")
    size = images.shape[1] * images.shape[2]
    perm = pixel_permutation(seed, size, permute)

    def to_seq(imgs):
        return np.ascontiguousarray(np.asarray(imgs, dtype=np.float64).reshape(len(imgs), size)[:, perm][:, :, None])

    if not 0 <= val_size < len(images):
        raise ValueError(f"val_size {val_size} leaves no training images")
    cut = len(images) - val_size
    labels = np.asarray(labels)
    out = {
        "train": LabeledDataset(to_seq(images[:cut]), labels[:cut], "train"),
        "val": LabeledDataset(to_seq(images[cut:]), labels[cut:], "val"),
        "permutation": perm,
    }
    if test_images is not None:
        out["test"] = LabeledDataset(to_seq(test_images), np.asarray(test_labels), "test")
    return out


def bandlimited_noise(rng, n, cutoff):
    """Unit-variance Gaussian noise with every component above ``cutoff``
    (cycles per step) removed by an ideal low-pass filter."""
    size = next_pow2(n)
    white = rng.standard_normal(size)
    spec = fft(white, size)
    freqs = np.minimum(np.arange(size), size - np.arange(size)) / size
    spec[freqs > cutoff] = 0.0
    sig = ifft(spec, n)
    return sig / sig.std()


DEFAULT_CUTOFF = 0.02


def delay_task(seed, n, theta, samples=64, cutoff=DEFAULT_CUTOFF):
    """Inputs: band-limited noise; targets: the same signal delayed by ``theta`` steps."""
    theta = int(theta)
    if theta >= n:
        raise ValueError(f"theta={theta} must be smaller than n={n}")
    rng = seeded_rng(seed)
    u = np.stack([bandlimited_noise(rng, n, cutoff) for _ in range(samples)])
    y = np.zeros_like(u)
    y[:, theta:] = u[:, : n - theta]
    return LabeledDataset(u[:, :, None], y[:, :, None], "train")


_DATA_MAGIC = b"LMUDATA1"
_DTYPE_F8 = 1


def export_array(path, array):
    """Flat container: magic, dtype tag, ndim, uint64 dims, little-endian float64 payload."""
    a = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_DATA_MAGIC)
        fh.write(struct.pack("<BB", _DTYPE_F8, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes())


def import_array(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _DATA_MAGIC:
        raise FormatError("not a flat dataset container", 0)
    if len(raw) < 10:
        raise FormatError("truncated header", len(raw))
    tag, ndim = struct.unpack_from("<BB", raw, 8)
    if tag != _DTYPE_F8:
        raise FormatError(f"unknown dtype tag {tag}", 8)
    if len(raw) < 10 + 8 * ndim:
        raise FormatError("truncated dimensions", len(raw))
    shape = struct.unpack_from(f"<{ndim}Q", raw, 10)
    start = 10 + 8 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) != start + 8 * count:
        raise FormatError(f"payload size {len(raw) - start} != {8 * count}", start)
    return np.frombuffer(raw, dtype="<f8", offset=start).reshape(shape).astype(np.float64)


def export_dataset(prefix, dataset):
    """Write ``<prefix>.inputs.bin`` and ``<prefix>.targets.bin``."""
    export_array(f"{prefix}.inputs.bin", dataset.inputs)
    export_array(f"{prefix}.targets.bin", dataset.targets)
