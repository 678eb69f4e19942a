"""Dense feed-forward policy network, AdamW and LR scheduling.

The network maps per-cell statistics to one nonnegative output through
GeLU hidden layers and a softplus output layer.  Parameters live in one
flat float64 vector so the optimizer and the tape treat them uniformly;
per-layer weight matrices are views into it.
"""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = [
    "NetworkParams", "init_network", "forward", "forward_batch",
    "AdamWOptimizer", "PlateauScheduler", "plateau_scheduler",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "gelu", "softplus", "INPUT_SIZE",
]

log = logging.getLogger(__name__)

INPUT_SIZE = {1: 19, 2: 29}
_HIDDEN = {1: (120, 7), 2: (160, 8)}   # width, number of layers
_SQRT2 = np.sqrt(2.0)
LR_FLOOR = 1e-8


def gelu(x):
    """Gaussian error linear unit, exact erf form."""
    return 0.5 * x * (1.0 + ad.erf(x / _SQRT2))


def softplus(x):
    return ad.softplus(x)


@dataclass
class NetworkParams:
    """Flat parameter vector plus the layer-size chain that shapes it."""

    dimension: int
    layer_sizes: list
    theta: np.ndarray
    seed: int = 0

    @property
    def n_params(self) -> int:
        return self.theta.size

    def slices(self):
        """(weight, bias) flat slices per layer."""
        out = []
        lo = 0
        for nin, nout in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            wsz = nin * nout
            out.append(((lo, lo + wsz, nout, nin),
                        (lo + wsz, lo + wsz + nout)))
            lo += wsz + nout
        return out

    def views(self, theta=None):
        """Per-layer (W, b) views of a flat vector (numpy or recorded)."""
        theta = self.theta if theta is None else theta
        out = []
        for (wlo, whi, nout, nin), (blo, bhi) in self.slices():
            out.append((theta[wlo:whi].reshape(nout, nin), theta[blo:bhi]))
        return out


def init_network(dimension: int, seed: int = 0, width: int | None = None,
                 depth: int | None = None,
                 n_inputs: int | None = None) -> NetworkParams:
    """Deterministic symmetric-uniform fan-in initialization.

    Defaults: input 19, width 120, 7 layers in 1D; input 29, width 160,
    8 layers in 2D.  Biases start at zero.
    """
    if dimension not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    w, L = _HIDDEN[dimension]
    width = w if width is None else int(width)
    depth = L if depth is None else int(depth)
    if depth < 2:
        raise ValueError("need at least an input and an output layer")
    n_in = INPUT_SIZE[dimension] if n_inputs is None else int(n_inputs)
    sizes = [n_in] + [width] * (depth - 1) + [1]
    total = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    rng = np.random.default_rng(seed)
    theta = np.zeros(total)
    net = NetworkParams(dimension=dimension, layer_sizes=sizes,
                        theta=theta, seed=seed)
    for (wlo, whi, nout, nin), (blo, bhi) in net.slices():
        scale = np.sqrt(1.0 / nin)
        theta[wlo:whi] = rng.uniform(-scale, scale, whi - wlo)
        theta[blo:bhi] = 0.0
    return net


def forward_batch(net: NetworkParams, features, theta=None):
    """Rows of features -> one strictly positive scalar per row."""
    nin = net.layer_sizes[0]
    fshape = ad.value_of(features).shape
    if fshape[-1] != nin:
        raise ValueError(f"feature size {fshape[-1]} does not match the "
                         f"network input layer {nin}")
    x = features
    layers = net.views(theta)
    for li, (w, b) in enumerate(layers):
        x = ad.linear(x, w, b)
        x = gelu(x) if li < len(layers) - 1 else softplus(x)
    return x.reshape(fshape[:-1])


def forward(net: NetworkParams, features, theta=None):
    """Single feature vector -> positive scalar."""
    feats = features if isinstance(features, ad.AdValue) \
        else np.asarray(features, dtype=float)
    out = forward_batch(net, feats.reshape(1, -1), theta)
    return out[0] if isinstance(out, ad.AdValue) else float(out[0])


# ---------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------

@dataclass
class AdamWOptimizer:
    """Decoupled weight-decay Adam on a flat parameter vector."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0
    rejected_steps: int = 0

    def _ensure_state(self, n):
        if self.m is None:
            self.m = np.zeros(n)
            self.v = np.zeros(n)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """One update; returns the new parameters.  Non-finite gradients
        reject the step (parameters unchanged) and are counted."""
        grad = np.asarray(grad, dtype=float)
        if grad.shape != theta.shape:
            raise ValueError("gradient shape does not match parameters")
        if not np.all(np.isfinite(grad)):
            self.rejected_steps += 1
            log.warning("rejected optimizer step %d: non-finite gradient",
                        self.step_count + 1)
            return theta
        self._ensure_state(theta.size)
        self.step_count += 1
        t = self.step_count
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** t)
        vhat = self.v / (1.0 - self.beta2 ** t)
        return theta - self.lr * (mhat / (np.sqrt(vhat) + self.eps)
                                  + self.weight_decay * theta)


class PlateauScheduler:
    """Halve the learning rate after ``patience`` tests without a new
    best loss; never increases it and clamps at a small floor."""

    def __init__(self, patience: int = 30, factor: float = 0.5,
                 floor: float = LR_FLOOR):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.patience = patience
        self.factor = factor
        self.floor = floor
        self.best = np.inf
        self.bad = 0

    def update(self, test_loss: float, lr: float) -> float:
        if test_loss < self.best:
            self.best = test_loss
            self.bad = 0
            return lr
        self.bad += 1
        if self.bad >= self.patience:
            self.bad = 0
            lr = lr * self.factor
            if lr < self.floor:
                log.warning("learning rate clamped at floor %.1e",
                            self.floor)
                lr = self.floor
        return lr


def plateau_scheduler(history, lr: float, patience: int = 30,
                      factor: float = 0.5, floor: float = LR_FLOOR
                      ) -> float:
    """Fold a test-loss history through the plateau rule."""
    sched = PlateauScheduler(patience=patience, factor=factor, floor=floor)
    for loss in history:
        lr = sched.update(float(loss), lr)
    return lr


# ---------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------

_MAGIC = b"DGVISCNN"
_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(net: NetworkParams, opt: AdamWOptimizer | None,
                    path) -> None:
    """Binary dump of parameters and optimizer moments with a trailing
    checksum; round-trips bit for bit."""
    payload = bytearray()
    payload += struct.pack("<II", _VERSION, net.dimension)
    payload += struct.pack("<I", len(net.layer_sizes))
    payload += struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes)
    payload += struct.pack("<q", net.seed)
    payload += net.theta.astype("<f8").tobytes()
    has_opt = opt is not None and opt.m is not None
    payload += struct.pack("<B", 1 if has_opt else 0)
    if has_opt:
        payload += struct.pack("<dddddqq", opt.lr, opt.beta1, opt.beta2,
                               opt.eps, opt.weight_decay, opt.step_count,
                               opt.rejected_steps)
        payload += opt.m.astype("<f8").tobytes()
        payload += opt.v.astype("<f8").tobytes()
    crc = zlib.crc32(bytes(payload))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes(payload))
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path, expect_dimension: int | None = None):
    """Read a checkpoint; returns (NetworkParams, AdamWOptimizer or None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 4 or blob[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError("not a network checkpoint (bad magic bytes)")
    payload = blob[len(_MAGIC):-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise CheckpointError("checkpoint is corrupted (checksum mismatch)")
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, payload, off)
        off += size
        return vals

    version, dim = take("<II")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n_sizes,) = take("<I")
    sizes = list(take(f"<{n_sizes}I"))
    (seed,) = take("<q")
    n_params = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    theta = np.frombuffer(payload, dtype="<f8", count=n_params,
                          offset=off).copy()
    off += n_params * 8
    if expect_dimension is not None and dim != expect_dimension:
        raise CheckpointError(
            f"checkpoint is for dimension {dim}, expected "
            f"{expect_dimension}")
    net = NetworkParams(dimension=dim, layer_sizes=sizes, theta=theta,
                        seed=seed)
    (has_opt,) = take("<B")
    opt = None
    if has_opt:
        lr, b1, b2, eps, wd, steps, rejected = take("<dddddqq")
        m = np.frombuffer(payload, dtype="<f8", count=n_params,
                          offset=off).copy()
        off += n_params * 8
        v = np.frombuffer(payload, dtype="<f8", count=n_params,
                          offset=off).copy()
        off += n_params * 8
        opt = AdamWOptimizer(lr=lr, beta1=b1, beta2=b2, eps=eps,
                             weight_decay=wd, m=m, v=v, step_count=steps,
                             rejected_steps=rejected)
    if off != len(payload):
        raise CheckpointError("checkpoint has trailing or missing bytes")
    return net, opt
