"""Sparse-projection shallow-tree regressor with hard sparsity budgets.

The model projects an input x (dimension D) to z = Zx (dimension d) and
routes it through a complete binary tree of depth h. Every node k holds
predictor weights w_k and gate weights v_k; internal nodes also hold
branching weights theta_k. The prediction sums the contributions of all
nodes on the routed path:

    y(x) = sum over path k of (w_k . z) * tanh(sigma * (v_k . z))

Routing at internal node k goes left when theta_k . z <= 0, right otherwise.
Nodes are indexed breadth-first (root 0, children of k at 2k+1 and 2k+2);
internal nodes occupy indices 0 .. 2^h - 2.

Training is mini-batch gradient descent on MSE plus an L2 penalty, with the
routing of each example frozen within a gradient step. Every epoch ends by
hard-thresholding each parameter tensor onto its sparsity budget (iterative
hard thresholding). theta influences the loss only through routing, so its
smooth gradient is the L2 term alone.

The wire format stores values as 32-bit floats, so finished models are
quantized: in-memory float64 values are exact copies of their float32
representation, making serialization lossless and reruns byte-identical.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import ModelFormatError, ValidationError

MAGIC = b"BNSI"
FORMAT_VERSION = 1

# depth u8, proj_dim u16, input_dim u16, sigma f64, sparsity_z f64,
# sparsity_nodes f64, learning_rate f64, epochs u32, batch_size u32,
# seed i64, l2 f64
_CONFIG_STRUCT = struct.Struct("<BHHddddIIqd")
_HEADER_BYTES = len(MAGIC) + 1 + _CONFIG_STRUCT.size


@dataclass(frozen=True)
class BonsaiConfig:
    input_dim: int
    depth: int = 3
    proj_dim: int = 10
    sigma: float = 1.0
    sparsity_z: float = 0.3
    sparsity_nodes: float = 0.5
    learning_rate: float = 0.005
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    l2: float = 1e-4

    @property
    def node_count(self) -> int:
        return 2 ** (self.depth + 1) - 1

    @property
    def internal_count(self) -> int:
        return 2 ** self.depth - 1

    def validate(self) -> "BonsaiConfig":
        if not 1 <= self.input_dim <= 0xFFFF:
            raise ValidationError(f"input_dim must be in [1, 65535], got {self.input_dim}")
        if not 1 <= self.proj_dim <= 0xFFFF:
            raise ValidationError(f"proj_dim must be in [1, 65535], got {self.proj_dim}")
        if not 0 <= self.depth <= 12:
            raise ValidationError(f"depth must be in [0, 12], got {self.depth}")
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        for name, budget in (("sparsity_z", self.sparsity_z),
                             ("sparsity_nodes", self.sparsity_nodes)):
            if not 0.0 < budget <= 1.0:
                raise ValidationError(f"{name} must be in (0, 1], got {budget}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.l2 < 0:
            raise ValidationError(f"l2 must be >= 0, got {self.l2}")
        if self.proj_dim * self.input_dim > 0xFFFF:
            raise ValidationError("projection matrix too large for the wire format")
        return self


@dataclass
class BonsaiModel:
    """Model parameters. Treated as immutable once returned by init or fit."""

    config: BonsaiConfig
    proj: np.ndarray   # (proj_dim, input_dim)
    w: np.ndarray      # (node_count, proj_dim)
    v: np.ndarray      # (node_count, proj_dim)
    theta: np.ndarray  # (internal_count, proj_dim)


@dataclass(frozen=True)
class TrainReport:
    losses: tuple[float, ...]
    nonzeros: dict
    wall_clock_s: float
    seed: int


@dataclass(frozen=True)
class Gradients:
    proj: np.ndarray
    w: np.ndarray
    v: np.ndarray
    theta: np.ndarray


def _quantized(model: BonsaiModel) -> BonsaiModel:
    q = lambda a: a.astype(np.float32).astype(np.float64)
    return BonsaiModel(model.config, q(model.proj), q(model.w), q(model.v), q(model.theta))


def init_model(config: BonsaiConfig) -> BonsaiModel:
    """Seeded symmetric-uniform initialization scaled by 1/sqrt(proj_dim)."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0])
    scale = 1.0 / math.sqrt(config.proj_dim)
    d, big_d = config.proj_dim, config.input_dim
    proj = rng.uniform(-1.0, 1.0, (d, big_d)) * scale
    w = rng.uniform(-1.0, 1.0, (config.node_count, d)) * scale
    v = rng.uniform(-1.0, 1.0, (config.node_count, d)) * scale
    theta = rng.uniform(-1.0, 1.0, (config.internal_count, d)) * scale
    return _quantized(BonsaiModel(config, proj, w, v, theta))


def _projected(model: BonsaiModel, X: np.ndarray) -> np.ndarray:
    return X @ model.proj.T


def routing_paths(model: BonsaiModel, X: np.ndarray) -> np.ndarray:
    """Breadth-first node indices visited by each row, shape (n, depth + 1)."""
    X = _as_matrix(model, X)
    zb = _projected(model, X)
    n = X.shape[0]
    paths = np.zeros((n, model.config.depth + 1), dtype=np.int64)
    node = np.zeros(n, dtype=np.int64)
    for level in range(model.config.depth):
        score = np.einsum("nd,nd->n", zb, model.theta[node])
        node = 2 * node + 1 + (score > 0)  # ties route left
        paths[:, level + 1] = node
    return paths


def _path_mask(config: BonsaiConfig, paths: np.ndarray) -> np.ndarray:
    n = paths.shape[0]
    mask = np.zeros((n, config.node_count), dtype=bool)
    mask[np.arange(n)[:, None], paths] = True
    return mask


def _as_matrix(model: BonsaiModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.config.input_dim:
        raise ValidationError(
            f"expected shape (n, {model.config.input_dim}), got {X.shape}")
    return X


def predict_batch(model: BonsaiModel, X: np.ndarray) -> np.ndarray:
    X = _as_matrix(model, X)
    zb = _projected(model, X)
    scores = (zb @ model.w.T) * np.tanh(model.config.sigma * (zb @ model.v.T))
    paths = routing_paths(model, X)
    return scores[np.arange(X.shape[0])[:, None], paths].sum(axis=1)


def predict(model: BonsaiModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.config.input_dim:
        raise ValidationError(
            f"expected a vector of length {model.config.input_dim}, got shape {x.shape}")
    return float(predict_batch(model, x[None, :])[0])


def _l2_penalty(model: BonsaiModel) -> float:
    return model.config.l2 * (float(np.sum(model.proj ** 2)) + float(np.sum(model.w ** 2))
                              + float(np.sum(model.v ** 2)) + float(np.sum(model.theta ** 2)))


def frozen_objective(model: BonsaiModel, X: np.ndarray, y: np.ndarray,
                     paths: np.ndarray) -> float:
    """MSE + L2 with the given routing held fixed (the smooth training loss)."""
    X = _as_matrix(model, X)
    zb = _projected(model, X)
    scores = (zb @ model.w.T) * np.tanh(model.config.sigma * (zb @ model.v.T))
    pred = scores[np.arange(X.shape[0])[:, None], paths].sum(axis=1)
    return float(np.mean((pred - np.asarray(y, dtype=float)) ** 2)) + _l2_penalty(model)


def objective(model: BonsaiModel, X: np.ndarray, y: np.ndarray) -> float:
    return frozen_objective(model, X, y, routing_paths(model, X))


def gradient(model: BonsaiModel, X: np.ndarray, y: np.ndarray) -> Gradients:
    """Analytic gradients of the smooth loss with routing frozen per example."""
    X = _as_matrix(model, X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValidationError("gradient requires a non-empty batch")
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"row count mismatch: {X.shape[0]} vs {y.shape[0]}")
    n = X.shape[0]
    cfg = model.config
    zb = _projected(model, X)                                  # (n, d)
    mask = _path_mask(cfg, routing_paths(model, X))            # (n, N)
    a = zb @ model.w.T                                         # w_k . z
    g = np.tanh(cfg.sigma * (zb @ model.v.T))                  # gate values
    pred = (a * g * mask).sum(axis=1)
    coef = (2.0 / n) * (pred - y)                              # dL/dpred per row

    da = (g * mask) * coef[:, None]
    dgate_pre = (a * mask) * coef[:, None] * cfg.sigma * (1.0 - g ** 2)
    dw = da.T @ zb + 2.0 * cfg.l2 * model.w
    dv = dgate_pre.T @ zb + 2.0 * cfg.l2 * model.v
    dzb = da @ model.w + dgate_pre @ model.v                   # (n, d)
    dproj = dzb.T @ X + 2.0 * cfg.l2 * model.proj
    dtheta = 2.0 * cfg.l2 * model.theta
    return Gradients(proj=dproj, w=dw, v=dv, theta=dtheta)


def hard_threshold(values: np.ndarray, budget_fraction: float) -> np.ndarray:
    """Keep the ceil(budget * size) largest-magnitude entries, zero the rest.

    Stable ordering makes ties deterministic; the operation is idempotent.
    """
    if not 0.0 < budget_fraction <= 1.0:
        raise ValidationError(f"budget must be in (0, 1], got {budget_fraction}")
    arr = np.asarray(values, dtype=float)
    flat = arr.ravel()
    k = math.ceil(budget_fraction * flat.size)
    if k >= flat.size:
        return arr.copy()
    order = np.argsort(-np.abs(flat), kind="stable")
    out = np.zeros_like(flat)
    keep = order[:k]
    out[keep] = flat[keep]
    return out.reshape(arr.shape)


def fit(model: BonsaiModel, X: np.ndarray, y: np.ndarray) -> tuple[BonsaiModel, TrainReport]:
    """Mini-batch SGD with per-epoch hard thresholding. Deterministic per seed."""
    cfg = model.config.validate()
    X = _as_matrix(model, X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValidationError("cannot fit on empty data")
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"row count mismatch: {X.shape[0]} vs {y.shape[0]}")
    if X.shape[0] < cfg.batch_size:
        raise ValidationError(
            f"need at least batch_size={cfg.batch_size} rows, got {X.shape[0]}")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValidationError("NaN in training inputs")

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    cur = BonsaiModel(cfg, model.proj.copy(), model.w.copy(),
                      model.v.copy(), model.theta.copy())
    n = X.shape[0]
    losses = []
    start = time.perf_counter()
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            grad = gradient(cur, X[idx], y[idx])
            cur.proj -= cfg.learning_rate * grad.proj
            cur.w -= cfg.learning_rate * grad.w
            cur.v -= cfg.learning_rate * grad.v
            cur.theta -= cfg.learning_rate * grad.theta
        cur.proj = hard_threshold(cur.proj, cfg.sparsity_z)
        cur.w = hard_threshold(cur.w, cfg.sparsity_nodes)
        cur.v = hard_threshold(cur.v, cfg.sparsity_nodes)
        cur.theta = hard_threshold(cur.theta, cfg.sparsity_nodes)
        losses.append(objective(cur, X, y))
    final = _quantized(cur)
    report = TrainReport(
        losses=tuple(losses),
        nonzeros={"proj": int(np.count_nonzero(final.proj)),
                  "w": int(np.count_nonzero(final.w)),
                  "v": int(np.count_nonzero(final.v)),
                  "theta": int(np.count_nonzero(final.theta))},
        wall_clock_s=time.perf_counter() - start,
        seed=cfg.seed,
    )
    return final, report


def train(config: BonsaiConfig, X: np.ndarray, y: np.ndarray) -> tuple[BonsaiModel, TrainReport]:
    return fit(init_model(config), X, y)


# --- wire format -----------------------------------------------------------
#
# Layout (little-endian), documented byte-exactly in docs/model_format.md:
#   magic "BNSI", version u8, config block, sparse-projection block
#   (u16 count, then (u16 flat index, f32 value) pairs in ascending index
#   order), then three bitmaps marking nonzero positions of w, v, theta
#   (row-major flat order, LSB-first bits), then per-node value blocks in
#   breadth-first order: w values, v values, theta values (internal nodes
#   only), each as f32 in ascending coordinate order.


def _bitmap(arr: np.ndarray) -> bytes:
    mask = (arr.ravel() != 0.0)
    return np.packbits(mask, bitorder="little").tobytes()


def serialize(model: BonsaiModel) -> bytes:
    cfg = model.config.validate()
    buf = bytearray()
    buf += MAGIC
    buf.append(FORMAT_VERSION)
    buf += _CONFIG_STRUCT.pack(
        cfg.depth, cfg.proj_dim, cfg.input_dim, cfg.sigma, cfg.sparsity_z,
        cfg.sparsity_nodes, cfg.learning_rate, cfg.epochs, cfg.batch_size,
        cfg.seed, cfg.l2)

    flat = model.proj.ravel()
    nz = np.flatnonzero(flat)
    buf += struct.pack("<H", len(nz))
    for i in nz:
        buf += struct.pack("<Hf", int(i), float(flat[i]))

    buf += _bitmap(model.w)
    buf += _bitmap(model.v)
    buf += _bitmap(model.theta)

    for k in range(cfg.node_count):
        for val in model.w[k][model.w[k] != 0.0]:
            buf += struct.pack("<f", float(val))
        for val in model.v[k][model.v[k] != 0.0]:
            buf += struct.pack("<f", float(val))
        if k < cfg.internal_count:
            for val in model.theta[k][model.theta[k] != 0.0]:
                buf += struct.pack("<f", float(val))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise ModelFormatError(f"truncated while reading {what}", self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk


def deserialize(data: bytes) -> BonsaiModel:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError("bad magic bytes, not a model file", 0)
    version = r.take(1, "version")[0]
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}", 4)
    cfg_offset = r.offset
    fields = _CONFIG_STRUCT.unpack(r.take(_CONFIG_STRUCT.size, "config block"))
    try:
        cfg = BonsaiConfig(
            depth=fields[0], proj_dim=fields[1], input_dim=fields[2], sigma=fields[3],
            sparsity_z=fields[4], sparsity_nodes=fields[5], learning_rate=fields[6],
            epochs=fields[7], batch_size=fields[8], seed=fields[9], l2=fields[10],
        ).validate()
    except ValidationError as exc:
        raise ModelFormatError(f"invalid config block: {exc}", cfg_offset) from None

    d, big_d = cfg.proj_dim, cfg.input_dim
    (nnz,) = struct.unpack("<H", r.take(2, "projection count"))
    proj = np.zeros(d * big_d)
    prev = -1
    for _ in range(nnz):
        entry_offset = r.offset
        idx, val = struct.unpack("<Hf", r.take(6, "projection entry"))
        if idx >= d * big_d or idx <= prev:
            raise ModelFormatError(f"bad projection index {idx}", entry_offset)
        prev = idx
        proj[idx] = val
    proj = proj.reshape(d, big_d)

    def read_mask(count: int, what: str) -> np.ndarray:
        nbytes = (count + 7) // 8
        raw = np.frombuffer(r.take(nbytes, what), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[:count].astype(bool)

    w_mask = read_mask(cfg.node_count * d, "w bitmap").reshape(cfg.node_count, d)
    v_mask = read_mask(cfg.node_count * d, "v bitmap").reshape(cfg.node_count, d)
    t_mask = read_mask(cfg.internal_count * d, "theta bitmap").reshape(cfg.internal_count, d)

    w = np.zeros((cfg.node_count, d))
    v = np.zeros((cfg.node_count, d))
    theta = np.zeros((cfg.internal_count, d))
    for k in range(cfg.node_count):
        for mask, dest in ((w_mask[k], w[k]), (v_mask[k], v[k])):
            for j in np.flatnonzero(mask):
                (dest[j],) = struct.unpack("<f", r.take(4, f"node {k} value"))
        if k < cfg.internal_count:
            for j in np.flatnonzero(t_mask[k]):
                (theta[k, j],) = struct.unpack("<f", r.take(4, f"node {k} theta value"))
    if r.offset != len(data):
        raise ModelFormatError(f"{len(data) - r.offset} trailing bytes", r.offset)
    return BonsaiModel(cfg, proj, w, v, theta)


def model_size(model: BonsaiModel) -> int:
    return len(serialize(model))


def size_accounting(model: BonsaiModel) -> dict:
    """Byte budget per section; total equals len(serialize(model))."""
    cfg = model.config
    d = cfg.proj_dim
    nnz_proj = int(np.count_nonzero(model.proj))
    nnz_w = int(np.count_nonzero(model.w))
    nnz_v = int(np.count_nonzero(model.v))
    nnz_theta = int(np.count_nonzero(model.theta))
    parts = {
        "header": _HEADER_BYTES,
        "projection_block": 2 + 6 * nnz_proj,
        "bitmaps": 2 * ((cfg.node_count * d + 7) // 8) + (cfg.internal_count * d + 7) // 8,
        "node_values": 4 * (nnz_w + nnz_v + nnz_theta),
    }
    parts["total"] = sum(parts.values())
    return parts
