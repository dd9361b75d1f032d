"""Trajectory-prediction model: one LSTM layer followed by a dense layer.

Weights live in a single flat float vector. The canonical layout is::

    kernel            (input_dim, 4*hidden)   gate order i, f, g, o
    recurrent kernel  (hidden, 4*hidden)
    gate bias         (4*hidden,)
    dense kernel      (hidden, output_dim)
    dense bias        (output_dim,)

Inference and the standalone gradient run in float64; training runs in the
precision named by ``TrainConfig.precision`` (float32 by default). The training routines operate on a
stack of models at once (leading "robot" axis) so that every robot that
trains on the same tick shares the numpy dispatch overhead; a stack of one
gives exactly the single-model result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 2
    hidden_dim: int = 25
    output_dim: int = 2
    input_horizon: int = 5
    target_horizon: int = 4

    def __post_init__(self):
        if self.input_dim != self.output_dim:
            # predictions are fed back as inputs
            raise ValueError("input_dim must equal output_dim for autoregressive decoding")
        if min(self.hidden_dim, self.input_horizon, self.target_horizon) < 1:
            raise ValueError("dimensions and horizons must be positive")

    @property
    def n_weights(self) -> int:
        h, i, o = self.hidden_dim, self.input_dim, self.output_dim
        return 4 * (h * (i + h) + h) + (h * o + o)

    @property
    def trajectory_length(self) -> int:
        """Number of positions a sample needs (displacements + 1)."""
        return self.input_horizon + self.target_horizon + 1

    def shapes(self) -> list[tuple[int, ...]]:
        h, i, o = self.hidden_dim, self.input_dim, self.output_dim
        return [(i, 4 * h), (h, 4 * h), (4 * h,), (h, o), (o,)]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 20
    epochs: int = 20
    learning_rate: float = 0.001
    # arithmetic precision of the SGD loop; float32 matches TensorFlow's default
    precision: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unsupported precision {self.precision!r}")


def unpack(w: np.ndarray, cfg: ModelConfig) -> list[np.ndarray]:
    """Split flat weights (..., N) into layer arrays, keeping leading axes.

    Returned arrays are views into ``w``.
    """
    if w.shape[-1] != cfg.n_weights:
        raise ValueError(f"expected {cfg.n_weights} weights, got {w.shape[-1]}")
    lead = w.shape[:-1]
    out, offset = [], 0
    for shape in cfg.shapes():
        size = int(np.prod(shape))
        out.append(w[..., offset:offset + size].reshape(lead + shape))
        offset += size
    return out


def pack(parts: Sequence[np.ndarray], cfg: ModelConfig) -> np.ndarray:
    lead = parts[0].shape[: parts[0].ndim - len(cfg.shapes()[0])]
    return np.concatenate([p.reshape(lead + (-1,)) for p in parts], axis=-1)


def init_weights(seed: int, cfg: ModelConfig = ModelConfig()) -> np.ndarray:
    """Glorot-uniform kernels, zero biases."""
    rng = np.random.default_rng(seed)
    h, i, o = cfg.hidden_dim, cfg.input_dim, cfg.output_dim

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    parts = [
        glorot(i, 4 * h),
        glorot(h, 4 * h),
        np.zeros(4 * h),
        glorot(h, o),
        np.zeros(o),
    ]
    return pack(parts, cfg)


def distance(w_a: np.ndarray, w_b: np.ndarray) -> float:
    """Mean absolute deviation between two weight vectors."""
    a = np.asarray(w_a, dtype=np.float64)
    b = np.asarray(w_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"weight length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


# --------------------------------------------------------------------------
# encoding


def encode(positions: np.ndarray, cfg: ModelConfig = ModelConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Turn absolute positions into (input, target) displacement sequences.

    Accepts a single trajectory (L, 2) or a batch (M, L, 2).
    """
    p = np.asarray(positions, dtype=np.float64)
    if p.shape[-2] != cfg.trajectory_length:
        raise ValueError(f"trajectory needs {cfg.trajectory_length} points, got {p.shape[-2]}")
    d = np.diff(p, axis=-2)
    ti = cfg.input_horizon
    return d[..., :ti, :], d[..., ti:ti + cfg.target_horizon, :]


def decode(origin: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Rebuild positions from a start point and successive displacements."""
    origin = np.asarray(origin, dtype=np.float64)
    steps = np.cumsum(displacements, axis=-2)
    return np.concatenate([origin[..., None, :], origin[..., None, :] + steps], axis=-2)


# --------------------------------------------------------------------------
# forward / backward on stacks of models


def _gate_constants(H: int, dtype=np.float64):
    # sigmoid(z) = 0.5 * tanh(0.5 z) + 0.5, so all four gates come from one tanh
    sig = np.full(4 * H, 0.5, dtype=dtype)
    sig[2 * H:3 * H] = 1.0
    add = np.full(4 * H, 0.5, dtype=dtype)
    add[2 * H:3 * H] = 0.0
    dscale = np.full(4 * H, 0.25, dtype=dtype)
    dscale[2 * H:3 * H] = 1.0
    return sig, add, dscale


def _forward(params, X, cfg: ModelConfig, keep_cache: bool = True):
    """Forward pass for a stack of models.

    params: layer arrays with leading axis R; X: (R, B, input_horizon, I).
    Returns predictions (R, B, target_horizon, O) and the cache for backprop.
    """
    Wx, Wh, b, Wd, bd = params
    R, B = X.shape[0], X.shape[1]
    H = cfg.hidden_dim
    ti, to = cfg.input_horizon, cfg.target_horizon
    dt = Wh.dtype
    sig, add, _ = _gate_constants(H, dt)
    h = np.zeros((R, B, H), dtype=dt)
    c = np.zeros((R, B, H), dtype=dt)
    b_ = b[:, None, :]
    bd_ = bd[:, None, :]
    ys = []
    cache = []
    for s in range(ti + to - 1):
        x = X[:, :, s, :] if s < ti else ys[-1]
        z = np.matmul(x, Wx)
        z += np.matmul(h, Wh)
        z += b_
        z *= sig
        a = np.tanh(z, out=z)
        gates = a * sig
        gates += add
        i_g = gates[..., :H]
        f_g = gates[..., H:2 * H]
        g_g = gates[..., 2 * H:3 * H]
        o_g = gates[..., 3 * H:]
        c_prev = c
        c = f_g * c_prev
        c += i_g * g_g
        tc = np.tanh(c)
        h_prev = h
        h = o_g * tc
        if keep_cache:
            cache.append((x, h_prev, c_prev, a, gates, tc, h))
        if s >= ti - 1:
            y = np.matmul(h, Wd)
            y += bd_
            ys.append(y)
    return np.stack(ys, axis=2), cache


def _backward(params, cache, dY, cfg: ModelConfig):
    """Backprop through time, including the autoregressive feedback path."""
    Wx, Wh, b, Wd, bd = params
    H = cfg.hidden_dim
    ti, to = cfg.input_horizon, cfg.target_horizon
    dt = Wh.dtype
    _, _, dscale = _gate_constants(H, dt)
    R, B = dY.shape[0], dY.shape[1]
    gWx = np.zeros_like(Wx)
    gWh = np.zeros_like(Wh)
    gb = np.zeros_like(b)
    gWd = np.zeros_like(Wd)
    gbd = np.zeros_like(bd)
    WxT = np.swapaxes(Wx, 1, 2)
    WhT = np.swapaxes(Wh, 1, 2)
    WdT = np.swapaxes(Wd, 1, 2)
    dh_next = None
    dc_next = None
    dy_fed = [None] * to
    dz = np.empty((R, B, 4 * H), dtype=dt)
    deriv = np.empty((R, B, 4 * H), dtype=dt)
    for s in range(ti + to - 2, -1, -1):
        x, h_prev, c_prev, a, gates, tc, h = cache[s]
        i_g = gates[..., :H]
        f_g = gates[..., H:2 * H]
        g_g = gates[..., 2 * H:3 * H]
        o_g = gates[..., 3 * H:]
        k = s - ti + 1
        if k >= 0:
            dy = dY[:, :, k, :]
            if dy_fed[k] is not None:
                dy = dy + dy_fed[k]
            gWd += np.matmul(np.swapaxes(h, 1, 2), dy)
            gbd += dy.sum(axis=1)
            dh = np.matmul(dy, WdT)
            if dh_next is not None:
                dh += dh_next
        else:
            dh = dh_next
        dc = dh * o_g
        dc *= 1.0 - tc * tc
        if dc_next is not None:
            dc += dc_next
        np.multiply(dc, g_g, out=dz[..., :H])
        np.multiply(dc, c_prev, out=dz[..., H:2 * H])
        np.multiply(dc, i_g, out=dz[..., 2 * H:3 * H])
        np.multiply(dh, tc, out=dz[..., 3 * H:])
        # d tanh / d z with the sigmoid rescaling folded in
        np.multiply(a, a, out=deriv)
        np.subtract(1.0, deriv, out=deriv)
        deriv *= dscale
        dz *= deriv
        dc_next = dc * f_g
        gWx += np.matmul(np.swapaxes(x, 1, 2), dz)
        gWh += np.matmul(np.swapaxes(h_prev, 1, 2), dz)
        gb += dz.sum(axis=1)
        if s > 0:
            dh_next = np.matmul(dz, WhT)
        if s >= ti:
            dy_fed[s - ti] = np.matmul(dz, WxT)
    return [gWx, gWh, gb, gWd, gbd]


def forward(w: np.ndarray, inputs: np.ndarray, cfg: ModelConfig = ModelConfig()) -> np.ndarray:
    """Predict target displacements for one model.

    ``inputs`` is (input_horizon, I) or (B, input_horizon, I).
    """
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    params = unpack(np.asarray(w, dtype=np.float64)[None], cfg)
    y, _ = _forward(params, x[None], cfg, keep_cache=False)
    y = y[0]
    return y[0] if single else y


def forward_many(ws: np.ndarray, inputs: np.ndarray, cfg: ModelConfig = ModelConfig()) -> np.ndarray:
    """Predictions of R models on one shared batch: returns (R, B, T, O)."""
    ws = np.asarray(ws, dtype=np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    params = unpack(ws, cfg)
    X = np.broadcast_to(x, (ws.shape[0],) + x.shape)
    y, _ = _forward(params, X, cfg, keep_cache=False)
    return y


def loss(w: np.ndarray, data: tuple[np.ndarray, np.ndarray], cfg: ModelConfig = ModelConfig()) -> float:
    """Mean squared error over samples, target steps and coordinates."""
    X, Y = data
    if len(X) == 0:
        raise ValueError("loss is undefined on an empty dataset")
    pred = forward(w, X, cfg)
    return float(np.mean((pred - np.asarray(Y, dtype=np.float64)) ** 2))


def loss_many(ws: np.ndarray, data: tuple[np.ndarray, np.ndarray], cfg: ModelConfig = ModelConfig()) -> np.ndarray:
    """Per-model MSE of a stack of models on one dataset."""
    X, Y = data
    if len(X) == 0:
        raise ValueError("loss is undefined on an empty dataset")
    pred = forward_many(ws, X, cfg)
    err = (pred - np.asarray(Y, dtype=np.float64)[None]) ** 2
    return err.reshape(err.shape[0], -1).mean(axis=1)


def gradient(w: np.ndarray, data: tuple[np.ndarray, np.ndarray], cfg: ModelConfig = ModelConfig()) -> np.ndarray:
    """Analytic gradient of ``loss(w, data)`` as a flat vector."""
    X, Y = (np.asarray(a, dtype=np.float64) for a in data)
    params = unpack(np.asarray(w, dtype=np.float64)[None].copy(), cfg)
    pred, cache = _forward(params, X[None], cfg)
    scale = 2.0 / Y.size
    grads = _backward(params, cache, scale * (pred - Y[None]), cfg)
    return pack(grads, cfg)[0]


# --------------------------------------------------------------------------
# training


def _epoch_plan(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[j:j + batch_size] for j in range(0, n, batch_size)]


def train_many(
    ws: Sequence[np.ndarray],
    datasets: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    seeds: Sequence[int],
    model_cfg: ModelConfig = ModelConfig(),
) -> list[tuple[np.ndarray, int]]:
    """Train several models, each on its own data, in lock step.

    Each model runs ``cfg.epochs`` epochs of seeded-shuffled minibatch SGD
    (the last batch of an epoch may be short). Models whose epoch has fewer
    batches than the longest one simply receive masked, zero-gradient steps,
    so the result for each model equals training it on its own.

    Returns ``[(new_weights, n_samples), ...]`` in input order.
    """
    R = len(ws)
    if not (R == len(datasets) == len(seeds)):
        raise ValueError("ws, datasets and seeds must have equal length")
    if R == 0:
        return []
    sizes = [len(d[0]) for d in datasets]
    if min(sizes) < 1:
        raise ValueError("every model needs at least one training sample")

    B = cfg.batch_size
    ti, to, dim = model_cfg.input_horizon, model_cfg.target_horizon, model_cfg.input_dim
    nmax = max(sizes)
    dt = np.dtype(cfg.precision)
    # one spare zero row per model, used as padding
    Xp = np.zeros((R, nmax + 1, ti, dim), dtype=dt)
    Yp = np.zeros((R, nmax + 1, to, dim), dtype=dt)
    for r, (X, Y) in enumerate(datasets):
        Xp[r, : sizes[r]] = X
        Yp[r, : sizes[r]] = Y

    w = np.stack([np.asarray(v, dtype=np.float64) for v in ws]).astype(dt)
    params = unpack(w, model_cfg)
    rngs = [np.random.default_rng(s) for s in seeds]
    rows = np.arange(R)[:, None]
    per_elem = to * dim
    lr = dt.type(cfg.learning_rate)

    for _ in range(cfg.epochs):
        plans = [_epoch_plan(n, B, rng) for n, rng in zip(sizes, rngs)]
        nb = max(len(p) for p in plans)
        for j in range(nb):
            idx = np.empty((R, B), dtype=np.int64)
            mask = np.zeros((R, B), dtype=dt)
            for r in range(R):
                if j < len(plans[r]):
                    batch = plans[r][j]
                    k = len(batch)
                    idx[r, :k] = batch
                    idx[r, k:] = sizes[r]
                    mask[r, :k] = 2.0 / (k * per_elem)
                else:
                    idx[r] = sizes[r]
            Xb = Xp[rows, idx]
            Yb = Yp[rows, idx]
            pred, cache = _forward(params, Xb, model_cfg)
            pred -= Yb
            pred *= mask[:, :, None, None]
            grads = _backward(params, cache, pred, model_cfg)
            for p, g in zip(params, grads):
                g *= lr
                p -= g
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("training produced non-finite weights")
    return [(w[r].astype(np.float64), sizes[r]) for r in range(R)]


def train(
    w: np.ndarray,
    data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    model_cfg: ModelConfig = ModelConfig(),
) -> tuple[np.ndarray, int]:
    """Minibatch SGD on one model; returns (new weights, samples used)."""
    return train_many([w], [data], cfg, [seed], model_cfg)[0]
