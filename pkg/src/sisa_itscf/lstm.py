"""Two-layer LSTM classifier with hand-written backpropagation through time.

Architecture (per sample, ``x`` of shape ``(T, D)``)::

    LSTM(H1) -> LayerNorm -> Dropout -> LSTM(H2) -> LayerNorm -> Dropout
    -> mean over time -> Linear(F) -> ReLU -> Dropout -> Linear(C)

Parameters live in a plain ``dict[str, np.ndarray]`` keyed by
:data:`PARAM_NAMES`. Gate blocks in the LSTM weights are ordered
input, forget, output, cell candidate. Internally sequences are kept
time-major ``(T, B, H)``. Training runs in float64; the forward pass keeps
whatever float dtype it is given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5

PARAM_NAMES = (
    "lstm1.W_ih", "lstm1.W_hh", "lstm1.b",
    "ln1.gamma", "ln1.beta",
    "lstm2.W_ih", "lstm2.W_hh", "lstm2.b",
    "ln2.gamma", "ln2.beta",
    "fc1.W", "fc1.b",
    "fc2.W", "fc2.b",
)

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 6
    lstm1_hidden: int = 96
    lstm2_hidden: int = 48
    fc_hidden: int = 64
    num_classes: int = 6
    dropout_rate: float = 0.30
    window_len: int = 50

    def __post_init__(self) -> None:
        for name in ("input_dim", "lstm1_hidden", "lstm2_hidden", "fc_hidden", "num_classes", "window_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h1, h2, f, c = cfg.input_dim, cfg.lstm1_hidden, cfg.lstm2_hidden, cfg.fc_hidden, cfg.num_classes
    return {
        "lstm1.W_ih": (4 * h1, d), "lstm1.W_hh": (4 * h1, h1), "lstm1.b": (4 * h1,),
        "ln1.gamma": (h1,), "ln1.beta": (h1,),
        "lstm2.W_ih": (4 * h2, h1), "lstm2.W_hh": (4 * h2, h2), "lstm2.b": (4 * h2,),
        "ln2.gamma": (h2,), "ln2.beta": (h2,),
        "fc1.W": (f, h2), "fc1.b": (f,),
        "fc2.W": (c, f), "fc2.b": (c,),
    }


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1, unit LN gain."""
    shapes = param_shapes(cfg)
    params: Params = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith((".b", ".beta")):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
    for layer, h in (("lstm1", cfg.lstm1_hidden), ("lstm2", cfg.lstm2_hidden)):
        params[f"{layer}.b"][h:2 * h] = 1.0
    return params


def check_params(params: Params, cfg: ModelConfig) -> None:
    shapes = param_shapes(cfg)
    if set(params) != set(shapes):
        raise ValueError(f"parameter names mismatch: {sorted(set(params) ^ set(shapes))}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


# --------------------------------------------------------------------------
# building blocks


def _gate_scale(H: int, dtype) -> np.ndarray:
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5; halving is exact in binary floating point
    s = np.full(4 * H, 0.5, dtype)
    s[3 * H:] = 1.0
    return s


def _lstm_forward(x, W_ih, W_hh, b, keep=True):
    """x: (T, B, D) -> hidden states (T, B, H) and the cache for backward."""
    T, B, _ = x.shape
    H = W_hh.shape[1]
    dt = np.result_type(x, W_ih)
    s = _gate_scale(H, dt)
    # 2-D projection so the whole sequence goes through one BLAS call
    xp = (x.reshape(T * B, -1) @ (W_ih.T * s) + b * s).reshape(T, B, 4 * H)
    W_hhT = np.ascontiguousarray(W_hh.T * s)
    h = np.zeros((B, H), dt)
    c = np.zeros((B, H), dt)
    hs = np.empty((T, B, H), dt)
    if keep:
        acts = np.empty((T, B, 4 * H), dt)
        cs = np.empty((T, B, H), dt)
        tcs = np.empty((T, B, H), dt)
    a = np.empty((B, 4 * H), dt)
    z = np.empty((B, 4 * H), dt)
    for t in range(T):
        if keep:
            a = acts[t]
        np.matmul(h, W_hhT, out=z)
        z += xp[t]
        np.tanh(z, out=a)
        sg = a[:, :3 * H]
        sg *= 0.5
        sg += 0.5
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(c)
        np.multiply(a[:, 2 * H:3 * H], tc, out=hs[t])
        h = hs[t]
        if keep:
            cs[t] = c
            tcs[t] = tc
    if not keep:
        return hs, None
    return hs, (x, hs, cs, acts, tcs)


def _lstm_backward(dhs, cache, W_ih, W_hh, need_dx=True):
    x, hs, cs, acts, tcs = cache
    T, B, H = hs.shape
    i, f, o, g = (acts[..., k * H:(k + 1) * H] for k in range(4))
    c_prev = np.concatenate([np.zeros((1, B, H), cs.dtype), cs[:-1]])
    # dz = (dL/d activation) * (activation derivative); per step only dc and dh vary
    q = np.empty((T, B, 4, H), acts.dtype)
    q[:, :, 0] = g * i * (1.0 - i)
    q[:, :, 1] = c_prev * f * (1.0 - f)
    q[:, :, 2] = 0.0
    q[:, :, 3] = i * (1.0 - g * g)
    q_out = tcs * o * (1.0 - o)
    dc_from_h = o * (1.0 - tcs * tcs)
    dz_all = np.empty((T, B, 4 * H), acts.dtype)
    dh_next = np.zeros((B, H), acts.dtype)
    dc_next = np.zeros((B, H), acts.dtype)
    for t in range(T - 1, -1, -1):
        dh = dhs[t] + dh_next
        dc = dh * dc_from_h[t]
        dc += dc_next
        dz = dz_all[t]
        dz4 = dz.reshape(B, 4, H)
        np.multiply(q[t], dc[:, None, :], out=dz4)
        np.multiply(dh, q_out[t], out=dz4[:, 2])
        dc_next = dc * f[t]
        dh_next = dz @ W_hh
    h_prev = np.concatenate([np.zeros((1, B, H), hs.dtype), hs[:-1]])
    dz_flat = dz_all.reshape(T * B, 4 * H)
    dW_hh = dz_flat.T @ h_prev.reshape(T * B, H)
    dW_ih = dz_flat.T @ x.reshape(T * B, -1)
    db = dz_flat.sum(axis=0)
    dx = (dz_flat @ W_ih).reshape(T, B, -1) if need_dx else None
    return dx, dW_ih, dW_hh, db


def _layernorm_forward(h, gamma, beta):
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (h - mu) * inv
    return gamma * xhat + beta, (xhat, inv)


def _layernorm_backward(dy, cache, gamma):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# dropout masks


@dataclass(frozen=True)
class DropoutMasks:
    """Inverted-dropout multipliers (0 or 1/(1-p)) for the three dropout sites."""

    lstm1: np.ndarray  # (T, B, H1)
    lstm2: np.ndarray  # (T, B, H2)
    fc1: np.ndarray  # (B, F)

    @classmethod
    def draw(cls, cfg: ModelConfig, batch: int, rng: np.random.Generator) -> DropoutMasks:
        keep = 1.0 - cfg.dropout_rate
        T = cfg.window_len

        def mask(shape):
            return (rng.random(shape) < keep) / keep

        return cls(
            mask((T, batch, cfg.lstm1_hidden)),
            mask((T, batch, cfg.lstm2_hidden)),
            mask((batch, cfg.fc_hidden)),
        )

    def astype(self, dtype) -> DropoutMasks:
        return DropoutMasks(self.lstm1.astype(dtype), self.lstm2.astype(dtype), self.fc1.astype(dtype))


@dataclass
class ForwardCache:
    params: Params
    cfg: ModelConfig
    masks: DropoutMasks | None
    lstm1: tuple
    ln1: tuple
    lstm2: tuple
    ln2: tuple
    pooled: np.ndarray
    fc1_pre: np.ndarray
    fc1_drop: np.ndarray


def forward(
    params: Params,
    x: np.ndarray,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    masks: DropoutMasks | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Compute logits for a batch ``x`` of shape ``(B, T, D)``.

    In training mode dropout masks come from ``masks`` if given, otherwise
    they are drawn from ``rng``. Evaluation mode uses no dropout.
    """
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    if x.ndim != 3 or x.shape[1:] != (cfg.window_len, cfg.input_dim):
        raise ValueError(f"expected batch of shape (B, {cfg.window_len}, {cfg.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    if train and masks is None:
        if rng is None:
            raise ValueError("training-mode forward needs an rng or explicit masks")
        masks = DropoutMasks.draw(cfg, x.shape[0], rng)
    if not train:
        masks = None

    xt = x.transpose(1, 0, 2)
    h1, c1 = _lstm_forward(xt, params["lstm1.W_ih"], params["lstm1.W_hh"], params["lstm1.b"])
    a1, n1 = _layernorm_forward(h1, params["ln1.gamma"], params["ln1.beta"])
    d1 = a1 * masks.lstm1 if masks is not None else a1
    h2, c2 = _lstm_forward(d1, params["lstm2.W_ih"], params["lstm2.W_hh"], params["lstm2.b"])
    a2, n2 = _layernorm_forward(h2, params["ln2.gamma"], params["ln2.beta"])
    d2 = a2 * masks.lstm2 if masks is not None else a2
    pooled = d2.mean(axis=0)
    u = pooled @ params["fc1.W"].T + params["fc1.b"]
    r = np.maximum(u, 0.0)
    q = r * masks.fc1 if masks is not None else r
    logits = q @ params["fc2.W"].T + params["fc2.b"]
    cache = ForwardCache(dict(params), cfg, masks, c1, n1, c2, n2, pooled, u, q)
    return logits, cache


def backward(params: Params, cache: ForwardCache, dlogits: np.ndarray) -> Params:
    """Exact gradients of the loss w.r.t. every parameter given ``dlogits``."""
    if set(cache.params) != set(params) or any(cache.params[k] is not params[k] for k in params):
        raise ValueError("cache was produced with different parameters")
    if dlogits.shape != (cache.pooled.shape[0], cache.cfg.num_classes):
        raise ValueError(f"dlogits shape {dlogits.shape} does not match cached batch")
    m = cache.masks
    T = cache.cfg.window_len
    g: Params = {}

    g["fc2.W"] = dlogits.T @ cache.fc1_drop
    g["fc2.b"] = dlogits.sum(axis=0)
    dq = dlogits @ params["fc2.W"]
    dr = dq * m.fc1 if m is not None else dq
    du = dr * (cache.fc1_pre > 0)
    g["fc1.W"] = du.T @ cache.pooled
    g["fc1.b"] = du.sum(axis=0)
    dpooled = du @ params["fc1.W"]

    dd2 = np.broadcast_to(dpooled / T, (T,) + dpooled.shape)
    da2 = dd2 * m.lstm2 if m is not None else dd2
    dh2, g["ln2.gamma"], g["ln2.beta"] = _layernorm_backward(da2, cache.ln2, params["ln2.gamma"])
    dd1, g["lstm2.W_ih"], g["lstm2.W_hh"], g["lstm2.b"] = _lstm_backward(
        dh2, cache.lstm2, params["lstm2.W_ih"], params["lstm2.W_hh"]
    )
    da1 = dd1 * m.lstm1 if m is not None else dd1
    dh1, g["ln1.gamma"], g["ln1.beta"] = _layernorm_backward(da1, cache.ln1, params["ln1.gamma"])
    _, g["lstm1.W_ih"], g["lstm1.W_hh"], g["lstm1.b"] = _lstm_backward(
        dh1, cache.lstm1, params["lstm1.W_ih"], params["lstm1.W_hh"], need_dx=False
    )
    return {k: g[k] for k in PARAM_NAMES}


def predict_logits(params: Params, x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Eval-mode logits without keeping backward caches."""
    xt = np.asarray(x, dtype=np.float64).transpose(1, 0, 2)
    h1, _ = _lstm_forward(xt, params["lstm1.W_ih"], params["lstm1.W_hh"], params["lstm1.b"], keep=False)
    a1, _ = _layernorm_forward(h1, params["ln1.gamma"], params["ln1.beta"])
    h2, _ = _lstm_forward(a1, params["lstm2.W_ih"], params["lstm2.W_hh"], params["lstm2.b"], keep=False)
    a2, _ = _layernorm_forward(h2, params["ln2.gamma"], params["ln2.beta"])
    r = np.maximum(a2.mean(axis=0) @ params["fc1.W"].T + params["fc1.b"], 0.0)
    return r @ params["fc2.W"].T + params["fc2.b"]


# --------------------------------------------------------------------------
# output layer


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient ``(p - onehot) / B``."""
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {B}")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must be in 0..{C - 1}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(logsum - z[rows, labels]))
    p = np.exp(z - logsum[:, None])
    p[rows, labels] -= 1.0
    return loss, p / B


def predict_proba(params: Params, x: np.ndarray, cfg: ModelConfig, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode softmax probabilities, computed in chunks."""
    if np.ndim(x) != 3 or np.shape(x)[1:] != (cfg.window_len, cfg.input_dim):
        raise ValueError(f"expected batch of shape (N, {cfg.window_len}, {cfg.input_dim}), got {np.shape(x)}")
    out = [softmax(predict_logits(params, x[i:i + batch_size], cfg)) for i in range(0, len(x), batch_size)]
    if not out:
        return np.zeros((0, cfg.num_classes))
    return np.concatenate(out)
