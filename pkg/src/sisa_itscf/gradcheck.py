"""Central finite-difference check of the analytic LSTM gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lstm
from .lstm import DropoutMasks, ModelConfig

TINY_CONFIG = ModelConfig(lstm1_hidden=8, lstm2_hidden=4, window_len=5, dropout_rate=0.0)


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float]
    num_checked: int


def relative_error(a: np.ndarray, f: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)


def grad_check(
    cfg: ModelConfig = TINY_CONFIG,
    seed: int = 0,
    batch: int = 2,
    step: float = 1e-5,
    kink_margin: float = 1e-3,
) -> GradCheckResult:
    """Compare every analytic gradient entry against central differences.

    With ``cfg.dropout_rate > 0`` one set of masks is drawn and replayed in
    both the analytic and the numeric evaluations.
    """
    rng = np.random.default_rng(seed)
    params = lstm.init_params(cfg, rng)
    # perturb biases and LN affine terms away from their structured init
    for k in params:
        if not k.endswith(("W_ih", "W_hh", ".W")):
            params[k] = params[k] + 0.1 * rng.standard_normal(params[k].shape)
    train = cfg.dropout_rate > 0
    # redraw until no ReLU input is close enough to 0 for a step to cross the kink
    for _ in range(1000):
        x = rng.standard_normal((batch, cfg.window_len, cfg.input_dim))
        y = rng.integers(0, cfg.num_classes, size=batch)
        masks = DropoutMasks.draw(cfg, batch, rng) if train else None
        _, cache = lstm.forward(params, x, cfg, train=train, masks=masks)
        if np.abs(cache.fc1_pre).min() > kink_margin:
            break
    else:
        raise RuntimeError("could not find a kink-free evaluation point")

    # The numeric side runs in extended precision so that one-ulp rounding of
    # the loss does not swamp gradient entries near the 1e-8 floor.
    xl = x.astype(np.longdouble)
    masks_l = None
    if masks is not None:
        masks_l = masks.astype(np.longdouble)

    def loss_at(p):
        logits, _ = lstm.forward(p, xl, cfg, train=train, masks=masks_l)
        z = logits - logits.max(axis=1, keepdims=True)
        return np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(batch), y])

    logits, cache = lstm.forward(params, x, cfg, train=train, masks=masks)
    _, dlogits = lstm.softmax_cross_entropy(logits, y)
    grads = lstm.backward(params, cache, dlogits)

    per_param: dict[str, float] = {}
    count = 0
    params_l = {k: v.astype(np.longdouble) for k, v in params.items()}
    for name in lstm.PARAM_NAMES:
        base = params_l[name]
        numeric = np.empty(base.shape)
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + step
            up = loss_at(params_l)
            base[idx] = orig - step
            down = loss_at(params_l)
            base[idx] = orig
            numeric[idx] = (up - down) / (2 * np.longdouble(step))
        per_param[name] = float(relative_error(grads[name], numeric).max())
        count += base.size
    return GradCheckResult(max(per_param.values()), per_param, count)
