"""Finite-difference and split-exactness oracles exposed by the CLI.

Both checks are independent of the backward implementation they audit:
the gradient check compares analytic adapter gradients against 64-bit
central finite differences of the forward-only loss, and the exactness
check compares the three-tier pipeline against the monolithic trainer.
"""

from __future__ import annotations

import numpy as np

from .baselines import train_centralized
from .config import RunConfig, with_overrides
from .errors import ConfigError
from .model import adapter_rank, build_model, segment_backward, segment_forward
from .numerics import softmax_cross_entropy
from .protocol import run_training
from .rng import Rng

GRAD_TOLERANCE = 1e-4
SPLIT_TOLERANCE_F32 = 1e-5
SPLIT_TOLERANCE_F64 = 1e-10
MAX_CHECK_PARAMS = 10_000


def _loss_of(layers, adapters, x, labels) -> float:
    logits, _ = segment_forward(layers, adapters, x)
    loss, _ = softmax_cross_entropy(logits, labels)
    return loss


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def adapter_gradient_check(config: RunConfig, h: float = 1e-6,
                           batch: int = 4) -> tuple[float, int]:
    """Max relative error between analytic adapter gradients and central
    finite differences, over every adapter entry, on a float64 model.

    Adapters are moved to a random point first: a zero-initialized B would
    mask errors in the A-gradient path, and the point's scale keeps every
    gradient entry above the finite-difference noise floor.  Returns
    (max_rel_err, n_checked).
    """
    total = _model_params(config)
    if total > MAX_CHECK_PARAMS:
        raise ConfigError(
            f"gradient check requires a tiny model (<= {MAX_CHECK_PARAMS} "
            f"parameters), config has {total}"
        )
    rng = Rng(config.seed).derive("gradcheck")
    model = build_model(
        config.input_dim, config.widths, config.classes, config.rank,
        config.init_std, config.activation, rng.derive("model"),
        dtype=np.float64, frozen_std=config.frozen_std,
    )
    for ad in model.adapters:
        ad.A = rng.derive("A", ad.layer_index).normals(ad.A.size, std=0.3).reshape(ad.A.shape)
        ad.B = rng.derive("B", ad.layer_index).normals(ad.B.size, std=0.3).reshape(ad.B.shape)
    x = rng.derive("x").normals(batch * config.input_dim).reshape(batch, config.input_dim)
    labels = np.array([rng.derive("y").below(config.classes) for _ in range(batch)])

    logits, cache = segment_forward(model.layers, model.adapters, x)
    _, dlogits = softmax_cross_entropy(logits, labels)
    _, grads = segment_backward(model.layers, model.adapters, cache, dlogits)

    worst = 0.0
    checked = 0
    for ad, (ga, gb) in zip(model.adapters, grads):
        for mat, grad in ((ad.A, ga), (ad.B, gb)):
            flat = mat.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = _loss_of(model.layers, model.adapters, x, labels)
                flat[i] = keep - h
                down = _loss_of(model.layers, model.adapters, x, labels)
                flat[i] = keep
                fd = (up - down) / (2 * h)
                worst = max(worst, _relative_error(fd, float(gflat[i])))
                checked += 1
    return worst, checked


def _model_params(config: RunConfig) -> int:
    """Frozen plus trainable parameter count, straight from the dims."""
    return sum(
        d * h_ + adapter_rank(config.rank, d, h_) * (d + h_)
        for d, h_ in config.layer_dims()
    )


def split_divergence(config: RunConfig) -> tuple[float, float]:
    """Max relative divergence between the three-tier pipeline and the
    centralized oracle at (edges=1, users=1): per-step losses and final
    adapter entries."""
    small = with_overrides(config, edges=1, users=1)
    split_run = run_training(small)
    oracle = train_centralized(small)
    loss_div = 0.0
    for a, b in zip(split_run.step_losses, oracle.step_losses):
        loss_div = max(loss_div, _relative_error(a, b))
    adapter_div = 0.0
    for idx, ours in split_run.final_adapters.items():
        ref = oracle.final_adapters[idx]
        for mine, theirs in ((ours.A, ref.A), (ours.B, ref.B)):
            denom = np.maximum(1e-8, np.abs(mine) + np.abs(theirs))
            adapter_div = max(adapter_div, float((np.abs(mine - theirs) / denom).max()))
    return loss_div, adapter_div


def split_tolerance(precision: str) -> float:
    return SPLIT_TOLERANCE_F64 if precision == "f64" else SPLIT_TOLERANCE_F32
