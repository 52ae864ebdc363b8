"""Dense linear-algebra and loss kernels.

Everything downstream (layers, protocol, baselines) is built on the small
set of operations here.  Matrices are 2-D numpy arrays; the compute
precision is float32 by default with a float64 mirror selected by the
``precision`` config (tests additionally run their own float64 oracles).
All public operations validate shapes, reject unknown parameters, and
guarantee finite outputs.

Determinism: results are bit-identical for repeated runs on one platform
(numpy's BLAS accumulation order is fixed per platform/shape); across
platforms a small relative drift from libm/BLAS differences is tolerated
by every consumer.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError
from .rng import Rng

DTYPES = {"f32": np.float32, "f64": np.float64}

ACTIVATIONS = ("relu", "tanh", "identity")


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} produced non-finite values")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with shape validation and finiteness check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul shape mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite("matmul", out)


def gaussian_matrix(
    rows: int,
    cols: int,
    mean: float,
    std: float,
    rng: Rng,
    dtype=np.float32,
) -> np.ndarray:
    """(rows x cols) matrix of i.i.d. Gaussian samples, filled row-major.

    Consumes exactly 2*ceil(rows*cols / 2) rng counter steps (see Rng.normals).
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"matrix dims must be positive, got {rows}x{cols}")
    if std < 0:
        raise ConfigError("gaussian std must be >= 0")
    flat = rng.normals(rows * cols, mean=mean, std=std)
    return check_finite("gaussian_matrix", flat.reshape(rows, cols).astype(dtype))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    loss    = mean_i( -log softmax(logits_i)[labels_i] )
    dlogits = (softmax(logits) - onehot(labels)) / batch

    Stabilized by per-row max subtraction; computed in the dtype of `logits`.
    """
    if logits.ndim != 2:
        raise ShapeError("logits must be 2-D (batch x classes)")
    batch, classes = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"labels must have shape ({batch},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"label out of range [0, {classes})")

    with np.errstate(over="ignore", invalid="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        denom = exp.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(denom)
        loss = float(-log_probs[np.arange(batch), labels].mean())
        dlogits = exp / denom
        dlogits[np.arange(batch), labels] -= 1
        dlogits /= logits.dtype.type(batch)
    check_finite("softmax_cross_entropy", dlogits)
    if not np.isfinite(loss):
        raise NumericError("softmax_cross_entropy loss is non-finite")
    return loss, dlogits


def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "tanh":
        return check_finite("tanh", np.tanh(x))
    if kind == "identity":
        return x
    raise ConfigError(f"unknown activation kind: {kind!r}")


def activation_backward(kind: str, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """dy elementwise-scaled by the activation derivative at pre-activation x.

    relu uses derivative 0 at exactly x == 0.
    """
    if x.shape != dy.shape:
        raise ShapeError(f"activation backward shape mismatch: {x.shape} vs {dy.shape}")
    if kind == "relu":
        return dy * (x > 0)
    if kind == "tanh":
        t = np.tanh(x)
        return check_finite("tanh backward", dy * (1 - t * t))
    if kind == "identity":
        return dy
    raise ConfigError(f"unknown activation kind: {kind!r}")
