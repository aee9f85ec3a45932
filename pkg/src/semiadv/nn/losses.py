import numpy as np

from semiadv.errors import ContractError
from semiadv.nn.tensor import Tensor, as_tensor


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(logits, target_dist):
    """Mean over the batch of ``-sum_k t_k log softmax(logits)_k``.

    ``target_dist`` rows must be probability vectors; soft targets (mixup) are
    allowed.
    """
    t = target_dist.data if isinstance(target_dist, Tensor) else np.asarray(target_dist, dtype=np.float64)
    if t.shape != tuple(logits.shape):
        raise ContractError(f"cross_entropy: target {t.shape} vs logits {tuple(logits.shape)}")
    if np.any(t < -1e-12) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("cross_entropy: target rows must be probability vectors")
    return -(as_tensor(logits).log_softmax(axis=1) * t).sum() / t.shape[0]


def mse(pred, target):
    """Batch mean of squared L2 row distances (not averaged over columns)."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ContractError(f"mse: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).sum() / pred.shape[0]
