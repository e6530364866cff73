"""Binary focal loss evaluated in logit space."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_CLAMP = -80.0


def focal_loss(logits, targets, alpha: float = 0.8, gamma: float = 2.0) -> Tensor:
    """Mean of ``-alpha_t * (1 - p_t)**gamma * log(p_t)`` over the batch.

    ``log(p_t)`` is ``log_sigmoid(s * z)`` with ``s = +1`` for positives and
    ``-1`` for negatives; the modulating factor is ``exp(gamma * log(1 - p_t))``
    with the log clamped at -80, so logits of any magnitude stay finite.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"focal alpha must lie in (0, 1), got {alpha}")
    if gamma < 0:
        raise ValueError(f"focal gamma must be >= 0, got {gamma}")
    logits = T.as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    sign = 2.0 * y - 1.0
    alpha_t = np.where(y == 1.0, alpha, 1.0 - alpha)
    log_pt = T.log_sigmoid(logits * sign)
    per_sample = log_pt * (-alpha_t)
    if gamma != 0:
        log_1m_pt = T.clip_min(T.log_sigmoid(logits * (-sign)), LOG_CLAMP)
        per_sample = per_sample * T.exp(log_1m_pt * gamma)
    return per_sample.mean()
