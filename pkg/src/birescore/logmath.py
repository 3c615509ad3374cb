"""Log-domain numerics: stable log-sum-exp and temperature softmax.

Everything works in natural log. Vectors may contain -inf entries, which
represent exactly-zero probability; +inf and NaN are never valid.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

NEG_INF = float("-inf")


def logsumexp(values: np.ndarray) -> float:
    """log(sum(exp(values))) with max subtraction; tolerates -inf entries."""
    values = np.asarray(values, dtype=float)
    hi = np.max(values)
    if hi == NEG_INF:
        return NEG_INF
    if not np.isfinite(hi):
        raise NumericalError(f"non-finite maximum {hi!r} in logsumexp input")
    return float(hi + np.log(np.sum(np.exp(values - hi))))


def temp_softmax(logits: np.ndarray, alpha: float) -> np.ndarray:
    """Temperature softmax: exp(alpha*z_i) / sum_j exp(alpha*z_j).

    alpha must be > 0; alpha=1 is the ordinary softmax. Output sums to 1
    within 1e-12. Entries at -inf map to exactly 0.
    """
    if alpha <= 0:
        raise NumericalError(f"temperature alpha must be > 0, got {alpha}")
    z = alpha * np.asarray(logits, dtype=float)
    hi = np.max(z)
    if hi == NEG_INF:
        raise NumericalError("all logits are -inf: no probability mass anywhere")
    if not np.isfinite(hi):
        raise NumericalError(f"non-finite logit maximum {hi!r}")
    e = np.exp(z - hi)
    return e / e.sum()


def log_temp_softmax(logits: np.ndarray, alpha: float, index: int) -> float:
    """log of temp_softmax(logits, alpha) at one index, without exponentiating.

    Returns -inf when the indexed logit carries zero mass.
    """
    if alpha <= 0:
        raise NumericalError(f"temperature alpha must be > 0, got {alpha}")
    z = alpha * np.asarray(logits, dtype=float)
    zi = float(z[index])
    if zi == NEG_INF:
        return NEG_INF
    return zi - logsumexp(z)
