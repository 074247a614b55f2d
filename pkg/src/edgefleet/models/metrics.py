from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import EmptyInput, LengthMismatch


def rmse(predictions: Sequence[float] | np.ndarray, actuals: Sequence[float] | np.ndarray) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    a = np.asarray(actuals, dtype=np.float64).ravel()
    if p.shape != a.shape:
        raise LengthMismatch(f"{p.size} predictions vs {a.size} actuals")
    if p.size == 0:
        raise EmptyInput("rmse of empty vectors")
    d = p - a
    return float(np.sqrt(np.mean(d * d)))
