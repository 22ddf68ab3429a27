import numpy as np


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    """Elementwise relative error, clamped to absolute below magnitude 1."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(got), np.abs(want)))
    return float((np.abs(got - want) / denom).max())
