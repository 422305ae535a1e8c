"""Summary statistics and CSV helpers for experiment outputs."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import stats

BOOTSTRAP_RESAMPLES = 10_000


def bootstrap_ci(values, stat=np.mean, n_boot: int = BOOTSTRAP_RESAMPLES,
                 alpha: float = 0.05, seed: int = 0):
    """Percentile bootstrap CI of a statistic over independent seed values."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("no values to summarize")
    if len(values) == 1:
        v = float(values[0])
        return v, v
    rng = np.random.default_rng(seed)
    draws = rng.integers(len(values), size=(n_boot, len(values)))
    boots = stat(values[draws], axis=1)
    return float(np.quantile(boots, alpha / 2)), float(np.quantile(boots, 1 - alpha / 2))


def summarize(values, stat=np.mean, **kwargs) -> dict:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = bootstrap_ci(values, stat=stat, **kwargs)
    return {"mean": float(values.mean()), "median": float(np.median(values)),
            "ci_lo": lo, "ci_hi": hi, "n": int(len(values)),
            "values": [float(v) for v in values]}


def sign_test_less(a, b) -> float:
    """One-sided sign test p-value for H1: a < b pairwise (ties dropped)."""
    a, b = np.asarray(a), np.asarray(b)
    wins = int((a < b).sum())
    n = int((a != b).sum())
    if n == 0:
        return 1.0
    return float(stats.binomtest(wins, n, 0.5, alternative="greater").pvalue)


def moving_average(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < window:
        return x.copy()
    return np.convolve(x, np.ones(window) / window, mode="valid")


def write_csv(path, rows, fieldnames=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    fieldnames = fieldnames or list(rows[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path
