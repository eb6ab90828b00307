"""Clip-wise handcrafted statistics on the raw signal and on MFCC rows.

All moments are population (biased) moments. Kurtosis is non-excess, so a
Gaussian scores about 3.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import FeatureMatrix

__all__ = [
    "SIGMA_FLOOR",
    "STATISTICS",
    "DegenerateInputError",
    "StatVector",
    "moments",
    "skewness",
    "kurtosis",
    "rms",
    "variance_of_derivative",
    "stat_layout",
    "clip_stat_vector",
]

SIGMA_FLOOR = 1e-12
STATISTICS = ("mean", "variance", "var_derivative", "skewness", "kurtosis", "rms")


class DegenerateInputError(ValueError):
    """Standardised moments are undefined for (near) zero variance."""


def _vec(x, min_len=1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {x.size}")
    return x


def moments(x):
    """Return ``(mean, population variance)``."""
    x = _vec(x)
    mu = x.mean()
    return float(mu), float(np.mean((x - mu) ** 2))


def _standardized(x) -> np.ndarray:
    x = _vec(x, 2)
    mu, var = moments(x)
    if var <= SIGMA_FLOOR:
        raise DegenerateInputError(f"variance {var:g} is below the floor {SIGMA_FLOOR:g}")
    return (x - mu) / np.sqrt(var)


def skewness(x) -> float:
    return float(np.mean(_standardized(x) ** 3))


def kurtosis(x) -> float:
    return float(np.mean(_standardized(x) ** 4))


def rms(x) -> float:
    x = _vec(x)
    return float(np.sqrt(np.mean(x * x)))


def variance_of_derivative(x) -> float:
    return moments(np.diff(_vec(x, 2)))[1]


def _six(x) -> list:
    mean, var = moments(x)
    try:
        skew, kurt = skewness(x), kurtosis(x)
    except DegenerateInputError:
        skew = kurt = 0.0
    return [mean, var, variance_of_derivative(x), skew, kurt, rms(x)]


def stat_layout(n_mfcc: int = 40) -> tuple:
    """Slot descriptors ``source:statistic`` in storage order."""
    sources = ["raw"] + [f"mfcc_{k}" for k in range(n_mfcc)]
    return tuple(f"{src}:{stat}" for src in sources for stat in STATISTICS)


@dataclass(frozen=True)
class StatVector:
    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.layout),):
            raise ValueError("layout length does not match values")
        if not np.all(np.isfinite(v)):
            raise ValueError("stat vector contains non-finite values")
        object.__setattr__(self, "values", v)


def clip_stat_vector(raw, mfcc: FeatureMatrix) -> StatVector:
    """Six statistics of the raw segment, then six per MFCC coefficient row.

    Degenerate skewness/kurtosis (silent or constant input) are stored as 0.0.
    """
    if mfcc.kind != "mfcc":
        raise ValueError(f"expected an mfcc matrix, got {mfcc.kind}")
    samples = getattr(raw, "samples", raw)
    values = _six(samples)
    for row in mfcc.values:
        values.extend(_six(row))
    return StatVector(np.array(values), stat_layout(mfcc.shape[0]))
