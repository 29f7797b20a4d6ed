"""Missing-data masks and sparse outlier injection for synthetic scenarios.

Masks are ``n1 x n2`` boolean arrays (timestamp x location) where ``True``
marks an observed entry. Every draw is a pure function of ``(seed, day)``.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np


class Pattern(enum.Enum):
    RM = "RM"  # random entries
    TM = "TM"  # whole timestamps (rows)
    SM = "SM"  # whole locations (columns)
    MM = "MM"  # one of RM / TM / SM per day, uniformly


MIXED_CHOICES = (Pattern.RM, Pattern.TM, Pattern.SM)


@dataclass(frozen=True)
class MaskSpec:
    pattern: Pattern = Pattern.RM
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"missing rate must lie in [0, 1], got {self.rate}")


@dataclass(frozen=True)
class OutlierSpec:
    density: float = 0.0
    magnitude: float = 10.0
    sign: str = "symmetric"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.density < 1.0:
            raise ValueError(f"outlier density must lie in [0, 1), got {self.density}")
        if self.sign not in ("positive", "symmetric"):
            raise ValueError(f"sign must be 'positive' or 'symmetric', got {self.sign!r}")
        if self.magnitude < 0:
            raise ValueError("magnitude must be nonnegative")


def _count(rate, n):
    # tolerate float noise such as 0.3 * 10 == 3.0000000000000004
    return min(n, math.ceil(round(rate * n, 9)))


def _draw(pattern, rate, n1, n2, rng):
    mask = np.ones((n1, n2), dtype=bool)
    if pattern is Pattern.RM:
        mask &= rng.random((n1, n2)) >= rate
    elif pattern is Pattern.TM:
        mask[rng.choice(n1, _count(rate, n1), replace=False), :] = False
    elif pattern is Pattern.SM:
        mask[:, rng.choice(n2, _count(rate, n2), replace=False)] = False
    return mask


def daily_pattern(spec, day):
    """Pattern actually used on `day` (resolves MM to its sub-pattern)."""
    if spec.pattern is not Pattern.MM:
        return spec.pattern
    rng = np.random.default_rng([spec.seed, day, 0])
    return MIXED_CHOICES[int(rng.integers(len(MIXED_CHOICES)))]


def gen_mask(spec, n1, n2, day=0):
    """Observation mask for one day.

    RM drops each entry independently with probability ``rate``; TM drops
    ``ceil(rate * n1)`` whole rows; SM drops ``ceil(rate * n2)`` whole
    columns; MM picks one of the three per day.
    """
    pattern = daily_pattern(spec, day)
    rng = np.random.default_rng([spec.seed, day, 1])
    return _draw(pattern, spec.rate, n1, n2, rng)


def inject_outliers(clean, mask, spec, sigma, day=0):
    """Add sparse spikes of size ``magnitude * sigma`` on observed entries.

    ``ceil(density * #observed)`` observed entries are chosen uniformly
    without replacement. Returns ``(corrupted, truth)`` where ``truth`` holds
    the added spikes and is zero elsewhere.
    """
    clean = np.asarray(clean, dtype=float)
    observed = np.flatnonzero(np.asarray(mask, dtype=bool))
    truth = np.zeros(clean.size)
    k = _count(spec.density, observed.size)
    if k:
        rng = np.random.default_rng([spec.seed, day, 2])
        chosen = rng.choice(observed, k, replace=False)
        signs = np.ones(k) if spec.sign == "positive" else rng.choice([-1.0, 1.0], k)
        truth[chosen] = spec.magnitude * sigma * signs
    truth = truth.reshape(clean.shape)
    return clean + truth, truth


def write_mask_csv(path, mask):
    """One row per timestamp, ``0``/``1`` per location."""
    np.savetxt(path, np.asarray(mask, dtype=int), fmt="%d", delimiter=",")


def read_mask_csv(path):
    return np.loadtxt(path, delimiter=",", dtype=int, ndmin=2).astype(bool)
