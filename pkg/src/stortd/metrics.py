"""Scoring and streaming-cost profiling."""

from dataclasses import dataclass, field

import numpy as np

DETECTION_THRESHOLD = 1e-8


def rse(truth, estimate):
    """Relative squared error ``sqrt(sum (x - xhat)^2 / sum x^2)``."""
    truth = np.asarray(truth, dtype=float).ravel()
    estimate = np.asarray(estimate, dtype=float).ravel()
    if truth.shape != estimate.shape:
        raise ValueError(f"length mismatch: {truth.size} vs {estimate.size}")
    energy = float(np.sum(truth**2))
    if energy <= 0:
        raise ValueError("truth has zero energy; RSE is undefined")
    return float(np.sqrt(np.sum((truth - estimate) ** 2) / energy))


def outlier_f1(truth, detected, threshold=DETECTION_THRESHOLD):
    """Precision, recall and F1 of the outlier support.

    An entry counts as detected when ``|detected| > threshold``; the truth
    support is every nonzero entry of `truth`. Undefined ratios are reported
    as 0.
    """
    truth = np.asarray(truth)
    detected = np.asarray(detected)
    if truth.shape != detected.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {detected.shape}")
    t = truth != 0
    d = np.abs(detected) > threshold
    tp = int(np.sum(t & d))
    precision = tp / int(d.sum()) if d.any() else 0.0
    recall = tp / int(t.sum()) if t.any() else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


@dataclass
class SliceRecord:
    t: int
    rse: float
    wall_time: float
    state_elements: int
    inner_iters: int
    f1: float = float("nan")


@dataclass
class EvalAccumulator:
    """Running squared-error sums over test entries plus per-slice records."""

    sum_sq_err: float = 0.0
    sum_sq_truth: float = 0.0
    records: list = field(default_factory=list)

    def add(self, truth, estimate):
        truth = np.asarray(truth, dtype=float).ravel()
        estimate = np.asarray(estimate, dtype=float).ravel()
        self.sum_sq_err += float(np.sum((truth - estimate) ** 2))
        self.sum_sq_truth += float(np.sum(truth**2))

    def record(self, rec):
        self.records.append(rec)

    def rse(self):
        if self.sum_sq_truth <= 0:
            return float("nan")
        return float(np.sqrt(self.sum_sq_err / self.sum_sq_truth))

    def merge(self, other):
        return EvalAccumulator(
            sum_sq_err=self.sum_sq_err + other.sum_sq_err,
            sum_sq_truth=self.sum_sq_truth + other.sum_sq_truth,
            records=self.records + other.records,
        )


@dataclass
class StreamingProfile:
    slope: float
    mean_time: float
    max_state_elements: int
    constant_state: bool


def streaming_profile(records):
    """Least-squares slope of per-slice wall time against ``t``.

    Requires at least 10 records.
    """
    if len(records) < 10:
        raise ValueError(f"need at least 10 records, got {len(records)}")
    t = np.array([r.t for r in records], dtype=float)
    wall = np.array([r.wall_time for r in records], dtype=float)
    slope = float(np.polyfit(t, wall, 1)[0])
    sizes = {r.state_elements for r in records}
    return StreamingProfile(
        slope=slope,
        mean_time=float(wall.mean()),
        max_state_elements=max(sizes),
        constant_state=len(sizes) == 1,
    )


@dataclass
class RunReport:
    """Outcome of one streamed run.

    ``recovered`` and ``outliers`` optionally hold the per-day slices for
    dumping; ``final_rse`` is the imputation RSE accumulated over all
    held-out entries of the run.
    """

    records: list = field(default_factory=list)
    final_rse: float = float("nan")
    state_elements: int = 0
    recovered: list | None = None
    outliers: list | None = None

    def mean_time(self):
        if not self.records:
            return float("nan")
        return float(np.mean([r.wall_time for r in self.records]))

    def profile(self):
        if len(self.records) < 10:
            return None
        return streaming_profile(self.records)
