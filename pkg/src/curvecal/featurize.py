"""No-load baseline averaging and the 24-dimensional model input.

A baseline is the mean of an averaging window of zero-force frames. Features
are the 16 node means normalized to the ADC range, followed by 8 global
statistics computed on the normalized values, in this fixed order:

    sum, mean, std, min, max, range, l2, iqr

Conventions (normative for the dataset format): population variance (divide
by 16) and linear-interpolation quantiles at ranks p*(n-1) for the IQR.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContaminationError, DomainError
from .sensor_sim import N_NODES

FORCE_EPSILON = 0.05  # newtons; any more and a "no-load" frame is contaminated

STAT_NAMES = ("sum", "mean", "std", "min", "max", "range", "l2", "iqr")
N_FEATURES = N_NODES + len(STAT_NAMES)
FEATURE_ORDER_VERSION = 1


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine map from raw counts to [0, 1]; defaults to the full ADC range."""

    lo: float = 0.0
    hi: float = 1023.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigError(f"normalization span degenerate: [{self.lo}, {self.hi}]")

    @classmethod
    def for_adc_bits(cls, adc_bits: int) -> "NormalizationSpec":
        return cls(lo=0.0, hi=float((1 << adc_bits) - 1))

    def apply(self, counts: np.ndarray) -> np.ndarray:
        return (np.asarray(counts, dtype=float) - self.lo) / (self.hi - self.lo)


@dataclass(frozen=True)
class BaselineMeasurement:
    """Per-node mean counts over an averaging window of no-load frames."""

    node_means: tuple[float, ...]
    n_averaged: int = 100

    def __post_init__(self):
        if len(self.node_means) != N_NODES:
            raise ConfigError(f"node_means must have {N_NODES} entries")
        if self.n_averaged < 1:
            raise ConfigError("n_averaged must be >= 1")
        arr = np.asarray(self.node_means)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("node means must be finite and nonnegative")


@dataclass(frozen=True)
class FeatureVector:
    """16 normalized node readings plus 8 global statistics."""

    normalized_nodes: tuple[float, ...]
    global_stats: tuple[float, ...]

    def __post_init__(self):
        if len(self.normalized_nodes) != N_NODES:
            raise ConfigError(f"normalized_nodes must have {N_NODES} entries")
        if len(self.global_stats) != len(STAT_NAMES):
            raise ConfigError(f"global_stats must have {len(STAT_NAMES)} entries")
        if not np.all(np.isfinite(self.as_array())):
            raise DomainError("feature vector must be finite")

    def as_array(self) -> np.ndarray:
        return np.array(self.normalized_nodes + self.global_stats, dtype=float)


def average_baseline(frames) -> BaselineMeasurement:
    """Arithmetic per-node mean over a sequence of no-load frames."""
    frames = list(frames)
    if not frames:
        raise ConfigError("cannot average an empty frame sequence")
    for f in frames:
        if f.applied_force > FORCE_EPSILON:
            raise ContaminationError(
                f"baseline frame at t={f.t} carries {f.applied_force:.3f} N "
                f"(> {FORCE_EPSILON} N); capture is not no-load"
            )
    counts = np.array([f.node_counts for f in frames], dtype=float)
    means = counts.mean(axis=0)
    return BaselineMeasurement(node_means=tuple(float(m) for m in means), n_averaged=len(frames))


def global_stats(normalized: np.ndarray) -> np.ndarray:
    """The 8 engineered statistics, in the normative order."""
    x = np.asarray(normalized, dtype=float)
    q1, q3 = np.quantile(x, [0.25, 0.75])  # linear interpolation at p*(n-1)
    return np.array(
        [
            x.sum(),
            x.mean(),
            x.std(),  # population convention, ddof=0
            x.min(),
            x.max(),
            x.max() - x.min(),
            np.sqrt((x**2).sum()),
            q3 - q1,
        ]
    )


def extract_features(baseline: BaselineMeasurement, norm: NormalizationSpec) -> FeatureVector:
    """Normalize node means and append the 8 global statistics."""
    nodes = norm.apply(np.asarray(baseline.node_means))
    stats = global_stats(nodes)
    return FeatureVector(
        normalized_nodes=tuple(float(v) for v in nodes),
        global_stats=tuple(float(v) for v in stats),
    )


# ---------------------------------------------------------------------------
# Feature dataset persistence: kappa_true,f01..f24
# ---------------------------------------------------------------------------

FEATURE_CSV_HEADER = ["kappa_true"] + [f"f{i:02d}" for i in range(1, N_FEATURES + 1)]


def dataset_header_comment(norm: NormalizationSpec) -> str:
    return (
        f"# feature_order_version={FEATURE_ORDER_VERSION}; "
        f"f01-f16: node readings normalized over [{norm.lo:g}, {norm.hi:g}]; "
        f"f17-f24 computed on normalized nodes, order: {','.join(STAT_NAMES)}"
    )


def save_feature_dataset(path, X: np.ndarray, y: np.ndarray, norm: NormalizationSpec) -> None:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != N_FEATURES or X.shape[0] != y.shape[0]:
        raise ConfigError(f"expected X of shape (n, {N_FEATURES}) matching y, got {X.shape}")
    with open(path, "w", newline="") as fh:
        fh.write(dataset_header_comment(norm) + "\n")
        writer = csv.writer(fh)
        writer.writerow(FEATURE_CSV_HEADER)
        for yi, xi in zip(y, X):
            writer.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def load_feature_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if header != FEATURE_CSV_HEADER:
        raise ConfigError(f"unexpected feature CSV header: {header}")
    for row in reader:
        rows.append([float(v) for v in row])
    arr = np.array(rows, dtype=float)
    if arr.size == 0:
        return np.zeros((0, N_FEATURES)), np.zeros(0)
    return arr[:, 1:], arr[:, 0]
