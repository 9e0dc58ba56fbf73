"""Distribution distances and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import EmptyInput, InsufficientSets, ShapeError
from .network import NetworkModel, predict
from .trace import TraceCorpus, overhead_ratios
from .transformer import TransformerSet

MEDIAN = "median-heuristic"
ESTIMATOR = "biased V-statistic"


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float | str = MEDIAN
    kernel: str = "gaussian"

    def __post_init__(self):
        if self.kernel != "gaussian":
            raise ValueError("only the gaussian kernel is supported")
        if self.bandwidth != MEDIAN and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be positive")


def median_bandwidth(points: np.ndarray) -> float:
    """Median pairwise Euclidean distance; 1.0 when all points coincide."""
    if len(points) < 2:
        return 1.0
    med = float(np.median(pdist(points)))
    return med if med > 0 else 1.0


def _sets(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(y, float))
    if x.shape[0] == 0 or y.shape[0] == 0 or x.size == 0 or y.size == 0:
        raise EmptyInput("mmd needs two nonempty sets")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"vector lengths differ: {x.shape[1]} vs {y.shape[1]}")
    return x, y


def resolve_bandwidth(kernel: KernelConfig, x: np.ndarray, y: np.ndarray) -> float:
    if kernel.bandwidth == MEDIAN:
        return median_bandwidth(np.concatenate([x, y]))
    return float(kernel.bandwidth)


def mmd(x, y, kernel: KernelConfig | float = KernelConfig()) -> float:
    """Gaussian-kernel maximum mean discrepancy between two samples."""
    x, y = _sets(x, y)
    if not isinstance(kernel, KernelConfig):
        kernel = KernelConfig(kernel)
    bw = resolve_bandwidth(kernel, x, y)
    gamma = 0.5 / bw ** 2
    kxx = np.exp(-gamma * cdist(x, x, "sqeuclidean")).mean()
    kyy = np.exp(-gamma * cdist(y, y, "sqeuclidean")).mean()
    kxy = np.exp(-gamma * cdist(x, y, "sqeuclidean")).mean()
    return float(np.sqrt(max(kxx + kyy - 2 * kxy, 0.0)))


@dataclass
class IntraCDReport:
    matrices: np.ndarray          # (K, S, S) pairwise MMD per class
    bandwidths: np.ndarray        # (K,) kernel bandwidth used per class
    avg_intra_cd: float
    min_intra_cd: float
    estimator: str = ESTIMATOR

    def per_class_avg(self) -> np.ndarray:
        s = self.matrices.shape[1]
        iu = np.triu_indices(s, 1)
        return self.matrices[:, iu[0], iu[1]].mean(axis=1)

    def per_class_min(self) -> np.ndarray:
        s = self.matrices.shape[1]
        iu = np.triu_indices(s, 1)
        return self.matrices[:, iu[0], iu[1]].min(axis=1)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "kernel": "gaussian",
            "avg_intra_cd": self.avg_intra_cd,
            "min_intra_cd": self.min_intra_cd,
            "bandwidths": self.bandwidths.tolist(),
            "matrices": self.matrices.tolist(),
        }


def intra_cd(sets: Sequence[TransformerSet], corpus: TraceCorpus,
             kernel: KernelConfig | None = None) -> IntraCDReport:
    """Pairwise MMD, per class, between the outputs of S transformer sets.

    With no explicit kernel the bandwidth of class k is the median pairwise
    distance of its clean traces, so reports from different sets and
    overhead settings are measured with the same ruler.
    """
    s = len(sets)
    if s < 2:
        raise InsufficientSets(f"intra-class distance needs at least 2 sets, got {s}")
    k = corpus.num_classes
    transformed = [tset.transform(corpus, "test") for tset in sets]
    mats = np.zeros((k, s, s))
    bws = np.zeros(k)
    for c in range(k):
        rows = np.flatnonzero(corpus.labels == c)
        if rows.size == 0:
            raise EmptyInput(f"class {c} has no traces")
        if kernel is None:
            bws[c] = median_bandwidth(corpus.values[rows])
        elif kernel.bandwidth == MEDIAN:
            bws[c] = median_bandwidth(np.concatenate([t[rows] for t in transformed]))
        else:
            bws[c] = float(kernel.bandwidth)
        for i, j in combinations(range(s), 2):
            mats[c, i, j] = mats[c, j, i] = mmd(transformed[i][rows], transformed[j][rows],
                                               KernelConfig(bws[c]))
    iu = np.triu_indices(s, 1)
    pairs = mats[:, iu[0], iu[1]]
    return IntraCDReport(mats, bws, float(pairs.mean(axis=1).mean()),
                         float(pairs.min(axis=1).mean()))


def predictions(model: NetworkModel, values: np.ndarray) -> np.ndarray:
    out = predict(model, values)
    return np.argmax(out, axis=1)  # first maximum wins ties


def classifier_accuracy(model: NetworkModel, corpus: TraceCorpus) -> float:
    if model.output_shape != (corpus.num_classes,):
        raise ShapeError(f"model outputs {model.output_shape}, corpus has "
                         f"{corpus.num_classes} classes")
    return float(np.mean(predictions(model, corpus.values) == corpus.labels) * 100.0)


def per_class_bwo(tset: TransformerSet, corpus: TraceCorpus) -> np.ndarray:
    """Mean test-phase bandwidth overhead (percent) of each class."""
    ratios = overhead_ratios(corpus.values, tset.transform(corpus, "test")) * 100.0
    out = np.zeros(corpus.num_classes)
    for c in range(corpus.num_classes):
        mask = corpus.labels == c
        out[c] = ratios[mask].mean() if mask.any() else np.nan
    return out


def mean_bwo(tset: TransformerSet, corpus: TraceCorpus) -> float:
    return float(np.nanmean(per_class_bwo(tset, corpus)))
