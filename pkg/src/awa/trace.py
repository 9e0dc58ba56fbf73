"""Trace representations: direction sequences, burst sequences and the
fixed-length encoding every network consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateTrace, EmptyInput, InvalidTrace, SplitError

DEFAULT_LENGTH = 2000


@dataclass(frozen=True)
class DirectionSequence:
    dirs: tuple[int, ...]

    def __post_init__(self):
        dirs = tuple(int(d) for d in self.dirs)
        if not dirs:
            raise InvalidTrace("direction sequence is empty")
        if any(d not in (1, -1) for d in dirs):
            raise InvalidTrace("directions must be +1 or -1")
        object.__setattr__(self, "dirs", dirs)

    def __len__(self) -> int:
        return len(self.dirs)


@dataclass(frozen=True)
class BurstSequence:
    bursts: tuple[int, ...]

    def __post_init__(self):
        bursts = tuple(int(b) for b in self.bursts)
        if not bursts:
            raise InvalidTrace("burst sequence is empty")
        arr = np.asarray(bursts)
        if np.any(arr == 0):
            raise InvalidTrace("burst sequence contains a zero entry")
        if arr.size > 1 and np.any(np.sign(arr[1:]) == np.sign(arr[:-1])):
            raise InvalidTrace("burst signs must alternate")
        object.__setattr__(self, "bursts", bursts)

    def __len__(self) -> int:
        return len(self.bursts)


@dataclass(frozen=True, eq=False)
class FixedTrace:
    """A burst sequence copied into a zero-padded vector of fixed length."""

    values: np.ndarray
    original_burst_count: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise InvalidTrace("fixed trace must be a nonempty vector")
        count = int(self.original_burst_count)
        if not 0 <= count <= values.size:
            raise InvalidTrace(f"burst count {count} outside [0, {values.size}]")
        if np.any(values[count:] != 0):
            raise InvalidTrace("padding positions must be zero")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "original_burst_count", count)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, FixedTrace):
            return NotImplemented
        return (self.original_burst_count == other.original_burst_count
                and np.array_equal(self.values, other.values))

    def bursts(self) -> BurstSequence:
        """Recover the (possibly truncated) burst sequence.

        Only valid for integer-valued traces, e.g. test-phase outputs.
        """
        head = self.values[:self.original_burst_count]
        if not np.all(head == np.round(head)):
            raise InvalidTrace("trace has non-integer burst sizes")
        return BurstSequence(tuple(int(v) for v in head))


def ds_to_bs(ds: DirectionSequence | Sequence[int]) -> BurstSequence:
    if not isinstance(ds, DirectionSequence):
        ds = DirectionSequence(tuple(ds))
    dirs = np.asarray(ds.dirs)
    # indexes where a new run starts
    starts = np.flatnonzero(np.r_[True, dirs[1:] != dirs[:-1]])
    lengths = np.diff(np.r_[starts, dirs.size])
    return BurstSequence(tuple((lengths * dirs[starts]).tolist()))


def bs_to_ds(bs: BurstSequence | Sequence[int]) -> DirectionSequence:
    if not isinstance(bs, BurstSequence):
        bs = BurstSequence(tuple(bs))
    arr = np.asarray(bs.bursts)
    return DirectionSequence(tuple(np.repeat(np.sign(arr), np.abs(arr)).tolist()))


def to_fixed(bs: BurstSequence | Sequence[int], length: int = DEFAULT_LENGTH) -> FixedTrace:
    if length < 1:
        raise ValueError("length must be >= 1")
    bursts = bs.bursts if isinstance(bs, BurstSequence) else tuple(bs)
    count = min(len(bursts), length)
    values = np.zeros(length)
    values[:count] = bursts[:count]
    return FixedTrace(values, count)


def refix(trace: FixedTrace, length: int) -> FixedTrace:
    """Re-encode a fixed trace at another length (truncating or padding)."""
    count = min(trace.original_burst_count, length)
    values = np.zeros(length)
    values[:count] = trace.values[:count]
    return FixedTrace(values, count)


def bandwidth_overhead(original, transformed) -> float:
    """Percentage of added volume: sum | |t| - |o| | / sum |o| * 100."""
    o = np.abs(_values(original))
    t = np.abs(_values(transformed))
    if o.shape != t.shape:
        raise InvalidTrace(f"length mismatch {o.shape} vs {t.shape}")
    base = o.sum()
    if base == 0:
        raise DegenerateTrace("original trace has zero magnitude")
    return float(np.abs(t - o).sum() / base * 100.0)


def overhead_ratios(original: np.ndarray, transformed: np.ndarray) -> np.ndarray:
    """Row-wise overhead fractions for two (n, L) matrices."""
    o = np.abs(np.asarray(original, dtype=np.float64))
    t = np.abs(np.asarray(transformed, dtype=np.float64))
    base = o.sum(axis=1)
    if np.any(base == 0):
        raise DegenerateTrace("original trace has zero magnitude")
    return np.abs(t - o).sum(axis=1) / base


def average_trace(traces: Iterable) -> np.ndarray:
    rows = [_values(t) for t in traces]
    if not rows:
        raise EmptyInput("cannot average an empty trace set")
    if len({r.size for r in rows}) != 1:
        raise InvalidTrace("traces have unequal lengths")
    return np.mean(np.stack(rows), axis=0)


def _values(trace) -> np.ndarray:
    if isinstance(trace, FixedTrace):
        return trace.values
    return np.asarray(trace, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class TraceCorpus:
    """Labeled traces stored as an ``(n, L)`` matrix.

    ``counts`` holds the original burst count of each row.
    """

    values: np.ndarray
    labels: np.ndarray
    num_classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidTrace("corpus values must be a 2-d matrix")
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if labels.size != values.shape[0]:
            raise InvalidTrace("traces and labels differ in length")
        k = int(self.num_classes)
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise InvalidTrace(f"labels must lie in [0, {k})")
        if self.counts is None:
            nonzero = values != 0
            counts = np.where(nonzero.any(axis=1),
                              values.shape[1] - np.argmax(nonzero[:, ::-1], axis=1), 0)
        else:
            counts = np.array(self.counts, dtype=np.int64).reshape(-1)
        for arr in (values, labels, counts):
            arr.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "num_classes", k)

    @classmethod
    def from_traces(cls, traces: Sequence[FixedTrace], labels: Sequence[int],
                    num_classes: int) -> "TraceCorpus":
        if len(traces) != len(labels):
            raise InvalidTrace("traces and labels differ in length")
        if not traces:
            raise EmptyInput("corpus has no traces")
        return cls(np.stack([t.values for t in traces]), labels, num_classes,
                   [t.original_burst_count for t in traces])

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> FixedTrace:
        return FixedTrace(self.values[i], self.counts[i])

    @property
    def traces(self) -> list[FixedTrace]:
        return [self[i] for i in range(len(self))]

    def subset(self, index) -> "TraceCorpus":
        index = np.asarray(index, dtype=np.int64)
        return TraceCorpus(self.values[index], self.labels[index],
                           self.num_classes, self.counts[index])

    def of_class(self, k: int) -> "TraceCorpus":
        return self.subset(np.flatnonzero(self.labels == k))

    def with_values(self, values: np.ndarray) -> "TraceCorpus":
        return TraceCorpus(values, self.labels, self.num_classes, self.counts)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def concat_corpora(corpora: Sequence[TraceCorpus]) -> TraceCorpus:
    if not corpora:
        raise EmptyInput("nothing to concatenate")
    return TraceCorpus(np.concatenate([c.values for c in corpora]),
                       np.concatenate([c.labels for c in corpora]),
                       corpora[0].num_classes,
                       np.concatenate([c.counts for c in corpora]))


SPLIT_NAMES = ("awa_train", "adversary_train", "adversary_val", "target_user")


@dataclass(frozen=True)
class SplitSpec:
    """Traces per class drawn for each of the four partitions."""

    awa_train: int
    adversary_train: int
    adversary_val: int
    target_user: int

    def __post_init__(self):
        if min(self.as_tuple()) < 0:
            raise SplitError("split counts must be nonnegative")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.awa_train, self.adversary_train, self.adversary_val, self.target_user)

    @property
    def total(self) -> int:
        return sum(self.as_tuple())


def split_corpus(corpus: TraceCorpus, spec: SplitSpec,
                 order_seed: int) -> dict[str, TraceCorpus]:
    """Partition every class into four disjoint subsets.

    Each class is shuffled with its own stream derived from ``order_seed``,
    so the result does not depend on how many classes precede it.
    """
    available = corpus.class_counts()
    for k, n in enumerate(available):
        if n < spec.total:
            raise SplitError(f"class {k}: split needs {spec.total} traces, only {n} available")
    picks: dict[str, list[np.ndarray]] = {name: [] for name in SPLIT_NAMES}
    for k in range(corpus.num_classes):
        members = np.flatnonzero(corpus.labels == k)
        rng = np.random.default_rng([order_seed, k])
        members = members[rng.permutation(members.size)]
        start = 0
        for name, n in zip(SPLIT_NAMES, spec.as_tuple()):
            picks[name].append(members[start:start + n])
            start += n
    return {name: corpus.subset(np.concatenate(parts)) for name, parts in picks.items()}
