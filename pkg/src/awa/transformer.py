"""Per-website transformers: a generator plus the rule that turns its
nonnegative output into dummy packets appended to existing bursts.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
import numpy as np
import torch

from .errors import CoverageError, InvalidTrace, ModeError
from .network import NetworkModel, predict
from .trace import FixedTrace, TraceCorpus

UNIVERSAL = "universal"
NON_UNIVERSAL = "non_universal"
MODES = (UNIVERSAL, NON_UNIVERSAL)


def normalize_mode(mode: str) -> str:
    mode = mode.replace("-", "_").lower()
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}")
    return mode


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def noise_vector(noise_seed: int, length: int) -> np.ndarray:
    """The standard-Gaussian input used for test-phase universal perturbations."""
    return np.random.default_rng([noise_seed, 0x7E57]).standard_normal(length)


@dataclass(eq=False)
class TransformerSpec:
    website_id: int
    mode: str
    generator: NetworkModel
    noise_seed: int = 0
    cached_perturbation: np.ndarray | None = None

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if self.cached_perturbation is not None:
            if self.mode != UNIVERSAL:
                raise ModeError("only universal transformers carry a cached perturbation")
            cache = np.asarray(self.cached_perturbation)
            if np.any(cache < 0) or np.any(cache != np.round(cache)):
                raise ValueError("cached perturbation must be nonnegative integers")
            self.cached_perturbation = cache.astype(np.int64)

    @property
    def length(self) -> int:
        return self.generator.input_length

    def precompute(self) -> np.ndarray:
        """Freeze the rounded universal perturbation into the cache."""
        if self.mode != UNIVERSAL:
            raise ModeError("non-universal perturbations depend on the trace")
        noise = noise_vector(self.noise_seed, self.length)
        raw = predict(self.generator, noise[None, :])[0]
        self.cached_perturbation = round_half_away(raw).astype(np.int64)
        return self.cached_perturbation


def perturbation_vector(t: TransformerSpec, trace: FixedTrace | np.ndarray | None = None,
                        noise: np.ndarray | None = None) -> np.ndarray:
    if t.mode == NON_UNIVERSAL:
        if trace is None:
            raise ModeError("non-universal transformer needs the input trace")
        values = trace.values if isinstance(trace, FixedTrace) else np.asarray(trace)
        return predict(t.generator, values[None, :].astype(np.float64))[0]
    if noise is not None:
        return predict(t.generator, np.asarray(noise, dtype=np.float64)[None, :])[0]
    if t.cached_perturbation is not None:
        return t.cached_perturbation.astype(np.float64)
    if t.noise_seed is None:
        raise ModeError("universal transformer needs noise or a cached perturbation")
    return predict(t.generator, noise_vector(t.noise_seed, t.length)[None, :])[0]


def perturbation_matrix(t: TransformerSpec, values: np.ndarray) -> np.ndarray:
    """One perturbation row per trace row of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    if t.mode == NON_UNIVERSAL:
        return predict(t.generator, values)
    return np.broadcast_to(perturbation_vector(t), values.shape)


def align(perturbation: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Shift perturbation rows one slot right where the trace opens with an
    incoming burst, so the first element always lands on an outgoing burst.
    The last element falls off the end.
    """
    p = np.array(np.broadcast_to(perturbation, values.shape), dtype=np.float64)
    starts_negative = values[..., 0] < 0
    shifted = np.zeros_like(p)
    shifted[..., 1:] = p[..., :-1]
    return np.where(starts_negative[..., None], shifted, p)


def apply_perturbation(values: np.ndarray, perturbation: np.ndarray,
                       phase: str = "test") -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.any(np.asarray(perturbation) < 0):
        raise ValueError("perturbation must be nonnegative")
    out = align(perturbation, values) * np.sign(values) + values
    if phase == "test":
        out = round_half_away(out)
    elif phase != "train":
        raise ValueError(f"unknown phase {phase!r}")
    return out


def apply(t: TransformerSpec, trace: FixedTrace, phase: str = "test") -> FixedTrace:
    if not isinstance(trace, FixedTrace):
        raise InvalidTrace("apply expects a FixedTrace")
    if trace.values.size != t.length:
        raise InvalidTrace(f"trace length {trace.values.size} != transformer length {t.length}")
    p = perturbation_vector(t, trace)
    out = apply_perturbation(trace.values, p, phase)
    return FixedTrace(out, trace.original_burst_count)


def apply_matrix(t: TransformerSpec, values: np.ndarray, phase: str = "test") -> np.ndarray:
    return apply_perturbation(values, perturbation_matrix(t, values), phase)


def align_tensor(p: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    shifted = torch.nn.functional.pad(p[:, :-1], (1, 0))
    return torch.where(x[:, :1] < 0, shifted, p)


def transform_tensor(p: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Differentiable train-phase transform used inside the training loop."""
    return align_tensor(p, x) * torch.sign(x) + x


@dataclass
class Violation:
    constraint: int
    position: int
    detail: str


@dataclass
class ConstraintReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def constraints_violated(self) -> set[int]:
        return {v.constraint for v in self.violations}


def check_constraints(original, transformed, phase: str = "test") -> ConstraintReport:
    """Check that only dummy packets were added, at burst ends.

    1: no packet removed, 2: integer burst sizes (test phase only),
    3: burst count and direction pattern unchanged.
    """
    o = original.values if isinstance(original, FixedTrace) else np.asarray(original, float)
    t = transformed.values if isinstance(transformed, FixedTrace) else np.asarray(transformed, float)
    if o.shape != t.shape:
        raise InvalidTrace(f"length mismatch {o.shape} vs {t.shape}")
    report = ConstraintReport()
    for i in np.flatnonzero(np.abs(t) < np.abs(o)):
        report.violations.append(Violation(1, int(i), f"|{t[i]}| < |{o[i]}|"))
    if phase == "test":
        for i in np.flatnonzero(t != np.round(t)):
            report.violations.append(Violation(2, int(i), f"{t[i]} is not an integer"))
    for i in np.flatnonzero(np.sign(t) != np.sign(o)):
        report.violations.append(Violation(3, int(i), f"sign {np.sign(o[i])} became {np.sign(t[i])}"))
    return report


@dataclass
class TransformerSet:
    transformers: dict[int, TransformerSpec]
    pairs: list[tuple[int, int]]
    mode: str
    seed_fingerprint: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        seen = sorted(w for pair in self.pairs for w in pair)
        if seen != sorted(self.transformers):
            raise ValueError("pair list must be a perfect matching over the transformers")

    @property
    def num_classes(self) -> int:
        return len(self.transformers)

    def __getitem__(self, website: int) -> TransformerSpec:
        try:
            return self.transformers[website]
        except KeyError:
            raise CoverageError(f"no transformer for website {website}") from None

    def transform(self, corpus: TraceCorpus, phase: str = "test") -> np.ndarray:
        """Transform each corpus row with its class's transformer."""
        out = np.zeros_like(corpus.values)
        for k in np.unique(corpus.labels):
            rows = np.flatnonzero(corpus.labels == k)
            out[rows] = apply_matrix(self[int(k)], corpus.values[rows], phase)
        return out

    def perturbation_digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.transformers):
            t = self.transformers[k]
            h.update(t.generator.parameter_vector().astype("<f4").tobytes())
            if t.cached_perturbation is not None:
                h.update(t.cached_perturbation.astype("<i8").tobytes())
        return h.hexdigest()

