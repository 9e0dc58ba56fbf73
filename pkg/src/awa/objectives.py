"""Training objectives for the auxiliary classifier, pair discriminator and
generators.

All functions take torch tensors (or anything ``torch.as_tensor`` accepts)
and return 0-d tensors, so they can be differentiated by the trainer.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DegenerateTrace, DomainError

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1e3
    beta: float = 1e3
    gamma: float = 1e2
    tau_low: float = 0.05
    tau_high: float = 0.30

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not (value >= 0 and value != float("inf")):
                raise ValueError(f"{name} must be finite and nonnegative")
        if not 0 <= self.tau_low < self.tau_high:
            raise ValueError("need 0 <= tau_low < tau_high")


def _tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def _check_probabilities(p: torch.Tensor, name: str) -> None:
    # saturated sigmoids legitimately hit 0.0 or 1.0 in float32; those are clamped
    if torch.any(p < 0) or torch.any(p > 1) or torch.any(torch.isnan(p)):
        raise DomainError(f"{name} must lie in (0, 1)")


def _log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(PROB_FLOOR, 1.0))


def loss_auxiliary(probabilities, labels) -> torch.Tensor:
    """Mean cross-entropy of softmax outputs against integer labels."""
    p = _tensor(probabilities)
    y = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    true = p.gather(1, y.unsqueeze(1)).squeeze(1)
    return -_log(true).mean()


def loss_discriminator(d_on_a, d_on_b) -> torch.Tensor:
    """Binary cross-entropy with the first website of the pair labelled 1."""
    a, b = _tensor(d_on_a).reshape(-1), _tensor(d_on_b).reshape(-1)
    _check_probabilities(a, "d_on_A")
    _check_probabilities(b, "d_on_B")
    return -_log(a).mean() - _log(1 - b).mean()


def loss_gen_ac(logits, labels) -> torch.Tensor:
    """Mean hinge ``max(logit[true], 0)`` on auxiliary-classifier logits."""
    z = _tensor(logits)
    y = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if y.numel() == 1 and z.shape[0] > 1:
        y = y.expand(z.shape[0])
    return torch.clamp(z.gather(1, y.unsqueeze(1)).squeeze(1), min=0).mean()


def overhead_ratio(original, transformed) -> torch.Tensor:
    o, t = _tensor(original), _tensor(transformed)
    o, t = torch.atleast_2d(o), torch.atleast_2d(t)
    base = o.abs().sum(dim=1)
    if torch.any(base == 0):
        raise DegenerateTrace("original trace has zero magnitude")
    return (t.abs() - o.abs()).abs().sum(dim=1) / base


def loss_gen_oh(original, transformed, tau_low: float, tau_high: float) -> torch.Tensor:
    """Band penalty on per-trace overhead: zero inside [tau_low, tau_high]."""
    r = overhead_ratio(original, transformed)
    return (torch.clamp(r - tau_high, min=0) - torch.clamp(r - tau_low, max=0)).mean()


def loss_gen_dc(d_on_transformed) -> torch.Tensor:
    """Domain confusion: minimized when the discriminator outputs 0.5."""
    d = _tensor(d_on_transformed).reshape(-1)
    _check_probabilities(d, "discriminator output")
    return -(0.5 * _log(d) + 0.5 * _log(1 - d)).mean()


def loss_generator_total(parts, weights: LossWeights):
    ac, oh, dc = parts
    return weights.alpha * ac + weights.beta * oh + weights.gamma * dc
