"""Adversarial training of paired website transformers."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import objectives as obj
from .errors import NumericalError, PairError, TrainError
from .network import NetworkModel, OptimizerState, build_discriminator, build_generator, grad_step
from .trace import TraceCorpus
from .transformer import (UNIVERSAL, TransformerSet, TransformerSpec, apply_matrix,
                          normalize_mode, transform_tensor)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeedBundle:
    """The four secret random elements of one training run."""

    param_init_seed: int
    data_order_seed: int
    pair_list_seed: int
    noise_seed: int

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "SeedBundle":
        return cls(**{k: int(data[k]) for k in ("param_init_seed", "data_order_seed",
                                                  "pair_list_seed", "noise_seed")})


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256("/".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    d_iters: int = 2
    g_iters: int = 2
    batch_size: int = 100
    oh: float = 0.50
    weights: obj.LossWeights = field(default_factory=obj.LossWeights)
    gan_lr: float = 1e-4
    ac_lr: float = 2e-4
    ac_epochs: int = 30
    ac_batch: int = 128
    length: int = 2000

    def __post_init__(self):
        for name in ("iterations", "d_iters", "g_iters", "batch_size", "ac_epochs", "ac_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.oh <= self.weights.tau_high:
            raise ValueError("overhead gate must exceed tau_high")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "weights" in data:
            data["weights"] = obj.LossWeights(**data["weights"])
        return cls(**data)


def pretrain_auxiliary(corpus: TraceCorpus, config: TrainConfig, seeds: SeedBundle) -> NetworkModel:
    """Train the K-way auxiliary classifier with cross-entropy; returns it frozen."""
    if len(corpus) == 0:
        raise TrainError("empty corpus")
    if np.unique(corpus.labels).size < 2 or corpus.num_classes < 2:
        raise TrainError("auxiliary classifier needs at least two classes")
    model = build_discriminator(corpus.length, corpus.num_classes,
                                derive_seed(seeds.param_init_seed, "ac"))
    opt = OptimizerState(config.ac_lr)
    rng = np.random.default_rng(derive_seed(seeds.data_order_seed, "ac"))
    x_all = torch.as_tensor(np.array(corpus.values), dtype=model.dtype)
    y_all = torch.as_tensor(np.array(corpus.labels))

    def loss_fn(m, idx):
        return obj.loss_auxiliary(m(x_all[idx]), y_all[idx])

    for epoch in range(config.ac_epochs):
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), config.ac_batch):
            grad_step(model, opt, loss_fn, order[start:start + config.ac_batch])
    return freeze(model)


def freeze(model: NetworkModel) -> NetworkModel:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def select_pairs(k: int, seed: int) -> list[tuple[int, int]]:
    """Uniformly random perfect matching of ``range(k)``, sorted for stability."""
    if k < 2 or k % 2:
        raise PairError(f"need an even number of websites, got {k}")
    perm = np.random.default_rng(derive_seed(seed, "pairs")).permutation(k)
    pairs = [tuple(sorted((int(perm[i]), int(perm[i + 1])))) for i in range(0, k, 2)]
    return sorted(pairs)


def select_iteration(overheads: Sequence[tuple[float, float]], oh: float) -> int:
    """Index of the last iteration whose two overheads are both within ``oh``,
    or the final iteration when none qualifies."""
    chosen = None
    for t, (a, b) in enumerate(overheads):
        if a <= oh and b <= oh:
            chosen = t
    return len(overheads) - 1 if chosen is None else chosen


def set_overhead(original: np.ndarray, transformed: np.ndarray) -> float:
    """Overhead fraction of a whole trace set: total added / total original."""
    base = np.abs(original).sum()
    return float(np.abs(np.abs(transformed) - np.abs(original)).sum() / base)


@dataclass
class PairResult:
    first: TransformerSpec
    second: TransformerSpec
    selected_iteration: int
    history: list[dict]


class _PairTrainer:
    def __init__(self, ts_a: TraceCorpus, ts_b: TraceCorpus, ac: NetworkModel,
                 config: TrainConfig, mode: str, seeds: SeedBundle, pair: tuple[int, int]):
        if len(ts_a) == 0 or len(ts_b) == 0:
            raise TrainError(f"pair {pair}: empty trace slice")
        self.config, self.mode, self.pair = config, normalize_mode(mode), pair
        self.ac = ac
        tag = ("pair", pair[0], pair[1])
        L = ts_a.length
        self.g = [build_generator(L, derive_seed(seeds.param_init_seed, *tag, side))
                  for side in ("A", "B")]
        self.d = build_discriminator(L, 1, derive_seed(seeds.param_init_seed, *tag, "D"))
        self.g_opt = [OptimizerState(config.gan_lr) for _ in range(2)]
        self.d_opt = OptimizerState(config.gan_lr)
        self.order_rng = np.random.default_rng(derive_seed(seeds.data_order_seed, *tag))
        self.noise_rng = np.random.default_rng(derive_seed(seeds.noise_seed, *tag, "train"))
        self.noise_seeds = [derive_seed(seeds.noise_seed, "website", w) for w in pair]
        self.data = [torch.as_tensor(np.array(ts.values), dtype=self.d.dtype) for ts in (ts_a, ts_b)]
        self.values = [ts_a.values, ts_b.values]
        self.labels = list(pair)

    def _batch(self, side: int) -> torch.Tensor:
        n = self.data[side].shape[0]
        bs = self.config.batch_size
        idx = self.order_rng.choice(n, size=bs, replace=n < bs)
        return self.data[side][idx]

    def _gen_input(self, side: int, x: torch.Tensor) -> torch.Tensor:
        if self.mode == UNIVERSAL:
            z = self.noise_rng.standard_normal(tuple(x.shape))
            return torch.as_tensor(z, dtype=x.dtype)
        return x

    def _transformed(self, side: int, x: torch.Tensor) -> torch.Tensor:
        return transform_tensor(self.g[side](self._gen_input(side, x)), x)

    def d_step(self) -> float:
        xa, xb = self._batch(0), self._batch(1)
        with torch.no_grad():
            for g in self.g:
                g.eval()
            ta, tb = self._transformed(0, xa), self._transformed(1, xb)

        def loss_fn(d, _):
            return obj.loss_discriminator(d(ta), d(tb))

        return grad_step(self.d, self.d_opt, loss_fn, None)

    def g_step(self, side: int) -> dict:
        x = self._batch(side)
        w = self.config.weights
        parts = {}

        def loss_fn(g, _):
            t = transform_tensor(g(self._gen_input(side, x)), x)
            _, logits = self.ac.forward_with_logits(t)
            parts["ac"] = obj.loss_gen_ac(logits, self.labels[side])
            parts["oh"] = obj.loss_gen_oh(x, t, w.tau_low, w.tau_high)
            parts["dc"] = obj.loss_gen_dc(self.d(t))
            return obj.loss_generator_total((parts["ac"], parts["oh"], parts["dc"]), w)

        total = grad_step(self.g[side], self.g_opt[side], loss_fn, None)
        out = {k: float(v.item()) for k, v in parts.items()}
        out["total"] = total
        return out

    def spec(self, side: int) -> TransformerSpec:
        g = self.g[side]
        g.eval()
        return TransformerSpec(self.pair[side], self.mode, g, self.noise_seeds[side])

    def overheads(self) -> tuple[float, float]:
        out = []
        for side in (0, 1):
            values = self.values[side]
            out.append(set_overhead(values, apply_matrix(self.spec(side), values, "test")))
        return out[0], out[1]


def train_pair(ts_a: TraceCorpus, ts_b: TraceCorpus, ac: NetworkModel, config: TrainConfig,
               mode: str, seeds: SeedBundle, pair: tuple[int, int] | None = None,
               overhead_fn: Callable[[int, _PairTrainer], tuple[float, float]] | None = None,
               on_iteration: Callable[[int, TransformerSpec, TransformerSpec], None] | None = None,
               progress: Callable[[dict], None] | None = None) -> PairResult:
    """Run the alternating discriminator/generator schedule for one pair.

    ``overhead_fn(t, trainer)`` replaces the measured per-iteration set
    overheads, which lets the selection gate be exercised with a script.
    """
    if pair is None:
        pair = (int(ts_a.labels[0]), int(ts_b.labels[0]))
    trainer = _PairTrainer(ts_a, ts_b, ac, config, mode, seeds, pair)
    history: list[dict] = []
    selected = None
    overheads = []
    for t in range(config.iterations):
        try:
            record = {"iteration": t}
            for side in (0, 1):
                for _ in range(config.d_iters):
                    record["d_loss"] = trainer.d_step()
                for _ in range(config.g_iters):
                    record["g_" + "ab"[side]] = trainer.g_step(side)
        except NumericalError as exc:
            raise NumericalError(f"pair {pair}, iteration {t}: {exc}") from exc
        bwo = overhead_fn(t, trainer) if overhead_fn else trainer.overheads()
        overheads.append(bwo)
        record["bwo_a"], record["bwo_b"] = bwo
        if bwo[0] <= config.oh and bwo[1] <= config.oh:
            selected = (t, [copy.deepcopy(g.state_dict()) for g in trainer.g])
        record["gate_passed"] = bool(bwo[0] <= config.oh and bwo[1] <= config.oh)
        history.append(record)
        if on_iteration:
            on_iteration(t, trainer.spec(0), trainer.spec(1))
        if progress:
            progress({"pair": list(pair), **record})
    chosen = select_iteration(overheads, config.oh)
    if selected is not None:
        assert selected[0] == chosen
        for g, state in zip(trainer.g, selected[1]):
            g.load_state_dict(state)
    first, second = trainer.spec(0), trainer.spec(1)
    for spec in (first, second):
        freeze(spec.generator)
    return PairResult(first, second, chosen, history)


def train_transformer_set(corpus: TraceCorpus, config: TrainConfig, mode: str,
                          seeds: SeedBundle, jobs: int = 1,
                          progress: Callable[[dict], None] | None = None,
                          ac: NetworkModel | None = None) -> TransformerSet:
    mode = normalize_mode(mode)
    k = corpus.num_classes
    missing = [c for c in range(k) if not np.any(corpus.labels == c)]
    if missing:
        raise TrainError(f"corpus has no traces for classes {missing}")
    pairs = select_pairs(k, seeds.pair_list_seed)
    if ac is None:
        ac = pretrain_auxiliary(corpus, config, seeds)

    def run(pair):
        return train_pair(corpus.of_class(pair[0]), corpus.of_class(pair[1]), ac, config,
                          mode, seeds, pair, progress=progress)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(pair) for pair in pairs]

    transformers = {}
    pair_log = []
    for pair, result in zip(pairs, results):
        for spec in (result.first, result.second):
            if mode == UNIVERSAL:
                spec.precompute()
            transformers[spec.website_id] = spec
        last = result.history[-1]
        chosen = result.history[result.selected_iteration]
        pair_log.append({
            "pair": list(pair),
            "discriminator_label_1": pair[0],
            "selected_iteration": result.selected_iteration,
            "gate_satisfied": bool(chosen["gate_passed"]),
            "selected_bwo": [chosen["bwo_a"], chosen["bwo_b"]],
            "final_bwo": [last["bwo_a"], last["bwo_b"]],
            "history": result.history,
        })
    metadata = {"config": config.to_dict(), "pairs": pair_log}
    return TransformerSet({w: transformers[w] for w in sorted(transformers)}, pairs, mode,
                          seeds.fingerprint(), metadata)
