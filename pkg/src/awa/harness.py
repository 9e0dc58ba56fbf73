"""Adversary / target-user evaluation game.

The adversary picks transformer sets, generates labeled adversarial traces
of every website and trains a classifier on them; the target user browses
through a (secretly) chosen set. Only ``TargetUser.score`` ever sees the
user's labels.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import objectives as obj
from .errors import CompareError, CoverageError, InsufficientSets
from .metrics import classifier_accuracy, intra_cd, mean_bwo, predictions
from .network import NetworkModel, OptimizerState, build_discriminator, grad_step
from .trace import TraceCorpus, concat_corpora
from .training import derive_seed
from .transformer import TransformerSet

log = logging.getLogger(__name__)

ClassifierFactory = Callable[[int, int, int], NetworkModel]

CLASSIFIERS: dict[str, ClassifierFactory] = {
    "discriminator": lambda length, k, seed: build_discriminator(length, k, seed),
}


def register_classifier(name: str, factory: ClassifierFactory) -> None:
    """Make another adversary architecture available by name."""
    CLASSIFIERS[name] = factory


@dataclass(frozen=True)
class ScenarioConfig:
    classifier: str = "discriminator"
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.classifier not in CLASSIFIERS:
            raise KeyError(f"unknown adversary classifier {self.classifier!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class TargetUser:
    """Holds the user's clean traces; labels never leave this object."""

    def __init__(self, corpus: TraceCorpus):
        self._corpus = corpus

    @property
    def num_classes(self) -> int:
        return self._corpus.num_classes

    def __len__(self) -> int:
        return len(self._corpus)

    def observe(self, tset: TransformerSet) -> np.ndarray:
        """Unlabeled adversarial traces the user emits through ``tset``."""
        return tset.transform(self._corpus, "test")

    def score(self, predicted: np.ndarray) -> float:
        predicted = np.asarray(predicted)
        if predicted.shape != self._corpus.labels.shape:
            raise ValueError("one prediction per observed trace is required")
        return float(np.mean(predicted == self._corpus.labels) * 100.0)

    def bwo(self, tset: TransformerSet) -> float:
        return mean_bwo(tset, self._corpus)


def generate_adversarial_corpus(tset: TransformerSet, corpus: TraceCorpus) -> TraceCorpus:
    missing = sorted(set(np.unique(corpus.labels).tolist()) - set(tset.transformers))
    if missing:
        raise CoverageError(f"transformer set lacks websites {missing}")
    return corpus.with_values(tset.transform(corpus, "test"))


def train_adversary(train: TraceCorpus, val: TraceCorpus, config: ScenarioConfig,
                    seed: int) -> tuple[NetworkModel, list[float]]:
    """Train the adversary's classifier, keeping the epoch with the best
    validation accuracy. Returns the model and the validation curve."""
    model = CLASSIFIERS[config.classifier](train.length, train.num_classes,
                                           derive_seed(seed, "init"))
    opt = OptimizerState(config.learning_rate)
    rng = np.random.default_rng(derive_seed(seed, "order"))
    x = torch.as_tensor(np.array(train.values), dtype=model.dtype)
    y = torch.as_tensor(np.array(train.labels))

    def loss_fn(m, idx):
        return obj.loss_auxiliary(m(x[idx]), y[idx])

    best, best_acc, curve = None, -1.0, []
    for _ in range(config.epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), config.batch_size):
            grad_step(model, opt, loss_fn, order[start:start + config.batch_size])
        model.eval()
        acc = classifier_accuracy(model, val)
        curve.append(acc)
        if acc > best_acc:
            best_acc, best = acc, {k: v.clone() for k, v in model.state_dict().items()}
    model.load_state_dict(best)
    model.eval()
    return model, curve


@dataclass
class ExperimentReport:
    """Rows index the user's set, columns the adversary's set."""

    accuracy: np.ndarray
    user_bwo: list[float]
    adversary_bwo: list[float]
    scenario2: list[float] = field(default_factory=list)
    mode: str = ""
    intra_cd: dict | None = None
    validation: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.accuracy.shape[0]

    def same_set_accuracy(self) -> float:
        return float(np.mean(np.diag(self.accuracy)))

    def cross_set_accuracy(self) -> float:
        off = ~np.eye(self.size, dtype=bool)
        return float(np.mean(self.accuracy[off]))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy_matrix": self.accuracy.tolist(),
            "matrix_axes": {"rows": "user transformer set", "columns": "adversary transformer set"},
            "user_bwo": self.user_bwo,
            "adversary_bwo": self.adversary_bwo,
            "adversary_validation_accuracy": self.validation,
            "same_set_accuracy": self.same_set_accuracy(),
            "cross_set_accuracy": self.cross_set_accuracy(),
            "scenario2_accuracy": self.scenario2,
            "intra_cd": self.intra_cd,
            "metadata": self.metadata,
        }


def _require_sets(sets: Sequence[TransformerSet]) -> None:
    if len(sets) < 2:
        raise InsufficientSets(f"need at least 2 transformer sets, got {len(sets)}")


def run_scenario1(sets: Sequence[TransformerSet], adversary_train: TraceCorpus,
                  adversary_val: TraceCorpus, user: TargetUser | TraceCorpus,
                  config: ScenarioConfig) -> ExperimentReport:
    """Adversary trains on set i, user browses through set j, for all (i, j)."""
    _require_sets(sets)
    if not isinstance(user, TargetUser):
        user = TargetUser(user)
    s = len(sets)
    observed = [user.observe(tset) for tset in sets]
    acc = np.zeros((s, s))
    adv_bwo, val_acc = [], []
    for i, tset in enumerate(sets):
        model, curve = train_adversary(generate_adversarial_corpus(tset, adversary_train),
                                       generate_adversarial_corpus(tset, adversary_val),
                                       config, derive_seed(config.seed, "scenario1", i))
        val_acc.append(max(curve))
        adv_bwo.append(mean_bwo(tset, adversary_train))
        for j in range(s):
            acc[j, i] = user.score(predictions(model, observed[j]))
        log.info("scenario 1: adversary set %d done", i)
    return ExperimentReport(acc, [user.bwo(t) for t in sets], adv_bwo, mode=sets[0].mode,
                            validation=val_acc)


def run_scenario2(sets: Sequence[TransformerSet], adversary_train: TraceCorpus,
                  adversary_val: TraceCorpus, user: TargetUser | TraceCorpus,
                  config: ScenarioConfig, user_sets: Sequence[int] | None = None) -> list[float]:
    """For each user set j, train on the union of every other set's traces."""
    _require_sets(sets)
    if not isinstance(user, TargetUser):
        user = TargetUser(user)
    out = []
    for j in (range(len(sets)) if user_sets is None else user_sets):
        others = [t for i, t in enumerate(sets) if i != j]
        train = concat_corpora([generate_adversarial_corpus(t, adversary_train) for t in others])
        val = concat_corpora([generate_adversarial_corpus(t, adversary_val) for t in others])
        model, _ = train_adversary(train, val, config, derive_seed(config.seed, "scenario2", j))
        out.append(user.score(predictions(model, user.observe(sets[j]))))
        log.info("scenario 2: user set %d done", j)
    return out


def run_experiment(sets: Sequence[TransformerSet], adversary_train: TraceCorpus,
                   adversary_val: TraceCorpus, user_corpus: TraceCorpus,
                   config: ScenarioConfig, with_intra_cd: bool = True) -> ExperimentReport:
    user = TargetUser(user_corpus)
    report = run_scenario1(sets, adversary_train, adversary_val, user, config)
    report.scenario2 = run_scenario2(sets, adversary_train, adversary_val, user, config)
    if with_intra_cd:
        report.intra_cd = intra_cd(sets, user_corpus).to_dict()
    return report


# Reference results at full scale (94 websites, five sets, scenario 1 cross-set).
FULL_SCALE_REFERENCE = {
    "universal": {"cross_set_accuracy": 19.52, "bwo": 22.28},
    "non_universal": {"cross_set_accuracy": 31.94, "bwo": 26.28},
}


def compare_modes(universal: ExperimentReport, non_universal: ExperimentReport) -> dict:
    """Side-by-side accuracy and overhead of the two perturbation modes."""
    if universal.size != non_universal.size:
        raise CompareError("reports come from experiments with different set counts")
    if universal.metadata.get("config") != non_universal.metadata.get("config"):
        raise CompareError("reports come from different configurations")
    rows = []
    for label, rep in (("universal", universal), ("non_universal", non_universal)):
        rows.append({
            "experiment": label,
            "same_set_accuracy": rep.same_set_accuracy(),
            "cross_set_accuracy": rep.cross_set_accuracy(),
            "scenario2_accuracy": float(np.mean(rep.scenario2)) if rep.scenario2 else None,
            "bwo": float(np.mean(rep.user_bwo)),
        })
    deltas = {key: (rows[1][key] - rows[0][key]
                    if rows[0][key] is not None and rows[1][key] is not None else None)
              for key in ("same_set_accuracy", "cross_set_accuracy", "scenario2_accuracy", "bwo")}
    return {"rows": rows, "delta_non_universal_minus_universal": deltas,
            "reference_full_scale": FULL_SCALE_REFERENCE}
