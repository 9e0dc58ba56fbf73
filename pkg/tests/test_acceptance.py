"""Exit criteria. Each test records PASS/FAIL lines, summarized at the end of the run.

The toy experiment (K=4 websites, L=64, 50 training traces per class) is
trained once per module: three harness seeds, three transformer sets per
seed, in two overhead bands.
"""
import json
import math
import time

import numpy as np
import pytest
import torch

from awa.cli import main
from awa.harness import ScenarioConfig, run_scenario1, run_scenario2
from awa.metrics import intra_cd, mmd, per_class_bwo
from awa.network import build_discriminator, build_generator
from awa.objectives import (LossWeights, loss_auxiliary, loss_discriminator, loss_gen_ac,
                            loss_gen_dc, loss_gen_oh, loss_generator_total)
from awa.storage import write_corpus
from awa.synthetic import synthetic_corpus, toy_train_config
from awa.trace import SplitSpec, bs_to_ds, ds_to_bs, split_corpus
from awa.training import SeedBundle, train_transformer_set
from awa.transformer import UNIVERSAL, check_constraints, transform_tensor

pytestmark = pytest.mark.slow

LOW_BAND = (0.05, 0.30, 0.50)
HIGH_BAND = (0.50, 0.75, 1.00)
HARNESS_SEEDS = (0, 1, 2)
SETS_PER_SEED = 3


def seed_bundle(h, i):
    base = 1000 * h + 10 * i
    return SeedBundle(base + 1, base + 2, base + 3, base + 4)


@pytest.fixture(scope="module")
def toy_corpus():
    return synthetic_corpus(num_classes=4, per_class=100, length=64, seed=0)


@pytest.fixture(scope="module")
def toy_experiment(toy_corpus):
    runs = {}
    for h in HARNESS_SEEDS:
        parts = split_corpus(toy_corpus, SplitSpec(50, 25, 10, 15), order_seed=h)
        run = {"parts": parts}
        for band in (LOW_BAND, HIGH_BAND):
            config = toy_train_config(*band)
            sets, times = [], []
            for i in range(SETS_PER_SEED):
                start = time.perf_counter()
                sets.append(train_transformer_set(parts["awa_train"], config, UNIVERSAL,
                                                  seed_bundle(h, i)))
                times.append(time.perf_counter() - start)
            run[band] = {"sets": sets, "train_seconds": times}
        start = time.perf_counter()
        scenario = ScenarioConfig(epochs=15, seed=h)
        args = (run[LOW_BAND]["sets"], parts["adversary_train"], parts["adversary_val"],
                parts["target_user"], scenario)
        run["scenario1"] = run_scenario1(*args)
        run["scenario2"] = run_scenario2(*args)
        run["harness_seconds"] = time.perf_counter() - start
        runs[h] = run
    return runs


# -- 1 -------------------------------------------------------------------------

def test_criterion_1_codec_round_trip(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    failures = 0
    for _ in range(10_000):
        dirs = rng.choice([-1, 1], size=rng.integers(1, 501)).tolist()
        failures += bs_to_ds(ds_to_bs(dirs)).dirs != tuple(dirs)
    elapsed = time.perf_counter() - start
    example = ds_to_bs([1, -1, -1, -1, 1, 1, -1, -1]).bursts
    ok = verdict(1, "10k round trips", failures == 0, f"{failures} failures")
    ok &= verdict(1, "worked example", example == (1, -3, 2, -2), str(example))
    ok &= verdict(1, "runtime < 5 s", elapsed < 5.0, f"{elapsed:.2f}s")
    assert ok


# -- 2 -------------------------------------------------------------------------

def test_criterion_2_constraints(toy_experiment, toy_corpus, verdict):
    tset = toy_experiment[0][LOW_BAND]["sets"][0]
    seconds = toy_experiment[0][LOW_BAND]["train_seconds"][0]
    adversarial = tset.transform(toy_corpus, "test")
    bad = sum(not check_constraints(o, t, "test").ok
              for o, t in zip(toy_corpus.values, adversarial))
    ok = verdict(2, "all traces pass constraints 1-3", bad == 0,
                 f"{bad}/{len(toy_corpus)} violating")
    ok &= verdict(2, "training < 10 min", seconds < 600, f"{seconds:.0f}s")
    assert ok


# -- 3 -------------------------------------------------------------------------

def last_passing(history, oh):
    passing = [t for t, r in enumerate(history) if r["bwo_a"] <= oh and r["bwo_b"] <= oh]
    return passing[-1] if passing else len(history) - 1


def test_criterion_3_overhead_band(toy_experiment, verdict):
    tset = toy_experiment[0][LOW_BAND]["sets"][0]
    parts = toy_experiment[0]["parts"]
    bwo = float(np.mean(per_class_bwo(tset, parts["awa_train"])))
    ok = verdict(3, "mean per-class BWO in [0, 40]%", 0.0 <= bwo <= 40.0, f"{bwo:.2f}%")

    gate_ok = True
    corpus = parts["awa_train"]
    oh = LOW_BAND[2]
    for entry in tset.metadata["pairs"]:
        history = entry["history"]
        chosen = last_passing(history, oh)
        gate_ok &= entry["selected_iteration"] == chosen
        gate_ok &= entry["gate_satisfied"] == (history[chosen]["bwo_a"] <= oh
                                               and history[chosen]["bwo_b"] <= oh)
        # the restored generators must reproduce the overhead logged at the chosen iteration
        for side, website in enumerate(entry["pair"]):
            rows = corpus.labels == website
            o = corpus.values[rows]
            t = tset.transform(corpus, "test")[rows]
            measured = np.abs(np.abs(t) - np.abs(o)).sum() / np.abs(o).sum()
            gate_ok &= math.isclose(measured, entry["selected_bwo"][side], rel_tol=1e-9)
    ok &= verdict(3, "gate log consistent", gate_ok)

    rng = np.random.default_rng(3)
    inside = outside = 0
    for _ in range(1000):
        m = rng.integers(2, 40)
        orig = rng.integers(1, 30, size=m) * (-1.0) ** np.arange(m)
        ratio_in = rng.uniform(0.051, 0.299)
        ratio_out = rng.choice([rng.uniform(0.0, 0.049), rng.uniform(0.301, 3.0)])
        o = torch.tensor(orig[None, :])
        inside += float(loss_gen_oh(o, o * (1 + ratio_in), 0.05, 0.30)) == 0.0
        outside += float(loss_gen_oh(o, o * (1 + ratio_out), 0.05, 0.30)) > 0.0
    ok &= verdict(3, "band loss zero inside", inside == 1000, f"{inside}/1000")
    ok &= verdict(3, "band loss positive outside", outside == 1000, f"{outside}/1000")
    assert ok


# -- 4 -------------------------------------------------------------------------

def _fd_check(loss, params, rng, coords=40, h=1e-5):
    """Relative error between autograd and central differences on sampled coordinates."""
    for p in params:
        p.grad = None
    loss().backward()
    analytic, numeric = [], []
    flat = [(p, i) for p in params for i in range(p.numel())]
    for k in rng.choice(len(flat), size=min(coords, len(flat)), replace=False):
        p, i = flat[k]
        analytic.append(float(p.grad.view(-1)[i]))
        with torch.no_grad():
            orig = float(p.view(-1)[i])
            p.view(-1)[i] = orig + h
            up = float(loss())
            p.view(-1)[i] = orig - h
            down = float(loss())
            p.view(-1)[i] = orig
        numeric.append((up - down) / (2 * h))
    a, n = np.array(analytic), np.array(numeric)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12), np.linalg.norm(a)


def test_criterion_4_loss_closed_forms(verdict):
    ok = True
    for k in (2, 4, 95):
        ce = float(loss_auxiliary(np.full((3, k), 1.0 / k), [0, 1 % k, k - 1]))
        ok &= verdict(4, f"uniform CE = ln {k}", abs(ce - math.log(k)) < 1e-9, f"{ce:.12f}")
    d = float(loss_discriminator([0.5], [0.5]))
    ok &= verdict(4, "discriminator(0.5, 0.5) = 2 ln 2", abs(d - 2 * math.log(2)) < 1e-9, f"{d:.12f}")
    grid = np.linspace(0.001, 0.999, 999)
    dc = np.array([float(loss_gen_dc([p])) for p in grid])
    argmin = grid[int(np.argmin(dc))]
    ok &= verdict(4, "domain confusion minimized at 0.5",
                  abs(argmin - 0.5) < 1e-12 and abs(dc.min() - math.log(2)) < 1e-9,
                  f"argmin {argmin:.3f}, min {dc.min():.12f}")

    # gradients of every objective through toy float64 networks
    rng = np.random.default_rng(7)
    L, K = 8, 4
    gen = build_generator(L, seed=1, dtype=torch.float64)
    ac = build_discriminator(L, K, seed=2, dtype=torch.float64)
    disc = build_discriminator(L, 1, seed=3, dtype=torch.float64)
    x = torch.tensor(rng.integers(1, 9, size=(6, L)) * (-1.0) ** np.arange(L))
    noise = torch.tensor(rng.standard_normal((6, L)))
    labels = torch.tensor([0, 1, 2, 3, 0, 1])
    weights = LossWeights(alpha=10.0, tau_low=0.05, tau_high=0.30)
    gen.train()
    ac.eval()
    disc.eval()

    def generator_loss():
        t = transform_tensor(gen(noise), x)
        _, logits = ac.forward_with_logits(t)
        parts = (loss_gen_ac(logits, 1), loss_gen_oh(x, t, weights.tau_low, weights.tau_high),
                 loss_gen_dc(disc(t)))
        return loss_generator_total(parts, weights)

    def discriminator_loss():
        return loss_discriminator(disc(x[:3]), disc(x[3:] * 1.5))

    def classifier_loss():
        return loss_auxiliary(ac(x), labels)

    for name, fn, model in (("generator total", generator_loss, gen),
                            ("discriminator", discriminator_loss, disc),
                            ("auxiliary CE", classifier_loss, ac)):
        err, norm = _fd_check(fn, list(model.parameters()), rng)
        ok &= verdict(4, f"{name} gradient", err < 1e-4 and norm > 0,
                      f"rel err {err:.2e}, |grad| {norm:.2e}")
    assert ok


# -- 5 -------------------------------------------------------------------------

def brute_mmd(x, y, bw):
    def k(a, b):
        return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / (2 * bw * bw))
    n, m = len(x), len(y)
    total = sum(k(a, b) for a in x for b in x) / n ** 2
    total += sum(k(a, b) for a in y for b in y) / m ** 2
    total -= 2 * sum(k(a, b) for a in x for b in y) / (n * m)
    return math.sqrt(max(total, 0.0))


def test_criterion_5_mmd_oracle(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        d = rng.integers(1, 6)
        x = rng.standard_normal((rng.integers(1, 11), d)) * 3
        y = rng.standard_normal((rng.integers(1, 11), d)) * 3 + rng.standard_normal(d)
        bw = rng.uniform(0.2, 5.0)
        worst = max(worst, abs(mmd(x, y, bw) - brute_mmd(x.tolist(), y.tolist(), bw)))
    ok = verdict(5, "200 pairs vs brute force", worst <= 1e-9, f"max diff {worst:.1e}")
    x = rng.standard_normal((7, 3))
    ok &= verdict(5, "mmd(X, X) = 0", mmd(x, x) < 1e-7, f"{mmd(x, x):.1e}")
    assert ok


def test_criterion_5_hand_case(verdict):
    value = mmd([[0.0, 0.0]], [[1.0, 0.0]], 1.0)
    closed_form = math.sqrt(2 - 2 * math.exp(-0.5))
    verdict(5, "hand case equals sqrt(2 - 2e^-0.5)", abs(value - closed_form) < 1e-12,
            f"{value:.6f} vs {closed_form:.6f}")
    ok = verdict(5, "hand case ~0.8813 to 1e-4", abs(value - 0.8813) < 1e-4, f"{value:.6f}")
    assert ok, f"mmd hand case is {value:.6f}, stated target 0.8813"


# -- 6, 7, 8 -------------------------------------------------------------------

def test_criterion_6_secret_randomness(toy_experiment, verdict):
    gaps, seconds = [], 0.0
    for h in HARNESS_SEEDS:
        report = toy_experiment[h]["scenario1"]
        gaps.append(report.same_set_accuracy() - report.cross_set_accuracy())
        seconds += sum(toy_experiment[h][LOW_BAND]["train_seconds"]) + toy_experiment[h]["harness_seconds"]
    gap = float(np.mean(gaps))
    ok = verdict(6, "same-set minus cross-set >= 15 points", gap >= 15.0,
                 f"mean gap {gap:.1f} ({', '.join(f'{g:.1f}' for g in gaps)})")
    ok &= verdict(6, "runtime < 30 min", seconds < 1800, f"{seconds:.0f}s")
    assert ok


def test_criterion_7_scenario2(toy_experiment, verdict):
    passed = 0
    details = []
    for h in HARNESS_SEEDS:
        acc = toy_experiment[h]["scenario1"].accuracy
        s2 = toy_experiment[h]["scenario2"]
        cross = [np.mean([acc[j, i] for i in range(len(s2)) if i != j]) for j in range(len(s2))]
        seed_ok = all(a >= c for a, c in zip(s2, cross))
        passed += seed_ok
        details.append("/".join(f"{a:.0f}>={c:.0f}" for a, c in zip(s2, cross)))
    assert verdict(7, "union-trained >= mean cross-set in >= 2 of 3 seeds", passed >= 2,
                   f"{passed}/3 seeds ({'; '.join(details)})")


def test_criterion_8_intra_cd_trend(toy_experiment, verdict):
    wins, details = 0, []
    for h in HARNESS_SEEDS:
        user = toy_experiment[h]["parts"]["target_user"]
        low = intra_cd(toy_experiment[h][LOW_BAND]["sets"], user).avg_intra_cd
        high = intra_cd(toy_experiment[h][HIGH_BAND]["sets"], user).avg_intra_cd
        wins += high > low
        details.append(f"{low:.3f}->{high:.3f}")
    assert verdict(8, "larger band has larger Avg Intra-CD in >= 2 of 3 seeds", wins >= 2,
                   f"{wins}/3 ({', '.join(details)})")


# -- 9 -------------------------------------------------------------------------

def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path, verdict):
    corpus = synthetic_corpus(num_classes=4, per_class=30, length=32, seed=9)
    manifest = {
        "splits": "splits", "length": 32, "mode": "universal",
        "train": {"iterations": 5, "batch_size": 16, "ac_epochs": 5, "ac_batch": 32,
                  "gan_lr": 5e-3, "ac_lr": 1e-3, "oh": 0.5,
                  "weights": {"alpha": 10.0, "beta": 1000.0, "gamma": 100.0,
                              "tau_low": 0.05, "tau_high": 0.3}},
        "seeds": [{"param_init_seed": 11 + i, "data_order_seed": 21 + i,
                   "pair_list_seed": 31 + i, "noise_seed": 41 + i} for i in range(2)],
        "scenario": {"epochs": 3, "batch_size": 32, "seed": 0},
        "output": "out",
    }
    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        write_corpus(corpus, root / "corpus")
        assert main(["split", "--corpus", str(root / "corpus"), "--counts", "12,10,4,4",
                     "--seed", "0", "--length", "32", "--out", str(root / "splits")]) == 0
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
        assert main(["train", "--manifest", str(root / "manifest.json")]) == 0
        assert main(["evaluate", "--manifest", str(root / "manifest.json")]) == 0
        outputs.append(_tree(root / "out"))
    same = outputs[0] == outputs[1]
    differing = sorted(k for k in outputs[0] if outputs[0].get(k) != outputs[1].get(k))
    assert verdict(9, "archives and reports byte-identical", same,
                   f"{len(outputs[0])} files" + (f", differing {differing}" if differing else ""))
