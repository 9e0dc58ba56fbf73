"""Command-line entry point: ``awa split|train|transform|evaluate|metrics``.

Experiment manifests are JSON::

    {
      "splits": "splits",            # directory written by `awa split`
      "length": 64,
      "mode": "universal",
      "train": {"iterations": 40, "batch_size": 32, ...},   # TrainConfig fields
      "seeds": [{"param_init_seed": 1, "data_order_seed": 2,
                 "pair_list_seed": 3, "noise_seed": 4}, ...],
      "scenario": {"epochs": 15, "seed": 0},                # ScenarioConfig fields
      "output": "out"
    }

Relative paths are resolved against the manifest's directory.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AWAError, ConfigError, DataError
from .harness import ScenarioConfig, run_experiment
from .metrics import intra_cd, per_class_bwo
from .storage import (dump_json, load_corpus, load_transformer_set, save_transformer_set,
                      write_corpus)
from .trace import SPLIT_NAMES, SplitSpec, split_corpus
from .training import SeedBundle, TrainConfig, train_transformer_set
from .transformer import normalize_mode

log = logging.getLogger("awa")

SPLIT_DIRS = dict(zip(SPLIT_NAMES, ("awa_train", "adv_train", "adv_val", "user")))


@dataclass
class ExperimentManifest:
    path: Path
    digest: str
    splits: Path
    mode: str
    train: TrainConfig
    seeds: list[SeedBundle]
    scenario: ScenarioConfig
    output: Path

    @property
    def length(self) -> int:
        return self.train.length

    def split(self, name: str) -> Path:
        return self.splits / SPLIT_DIRS[name]


def _read_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from None


def load_manifest(path: str | Path, seed_file: str | Path | None = None,
                  mode: str | None = None, out: str | Path | None = None) -> ExperimentManifest:
    path = Path(path)
    data, text = _read_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: manifest must be a JSON object")
    base = path.parent
    try:
        train = dict(data.get("train", {}))
        if "length" in data:
            train.setdefault("length", data["length"])
        config = TrainConfig.from_dict(train)
        seeds_data = data.get("seeds", [])
        if seed_file is not None:
            seeds_data, _ = _read_json(Path(seed_file))
        seeds = [SeedBundle.from_dict(s) for s in seeds_data]
        scenario = ScenarioConfig(**data.get("scenario", {}))
        chosen_mode = normalize_mode(mode or data.get("mode", "universal"))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: invalid manifest: {exc}") from None
    if not seeds:
        raise ConfigError(f"{path}: at least one seed bundle is required")
    if "splits" not in data:
        raise ConfigError(f"{path}: 'splits' directory is required")
    splits = (base / data["splits"]).resolve()
    if not splits.is_dir():
        raise ConfigError(f"{path}: splits directory {splits} does not exist")
    output = Path(out) if out is not None else base / data.get("output", "out")
    digest = hashlib.sha256(text.encode()).hexdigest()
    if seed_file is not None:
        digest = hashlib.sha256((digest + json.dumps(seeds_data, sort_keys=True)).encode()).hexdigest()
    return ExperimentManifest(path, digest, splits, chosen_mode, config, seeds, scenario,
                              output.resolve())


def _stamp(manifest_hash: str | None) -> dict:
    return {"tool_version": __version__, "manifest_hash": manifest_hash}


def _stamp_line(manifest_hash: str | None) -> str:
    return f"awa {__version__} manifest {manifest_hash}"


def _write_table(path: Path, header: list[str], rows, manifest_hash: str | None) -> None:
    buf = io.StringIO()
    buf.write(f"# {_stamp_line(manifest_hash)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue())


def set_dir(output: Path, i: int) -> Path:
    return output / "sets" / f"set_{i}"


# -- commands ------------------------------------------------------------------

def cmd_split(args) -> int:
    counts = [int(c) for c in args.counts.split(",")]
    if len(counts) != 4:
        raise ConfigError("--counts needs four comma-separated numbers")
    corpus = load_corpus(args.corpus, args.length)
    parts = split_corpus(corpus, SplitSpec(*counts), args.seed)
    out = Path(args.out)
    digest = hashlib.sha256(f"{Path(args.corpus).resolve()}|{counts}|{args.seed}".encode()).hexdigest()
    for name, part in parts.items():
        write_corpus(part, out / SPLIT_DIRS[name], [_stamp_line(digest)])
        print(f"{SPLIT_DIRS[name]}: {len(part)} traces")
    return 0


def _progress_logger(i):
    def sink(record):
        if record["iteration"] % 10 == 0:
            log.info("set %d pair %s iteration %d bwo %.3f/%.3f", i, record["pair"],
                     record["iteration"], record["bwo_a"], record["bwo_b"])
    return sink


def cmd_train(args) -> int:
    m = load_manifest(args.manifest, args.seed_file, args.mode, args.out)
    corpus = load_corpus(m.split("awa_train"), m.length)
    for i, seeds in enumerate(m.seeds):
        tset = train_transformer_set(corpus, m.train, m.mode, seeds, jobs=args.jobs,
                                     progress=_progress_logger(i))
        target = set_dir(m.output, i)
        save_transformer_set(tset, target, _stamp(m.digest))
        dump_json({**_stamp(m.digest), "mode": m.mode, "config": m.train.to_dict(),
                   "seed_fingerprint": tset.seed_fingerprint, "pairs": tset.metadata["pairs"]},
                  target / "training_log.json")
        print(f"set {i}: {target} fingerprint {tset.seed_fingerprint[:16]}")
    return 0


def cmd_transform(args) -> int:
    tset = load_transformer_set(args.archive)
    corpus = load_corpus(args.corpus, next(iter(tset.transformers.values())).length)
    transformed = corpus.with_values(tset.transform(corpus, args.phase))
    digest = json.loads((Path(args.archive) / "manifest.json").read_text()).get("manifest_hash")
    write_corpus(transformed, args.out, [_stamp_line(digest), f"phase {args.phase}"])
    for k, bwo in enumerate(per_class_bwo(tset, corpus)):
        print(f"class {k}: BWO {bwo:.2f}%")
    return 0


def cmd_evaluate(args) -> int:
    m = load_manifest(args.manifest, args.seed_file, args.mode, args.out)
    sets = [load_transformer_set(set_dir(m.output, i)) for i in range(len(m.seeds))]
    report = run_experiment(sets, load_corpus(m.split("adversary_train"), m.length),
                            load_corpus(m.split("adversary_val"), m.length),
                            load_corpus(m.split("target_user"), m.length), m.scenario)
    report.metadata = {"config": m.train.to_dict(), "scenario": m.scenario.to_dict(),
                       "seed_fingerprints": [s.seed_fingerprint for s in sets]}
    m.output.mkdir(parents=True, exist_ok=True)
    dump_json({**_stamp(m.digest), **report.to_dict()}, m.output / "report.json")
    s = report.size
    _write_table(m.output / "accuracy_matrix.csv", ["user_set"] + [f"adversary_set_{i}" for i in range(s)],
                 ([j] + [float(v) for v in report.accuracy[j]] for j in range(s)), m.digest)
    _write_table(m.output / "set_bwo.csv", ["set", "user_bwo", "adversary_bwo", "scenario2_accuracy"],
                 ([i, report.user_bwo[i], report.adversary_bwo[i], report.scenario2[i]]
                  for i in range(s)), m.digest)
    icd = report.intra_cd
    _write_table(m.output / "intra_cd.csv", ["class", "set_i", "set_j", "mmd"],
                 ([c, i, j, float(icd["matrices"][c][i][j])]
                  for c in range(len(icd["matrices"])) for i in range(s) for j in range(i + 1, s)),
                 m.digest)
    print(np.array2string(report.accuracy, precision=2))
    print(f"same-set {report.same_set_accuracy():.2f}%  cross-set {report.cross_set_accuracy():.2f}%  "
          f"scenario 2 {np.mean(report.scenario2):.2f}%")
    return 0


def cmd_metrics(args) -> int:
    sets = [load_transformer_set(a) for a in args.archive]
    corpus = load_corpus(args.corpus, next(iter(sets[0].transformers.values())).length)
    report = intra_cd(sets, corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256("|".join(s.seed_fingerprint for s in sets).encode()).hexdigest()
    dump_json({**_stamp(digest), **report.to_dict()}, out / "intra_cd.json")
    _write_table(out / "bwo.csv", ["set", "class", "bwo"],
                 ([i, c, float(b)] for i, s in enumerate(sets)
                  for c, b in enumerate(per_class_bwo(s, corpus))), digest)
    print(f"Avg Intra-CD {report.avg_intra_cd:.4f}  Min Intra-CD {report.min_intra_cd:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="awa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split a corpus into the four evaluation partitions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--counts", required=True, help="awa_train,adv_train,adv_val,user per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    for name, func, text in (("train", cmd_train, "train one transformer set per seed bundle"),
                             ("evaluate", cmd_evaluate, "run scenarios 1 and 2")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out")
        p.add_argument("--mode", choices=["universal", "non-universal", "non_universal"])
        p.add_argument("--seed-file")
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("transform", help="apply a transformer set to a corpus")
    p.add_argument("--archive", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--phase", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("metrics", help="intra-class distance across transformer sets")
    p.add_argument("--archive", action="append", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AWA_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AWAError as exc:
        print(f"awa {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"awa {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
