"""On-disk formats: trace files, corpus directories, transformer-set archives.

Trace file::

    format: bs            (or ``ds`` for +1/-1 packet directions)
    # optional comment lines
    +1 -3 +2 -2

A corpus directory holds ``class_<idx>.txt`` files for ``idx`` in ``0..K-1``.
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .errors import ArchiveError, DataError, InvalidTrace
from .network import load_model, save_model
from .trace import BurstSequence, TraceCorpus, ds_to_bs, to_fixed
from .transformer import TransformerSet, TransformerSpec

CLASS_FILE = re.compile(r"^class_(\d+)\.txt$")
ARCHIVE_FORMAT = "awa-transformer-set/1"


def _number(token: str, path, lineno):
    try:
        value = float(token)
    except ValueError:
        raise InvalidTrace(f"{path}:{lineno}: not a number: {token!r}") from None
    return int(value) if value.is_integer() else value


def read_trace_file(path: str | Path) -> tuple[str, list[np.ndarray]]:
    """Return the declared format and one burst vector per trace line."""
    path = Path(path)
    fmt = None
    traces = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if fmt is None:
            m = re.fullmatch(r"format:\s*(ds|bs)", line)
            if not m:
                raise InvalidTrace(f"{path}:{lineno}: expected 'format: ds|bs' header")
            fmt = m.group(1)
            continue
        values = [_number(tok, path, lineno) for tok in line.split()]
        try:
            if fmt == "ds":
                bursts = np.asarray(ds_to_bs(values).bursts, dtype=np.float64)
            elif all(isinstance(v, int) for v in values):
                bursts = np.asarray(BurstSequence(values).bursts, dtype=np.float64)
            else:
                bursts = np.asarray(values, dtype=np.float64)
                if np.any(bursts == 0) or np.any(np.sign(bursts[1:]) == np.sign(bursts[:-1])):
                    raise InvalidTrace("burst signs must alternate and be nonzero")
        except InvalidTrace as exc:
            raise InvalidTrace(f"{path}:{lineno}: {exc}") from None
        traces.append(bursts)
    if fmt is None:
        raise InvalidTrace(f"{path}: missing 'format:' header")
    return fmt, traces


def _format_value(v: float) -> str:
    return f"{int(v):+d}" if float(v).is_integer() else repr(float(v))


def write_trace_file(path: str | Path, traces: Iterable[Sequence[float]], fmt: str = "bs",
                     comments: Sequence[str] = ()) -> None:
    lines = [f"format: {fmt}"] + [f"# {c}" for c in comments]
    lines += [" ".join(_format_value(v) for v in trace) for trace in traces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_corpus(directory: str | Path, length: int) -> TraceCorpus:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"corpus directory {directory} does not exist")
    files = {int(m.group(1)): p for p in directory.iterdir()
             if (m := CLASS_FILE.match(p.name))}
    if not files:
        raise DataError(f"{directory}: no class_<idx>.txt files")
    k = max(files) + 1
    if sorted(files) != list(range(k)):
        raise DataError(f"{directory}: class files must be numbered 0..{k - 1}")
    rows, labels, counts = [], [], []
    for idx in range(k):
        _, traces = read_trace_file(files[idx])
        for bursts in traces:
            n = min(bursts.size, length)
            row = np.zeros(length)
            row[:n] = bursts[:n]
            rows.append(row)
            counts.append(n)
            labels.append(idx)
    values = np.stack(rows) if rows else np.zeros((0, length))
    return TraceCorpus(values, labels, k, counts)


def write_corpus(corpus: TraceCorpus, directory: str | Path,
                 comments: Sequence[str] = ()) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k in range(corpus.num_classes):
        rows = np.flatnonzero(corpus.labels == k)
        traces = [corpus.values[i, :corpus.counts[i]] for i in rows]
        write_trace_file(directory / f"class_{k}.txt", traces, "bs", comments)


def dump_json(data, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def save_transformer_set(tset: TransformerSet, directory: str | Path,
                         extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    websites = []
    for w, spec in sorted(tset.transformers.items()):
        entry = {"id": w, "generator": f"generator_{w}", "noise_seed": spec.noise_seed,
                 "perturbation": None}
        save_model(spec.generator, directory / entry["generator"])
        if spec.cached_perturbation is not None:
            entry["perturbation"] = f"perturbation_{w}.txt"
            (directory / entry["perturbation"]).write_text(
                " ".join(str(int(v)) for v in spec.cached_perturbation) + "\n")
        websites.append(entry)
    config = tset.metadata.get("config", {})
    manifest = {
        "format": ARCHIVE_FORMAT,
        "tool_version": __version__,
        "num_classes": tset.num_classes,
        "mode": tset.mode,
        "length": next(iter(tset.transformers.values())).length,
        "pairs": [list(p) for p in tset.pairs],
        "discriminator_label_convention": "first website of each pair is label 1",
        "seed_fingerprint": tset.seed_fingerprint,
        "creation": {"config": config,
                     "selected_iterations": {f"{p['pair'][0]}-{p['pair'][1]}": p["selected_iteration"]
                                             for p in tset.metadata.get("pairs", [])}},
        "websites": websites,
    }
    if extra:
        manifest.update(extra)
    dump_json(manifest, directory / "manifest.json")


def load_transformer_set(directory: str | Path) -> TransformerSet:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise ArchiveError(f"missing transformer set archive {directory}") from None
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{directory}/manifest.json line {exc.lineno}: {exc.msg}") from None
    if manifest.get("format") != ARCHIVE_FORMAT:
        raise ArchiveError(f"{directory}: unsupported archive format {manifest.get('format')!r}")
    transformers = {}
    for entry in manifest["websites"]:
        cache = None
        if entry.get("perturbation"):
            text = (directory / entry["perturbation"]).read_text().split()
            cache = np.array([int(v) for v in text], dtype=np.int64)
        generator = load_model(directory / entry["generator"])
        transformers[entry["id"]] = TransformerSpec(entry["id"], manifest["mode"], generator,
                                                    entry["noise_seed"], cache)
    return TransformerSet(transformers, [tuple(p) for p in manifest["pairs"]], manifest["mode"],
                          manifest["seed_fingerprint"], {"config": manifest["creation"]["config"]})
