"""Line-delimited file formats.

Every file starts with a one-line JSON header ``{"format": ..., "version": 1}``
followed by one JSON object per line. Floats are written with ``repr`` so a
write/read pair is a bitwise round-trip.

=====================  ======================================================
format                 record fields
=====================  ======================================================
trajectory-corpus      trajectory_id, tokens + response_start, or prompt +
                       response text (byte tokenizer), optional metadata
gradient-dump          trajectory_id, group_names, norms, group_param_counts,
                       loss_value, source
scores                 header carries metric_name / normalized; records are
                       trajectory_id, score, degenerate
partition-manifest     header + a single record: metric_name, rule,
                       threshold, sft_ids, rl_ids, corpus_checksum,
                       corpus_size, tool_version
=====================  ======================================================
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import (
    CorpusConsistencyError,
    CorruptedManifestError,
    EmptyResponseError,
    InputError,
    ParseError,
    ValidationError,
)
from .metrics import ScoreSet
from .probe import ByteTokenizer, GradientVector, Trajectory, prepare_trajectory
from .router import Partition

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
CORPUS_FORMAT = "gradroute.trajectory-corpus"
DUMP_FORMAT = "gradroute.gradient-dump"
SCORES_FORMAT = "gradroute.scores"
MANIFEST_FORMAT = "gradroute.partition-manifest"


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False, separators=(",", ":"))


def _header(fmt: str, **extra) -> str:
    return _dumps({"format": fmt, "version": FORMAT_VERSION, **extra})


def _write_lines(path, header: str, records: Iterable[dict]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def _read_lines(path, fmt: str) -> tuple[dict, Iterator[tuple[int, dict]]]:
    """Return the header and an iterator of ``(line_number, record)``.

    An empty file is treated as a file with no records.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        return {"format": fmt, "version": FORMAT_VERSION}, iter(())
    header = _parse(lines[0], 1)
    if header.get("format") != fmt:
        raise ParseError(f"expected a {fmt} header, found {header.get('format')!r}", 1)
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {header.get('version')!r}", 1)

    def records():
        for lineno, line in enumerate(lines[1:], start=2):
            if line.strip():
                yield lineno, _parse(line, lineno)

    return header, records()


def _parse(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
    if not isinstance(obj, dict):
        raise ParseError("record is not a JSON object", lineno)
    return obj


def _field(rec: dict, name: str, lineno: int):
    try:
        return rec[name]
    except KeyError:
        raise ParseError(f"missing field {name!r}", lineno) from None


# --------------------------------------------------------------------------
# gradient dumps


def gradient_record(vec: GradientVector) -> dict:
    return {
        "trajectory_id": vec.trajectory_id,
        "group_names": list(vec.group_names),
        "norms": [float(x) for x in vec.norms],
        "group_param_counts": list(vec.group_param_counts),
        "loss_value": float(vec.loss_value),
        "source": vec.source,
    }


def write_gradient_dump(vectors: Iterable[GradientVector], path) -> None:
    _write_lines(path, _header(DUMP_FORMAT), (gradient_record(v) for v in vectors))


def read_gradient_dump(path) -> list[GradientVector]:
    """Read and validate a dump; any bad record rejects the whole file."""
    _, records = _read_lines(path, DUMP_FORMAT)
    out: list[GradientVector] = []
    reference = None
    for lineno, rec in records:
        names = _field(rec, "group_names", lineno)
        norms = _field(rec, "norms", lineno)
        counts = _field(rec, "group_param_counts", lineno)
        if not (isinstance(names, list) and isinstance(norms, list) and isinstance(counts, list)):
            raise ValidationError("group_names, norms and group_param_counts must be lists", lineno)
        if not (len(names) == len(norms) == len(counts)):
            raise ValidationError(
                f"length mismatch: {len(names)} group_names, {len(norms)} norms, {len(counts)} counts", lineno
            )
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in norms):
            raise ValidationError("norms must be numbers", lineno)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in counts):
            raise ValidationError("group_param_counts must be integers", lineno)
        if any(not math.isfinite(x) or x < 0 for x in norms):
            raise ValidationError("norms must be finite and non-negative", lineno)
        if reference is None:
            reference = names
        elif names != reference:
            raise CorpusConsistencyError(f"line {lineno}: group_names differ from the first record")
        try:
            vec = GradientVector(
                trajectory_id=str(_field(rec, "trajectory_id", lineno)),
                norms=np.array(norms, dtype=np.float64),
                group_names=tuple(names),
                group_param_counts=tuple(counts),
                loss_value=float(_field(rec, "loss_value", lineno)),
                source=str(rec.get("source", "external")),
            )
        except (InputError, TypeError, ValueError) as exc:
            raise ValidationError(str(exc), lineno) from None
        out.append(vec)
    return out


# --------------------------------------------------------------------------
# scores


def write_scores(scores: ScoreSet, path) -> None:
    header = _header(SCORES_FORMAT, metric_name=scores.metric_name, normalized=scores.normalized)
    records = (
        {"trajectory_id": tid, "score": scores.entries[tid], "degenerate": tid in scores.degenerate}
        for tid in sorted(scores.entries)
    )
    _write_lines(path, header, records)


def read_scores(path) -> ScoreSet:
    header, records = _read_lines(path, SCORES_FORMAT)
    entries: dict[str, float] = {}
    degenerate = set()
    for lineno, rec in records:
        tid = str(_field(rec, "trajectory_id", lineno))
        score = _field(rec, "score", lineno)
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
            raise ValidationError(f"score for {tid!r} is not a finite number", lineno)
        if tid in entries:
            raise ValidationError(f"duplicate trajectory id {tid!r}", lineno)
        entries[tid] = float(score)
        if rec.get("degenerate", False):
            degenerate.add(tid)
    if "metric_name" not in header:
        raise ParseError("scores header has no metric_name", 1)
    return ScoreSet(header["metric_name"], entries, bool(header.get("normalized", False)), frozenset(degenerate))


def corpus_checksum(scores: ScoreSet) -> str:
    """Order-independent digest of the (trajectory_id, score) pairs."""
    h = hashlib.sha256()
    for tid in sorted(scores.entries):
        h.update(_dumps([tid, float(scores.entries[tid]).hex()]).encode())
        h.update(b"\n")
    return h.hexdigest()


# --------------------------------------------------------------------------
# partition manifests


@dataclass
class PartitionManifest:
    partition: Partition
    corpus_checksum: str
    corpus_size: int
    tool_version: str = __version__

    @classmethod
    def from_scores(cls, partition: Partition, scores: ScoreSet) -> PartitionManifest:
        if partition.corpus != frozenset(scores.entries):
            raise CorpusConsistencyError("partition does not cover exactly the scored corpus")
        return cls(partition, corpus_checksum(scores), len(scores))

    def verify(self, scores: ScoreSet) -> None:
        if corpus_checksum(scores) != self.corpus_checksum:
            raise CorpusConsistencyError("score file does not match the manifest's corpus checksum")
        if self.partition.corpus != frozenset(scores.entries):
            raise CorruptedManifestError("manifest ids are not exactly the scored corpus")


def write_partition(manifest: PartitionManifest, path) -> None:
    p = manifest.partition
    record = {
        "metric_name": p.metric_name,
        "rule": p.rule,
        "threshold": p.threshold,
        "sft_ids": sorted(p.sft_ids),
        "rl_ids": sorted(p.rl_ids),
        "corpus_checksum": manifest.corpus_checksum,
        "corpus_size": manifest.corpus_size,
        "tool_version": manifest.tool_version,
    }
    _write_lines(path, _header(MANIFEST_FORMAT), [record])


def read_partition(path, scores: ScoreSet | None = None) -> PartitionManifest:
    """Read a manifest, checking disjointness, size, and (if given) the score file."""
    _, records = _read_lines(path, MANIFEST_FORMAT)
    records = list(records)
    if len(records) != 1:
        raise ParseError(f"a manifest holds exactly one record, found {len(records)}")
    lineno, rec = records[0]
    sft = _field(rec, "sft_ids", lineno)
    rl = _field(rec, "rl_ids", lineno)
    if len(set(sft)) != len(sft) or len(set(rl)) != len(rl):
        raise CorruptedManifestError("duplicate id inside sft_ids or rl_ids", lineno)
    both = set(sft) & set(rl)
    if both:
        raise CorruptedManifestError(f"ids in both sft_ids and rl_ids: {sorted(both)[:3]}", lineno)
    size = int(_field(rec, "corpus_size", lineno))
    if len(sft) + len(rl) != size:
        raise CorruptedManifestError(
            f"manifest lists {len(sft) + len(rl)} ids but corpus_size is {size}", lineno
        )
    threshold = _field(rec, "threshold", lineno)
    partition = Partition(
        frozenset(sft), frozenset(rl), float(threshold),
        str(_field(rec, "rule", lineno)), str(_field(rec, "metric_name", lineno)),
    )
    manifest = PartitionManifest(
        partition, str(_field(rec, "corpus_checksum", lineno)), size, str(rec.get("tool_version", ""))
    )
    if scores is not None:
        manifest.verify(scores)
    return manifest


# --------------------------------------------------------------------------
# trajectory corpora


@dataclass
class IngestSummary:
    read: int = 0
    skipped: int = 0
    skipped_ids: list[str] = field(default_factory=list)


def corpus_record(trajectory_id: str, tokens, response_start: int, metadata: dict | None = None) -> dict:
    return {
        "trajectory_id": trajectory_id,
        "tokens": [int(t) for t in tokens],
        "response_start": int(response_start),
        "metadata": dict(metadata or {}),
    }


def write_trajectory_corpus(records: Iterable[dict], path) -> None:
    _write_lines(path, _header(CORPUS_FORMAT), records)


def read_trajectory_corpus(
    path, context_length: int, vocab_size: int | None = None, summary: IngestSummary | None = None
) -> list[Trajectory]:
    """Read raw records and apply the truncation/padding/masking rules.

    A record whose response is entirely truncated away is skipped with a
    warning and counted in ``summary``. Other problems reject the file.
    """
    summary = summary if summary is not None else IngestSummary()
    tokenizer = ByteTokenizer()
    _, records = _read_lines(path, CORPUS_FORMAT)
    out: list[Trajectory] = []
    seen = set()
    for lineno, rec in records:
        tid = str(_field(rec, "trajectory_id", lineno))
        if tid in seen:
            raise ValidationError(f"duplicate trajectory id {tid!r}", lineno)
        seen.add(tid)
        if "tokens" in rec:
            tokens = rec["tokens"]
            start = _field(rec, "response_start", lineno)
            if not isinstance(tokens, list) or not all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
                raise ValidationError("tokens must be a list of integers", lineno)
        elif "prompt" in rec and "response" in rec:
            prompt = tokenizer.encode(str(rec["prompt"]))
            tokens = prompt + tokenizer.encode(str(rec["response"]))
            start = len(prompt)
        else:
            raise ParseError("record needs either tokens/response_start or prompt/response", lineno)
        if not isinstance(start, int) or isinstance(start, bool):
            raise ValidationError("response_start must be an integer", lineno)
        if vocab_size is not None and any(t < 0 or t >= vocab_size for t in tokens):
            bad = next(t for t in tokens if t < 0 or t >= vocab_size)
            raise ValidationError(f"token id {bad} outside vocabulary of size {vocab_size}", lineno)
        summary.read += 1
        try:
            traj = prepare_trajectory(tokens, start, context_length, tid, rec.get("metadata") or {})
        except EmptyResponseError as exc:
            log.warning("skipping %s (line %d): %s", tid, lineno, exc)
            summary.skipped += 1
            summary.skipped_ids.append(tid)
            continue
        except InputError as exc:
            raise ValidationError(str(exc), lineno) from None
        out.append(traj)
    return out


# --------------------------------------------------------------------------
# analysis reports


REPORT_FORMAT = "gradroute.report"


def write_report(path, kind: str, summary: dict, rows: Iterable[dict] = ()) -> None:
    """Header carries ``kind`` and the summary fields; ``rows`` follow one per line."""
    _write_lines(path, _header(REPORT_FORMAT, kind=kind, summary=summary), rows)


def read_report(path) -> tuple[str, dict, list[dict]]:
    header, records = _read_lines(path, REPORT_FORMAT)
    return header.get("kind", ""), header.get("summary", {}), [rec for _, rec in records]
