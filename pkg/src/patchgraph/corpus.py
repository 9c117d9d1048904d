"""Patch corpus loading, validation, and k-fold splitting.

A corpus is a single JSON document::

    {"patches": [{"id": ..., "project": ..., "buggy_lines": [...],
                  "patched_lines": [...], "method_context": "...",
                  "label": "correct" | "overfitting",
                  "ground_truth_patch": [...]   # optional
                 }, ...]}

``method_context`` holds the full patched method source with a line
containing only ``//<PATCH>`` immediately before and after the changed
region.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateId, MalformedCorpus, TooFewRecords, UnknownLabel

PATCH_MARKER = "//<PATCH>"


class Label(enum.Enum):
    CORRECT = "correct"
    OVERFITTING = "overfitting"


@dataclass(frozen=True)
class PatchRecord:
    id: str
    project: str
    buggy_lines: tuple[str, ...]
    patched_lines: tuple[str, ...]
    method_context: str
    label: Label
    ground_truth_patch: tuple[str, ...] | None = None

    def context_parts(self) -> tuple[str, str, str]:
        """Split method_context at the two patch markers.

        Returns (before, region, after), marker lines removed.
        """
        lines = self.method_context.split("\n")
        marks = [i for i, ln in enumerate(lines) if ln.strip() == PATCH_MARKER]
        if len(marks) != 2:
            raise MalformedCorpus(
                f"record {self.id!r}: method_context must contain exactly two "
                f"{PATCH_MARKER} marker lines, found {len(marks)}"
            )
        a, b = marks
        before = "\n".join(lines[:a])
        region = "\n".join(lines[a + 1 : b])
        after = "\n".join(lines[b + 1 :])
        return before, region, after

    def method_source(self) -> str:
        """Method source with the marker lines stripped out."""
        before, region, after = self.context_parts()
        parts = [p for p in (before, region, after) if p != ""]
        return "\n".join(parts)


@dataclass(frozen=True)
class FoldPlan:
    seed: int
    folds: tuple[frozenset[str], ...]


_REQUIRED = ("id", "project", "buggy_lines", "patched_lines", "method_context", "label")


def _string_list(value, what: str, rid: str) -> tuple[str, ...]:
    if not isinstance(value, list) or any(not isinstance(x, str) for x in value):
        raise MalformedCorpus(f"record {rid!r}: {what} must be a list of strings")
    return tuple(value)


def parse_record(obj: dict) -> PatchRecord:
    if not isinstance(obj, dict):
        raise MalformedCorpus("each patch entry must be an object")
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise MalformedCorpus("patch entry missing a non-empty string 'id'")
    for key in _REQUIRED:
        if key not in obj:
            raise MalformedCorpus(f"record {rid!r}: missing field {key!r}")
    if not isinstance(obj["method_context"], str):
        raise MalformedCorpus(f"record {rid!r}: method_context must be a string")
    try:
        label = Label(obj["label"])
    except ValueError:
        raise UnknownLabel(f"record {rid!r}: unknown label {obj['label']!r}") from None
    buggy = _string_list(obj["buggy_lines"], "buggy_lines", rid)
    patched = _string_list(obj["patched_lines"], "patched_lines", rid)
    if not any(ln.strip() for ln in buggy) and not any(ln.strip() for ln in patched):
        raise MalformedCorpus(f"record {rid!r}: buggy_lines and patched_lines both empty")
    gt = obj.get("ground_truth_patch")
    gt_lines = _string_list(gt, "ground_truth_patch", rid) if gt is not None else None
    return PatchRecord(
        id=rid,
        project=str(obj["project"]),
        buggy_lines=buggy,
        patched_lines=patched,
        method_context=obj["method_context"],
        label=label,
        ground_truth_patch=gt_lines,
    )


def load_corpus(path) -> list[PatchRecord]:
    """Load and validate every record in a corpus file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MalformedCorpus(f"corpus file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise MalformedCorpus(f"corpus is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("patches"), list):
        raise MalformedCorpus("corpus must be an object with a 'patches' array")
    records = []
    seen: set[str] = set()
    for obj in doc["patches"]:
        rec = parse_record(obj)
        if rec.id in seen:
            raise DuplicateId(f"duplicate record id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def dump_corpus(records: list[PatchRecord]) -> str:
    """Serialize records back to the corpus JSON format (round-trip aid)."""
    patches = []
    for r in records:
        obj = {
            "id": r.id,
            "project": r.project,
            "buggy_lines": list(r.buggy_lines),
            "patched_lines": list(r.patched_lines),
            "method_context": r.method_context,
            "label": r.label.value,
        }
        if r.ground_truth_patch is not None:
            obj["ground_truth_patch"] = list(r.ground_truth_patch)
        patches.append(obj)
    return json.dumps({"patches": patches}, indent=2) + "\n"


def make_folds(records: list[PatchRecord], k: int, seed: int) -> FoldPlan:
    """Shuffle record ids with the given seed and deal them into k folds.

    Round-robin dealing keeps fold sizes within 1 of each other. No
    stratification is performed.
    """
    if k < 2:
        raise TooFewRecords(f"k must be at least 2, got {k}")
    if len(records) < k:
        raise TooFewRecords(f"need at least {k} records for {k} folds, have {len(records)}")
    ids = [r.id for r in records]
    random.Random(seed).shuffle(ids)
    buckets: list[list[str]] = [[] for _ in range(k)]
    for i, rid in enumerate(ids):
        buckets[i % k].append(rid)
    return FoldPlan(seed=seed, folds=tuple(frozenset(b) for b in buckets))
