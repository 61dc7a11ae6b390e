"""Manifest loading for single-singing/speech corpora and the MedleyVox
evaluation metadata schema.

Manifests are JSON Lines, one record per line; see docs/schemas.md.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

CATEGORIES = ("unison", "duet", "main_vs_rest", "n_singing")


class ManifestError(ValueError):
    """Raised for malformed manifest / metadata files."""


@dataclass(frozen=True)
class SourceRecord:
    utterance_id: str
    audio_path: str
    singer_id: str
    song_id: str  # empty for speech
    domain: str  # "singing" | "speech"
    duration: float

    def __post_init__(self):
        if self.domain not in ("singing", "speech"):
            raise ManifestError(f"bad domain {self.domain!r}")
        if self.duration <= 0:
            raise ManifestError(f"duration must be > 0, got {self.duration}")


@dataclass(frozen=True)
class MedleyVoxSegment:
    segment_id: str
    song_id: str
    category: str
    n_singings: int
    n_singers: int
    start: float
    end: float
    mixture_path: str
    stem_paths: tuple
    main_index: int | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ManifestError(f"{self.segment_id}: unknown category {self.category!r}")
        if self.n_singings < 2:
            raise ManifestError(f"{self.segment_id}: n_singings must be >= 2")
        n_stems = len(self.stem_paths)
        if self.category in ("unison", "duet"):
            if n_stems != self.n_singings:
                raise ManifestError(
                    f"{self.segment_id}: {self.category} needs {self.n_singings} "
                    f"stems, got {n_stems}"
                )
        if self.category == "unison" and self.n_singings != 2:
            raise ManifestError(f"{self.segment_id}: unison must have exactly 2 singings")
        if self.category == "main_vs_rest":
            if n_stems == 2 and self.main_index is None:
                pass  # stored as (main, rest-sum)
            elif n_stems == self.n_singings and self.main_index is not None:
                if not (0 <= self.main_index < n_stems):
                    raise ManifestError(f"{self.segment_id}: main_index out of range")
            else:
                raise ManifestError(
                    f"{self.segment_id}: main_vs_rest needs 2 stems (main, rest-sum) "
                    f"or {self.n_singings} stems with main_index"
                )


@dataclass
class SourceIndex:
    """Grouped views over a manifest for correlation sampling."""

    records: list
    by_singer: dict = field(default_factory=dict)
    by_song: dict = field(default_factory=dict)
    singing: list = field(default_factory=list)
    speech: list = field(default_factory=list)

    @classmethod
    def build(cls, records):
        by_singer = defaultdict(list)
        by_song = defaultdict(list)
        singing, speech = [], []
        for r in records:
            by_singer[r.singer_id].append(r)
            if r.song_id:
                by_song[r.song_id].append(r)
            (singing if r.domain == "singing" else speech).append(r)
        return cls(list(records), dict(by_singer), dict(by_song), singing, speech)


def load_manifest(path, check_audio: bool = True) -> list:
    """Load a JSON Lines source manifest into validated SourceRecords.

    Duplicate utterance_ids are rejected; records pointing to missing audio
    files are skipped with a warning when `check_audio` is set.
    """
    records = []
    seen = set()
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = SourceRecord(
                    utterance_id=obj["utterance_id"],
                    audio_path=obj["audio_path"],
                    singer_id=obj["singer_id"],
                    song_id=obj.get("song_id", ""),
                    domain=obj["domain"],
                    duration=float(obj["duration"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from e
            if rec.utterance_id in seen:
                raise ManifestError(
                    f"{path}:{lineno}: duplicate utterance_id {rec.utterance_id!r}"
                )
            seen.add(rec.utterance_id)
            if check_audio and not os.path.exists(rec.audio_path):
                logger.warning("missing audio file, skipping: %s", rec.audio_path)
                skipped += 1
                continue
            records.append(rec)
    if skipped:
        logger.warning("%d records skipped for missing audio", skipped)
    return records


def load_medleyvox_metadata(path) -> list:
    """Load MedleyVox segment metadata (JSON Lines) with per-segment
    validation; invalid segments raise with the segment id and reason."""
    segments = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                seg = MedleyVoxSegment(
                    segment_id=obj["segment_id"],
                    song_id=obj["song_id"],
                    category=obj["category"],
                    n_singings=int(obj["n_singings"]),
                    n_singers=int(obj["n_singers"]),
                    start=float(obj["start"]),
                    end=float(obj["end"]),
                    mixture_path=obj["mixture_path"],
                    stem_paths=tuple(obj["stem_paths"]),
                    main_index=obj.get("main_index"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from e
            segments.append(seg)
    return segments


def category_counts(segments) -> dict:
    """Segment counts per category (Table-style summary)."""
    return dict(Counter(s.category for s in segments))
