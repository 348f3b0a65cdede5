"""Frame-transcript manifests, split statistics, batching and synthetic fixtures.

A manifest is JSON Lines with exactly the keys ``id, split, topic,
transcript, image, label, video_id``. Labels are SUPPORT / NEUTRAL / OPPOSE
(any case). Image paths are relative to the manifest's directory unless an
explicit image root is given.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import rng
from .encoders import encode_ppm
from .errors import DataError

SPLITS = ("train", "dev", "test")
MANIFEST_KEYS = frozenset({"id", "split", "topic", "transcript", "image", "label", "video_id"})


class StanceLabel(enum.IntEnum):
    SUPPORT = 0
    OPPOSE = 1
    NEUTRAL = 2

    @classmethod
    def parse(cls, value) -> StanceLabel:
        if isinstance(value, StanceLabel):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise DataError(f"unknown stance label {value!r}") from None


class MissingImageWarning(UserWarning):
    pass


class EmptyManifestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    split: str
    topic: str
    transcript: str
    image: str
    label: StanceLabel
    video_id: str
    image_missing: bool = field(default=False, compare=False)

    def to_json(self) -> str:
        row = {
            "id": self.id,
            "split": self.split,
            "topic": self.topic,
            "transcript": self.transcript,
            "image": self.image,
            "label": self.label.name,
            "video_id": self.video_id,
        }
        return json.dumps(row, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _parse_line(raw: dict, lineno: int, path) -> ExampleRecord:
    where = f"{path}:{lineno}"
    if not isinstance(raw, dict):
        raise DataError(f"{where}: each line must be a JSON object")
    keys = set(raw)
    if keys != MANIFEST_KEYS:
        missing, extra = sorted(MANIFEST_KEYS - keys), sorted(keys - MANIFEST_KEYS)
        raise DataError(f"{where}: bad keys (missing {missing}, unexpected {extra})")
    for key in MANIFEST_KEYS:
        if not isinstance(raw[key], str):
            raise DataError(f"{where}: field {key!r} must be a string")
    if raw["split"] not in SPLITS:
        raise DataError(f"{where}: bad split tag {raw['split']!r}")
    try:
        label = StanceLabel.parse(raw["label"])
    except DataError:
        raise DataError(f"{where}: unknown label {raw['label']!r}") from None
    if not raw["transcript"].strip():
        raise DataError(f"{where}: empty transcript")
    if not raw["image"].strip():
        raise DataError(f"{where}: empty image path")
    if not raw["id"]:
        raise DataError(f"{where}: empty id")
    return ExampleRecord(raw["id"], raw["split"], raw["topic"], raw["transcript"], raw["image"], label, raw["video_id"])


def load_manifest(path, image_root=None, check_images: bool = True) -> list[ExampleRecord]:
    """Parse and validate a manifest; every error names its line.

    Records whose image is absent on disk are kept with ``image_missing=True``
    and reported through a single :class:`MissingImageWarning`.
    """
    path = Path(path)
    root = Path(image_root) if image_root else path.parent
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    records: list[ExampleRecord] = []
    seen: dict[str, int] = {}
    missing: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        rec = _parse_line(raw, lineno, path)
        if rec.id in seen:
            raise DataError(f"{path}:{lineno}: duplicate id {rec.id!r} (first on line {seen[rec.id]})")
        seen[rec.id] = lineno
        if check_images and not (root / rec.image).is_file():
            missing.append(rec.image)
            rec = dataclasses.replace(rec, image_missing=True)
        records.append(rec)
    if not records:
        warnings.warn(f"manifest {path} holds no records", EmptyManifestWarning, stacklevel=2)
    if missing:
        warnings.warn(
            f"{len(missing)} image(s) missing under {root}, e.g. {missing[0]}", MissingImageWarning, stacklevel=2
        )
    return records


def write_manifest(records: Iterable[ExampleRecord], path) -> None:
    """Canonical writer: sorted keys, compact separators, one record per line."""
    text = "".join(r.to_json() + "\n" for r in records)
    Path(path).write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------- statistics


@dataclass(frozen=True)
class SplitStats:
    counts: dict[str, dict[StanceLabel, int]]
    videos: dict[str, int]

    def total(self, split: str) -> int:
        return sum(self.counts[split].values())

    @property
    def grand_total(self) -> int:
        return sum(self.total(s) for s in SPLITS)

    def label_totals(self) -> dict[StanceLabel, int]:
        return {lab: sum(self.counts[s][lab] for s in SPLITS) for lab in StanceLabel}

    def as_table(self) -> list[dict]:
        rows = []
        for s in SPLITS + ("total",):
            by_label = self.label_totals() if s == "total" else self.counts[s]
            videos = sum(self.videos.values()) if s == "total" else self.videos[s]
            rows.append(
                {
                    "split": s,
                    "videos": videos,
                    "support": by_label[StanceLabel.SUPPORT],
                    "neutral": by_label[StanceLabel.NEUTRAL],
                    "oppose": by_label[StanceLabel.OPPOSE],
                    "total": sum(by_label.values()),
                }
            )
        return rows


def compute_split_stats(records: Iterable[ExampleRecord]) -> SplitStats:
    counts = {s: {lab: 0 for lab in StanceLabel} for s in SPLITS}
    videos: dict[str, set[str]] = {s: set() for s in SPLITS}
    for r in records:
        counts[r.split][r.label] += 1
        videos[r.split].add(r.video_id)
    return SplitStats(counts, {s: len(v) for s, v in videos.items()})


def class_weights(labels: Sequence[int]) -> np.ndarray:
    """w_i = n_i / sum_j n_j over the three stance classes."""
    n = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(StanceLabel)).astype(np.float64)
    if n.sum() == 0:
        raise DataError("class weights need at least one label")
    return n / n.sum()


def batches(
    records: Sequence, batch_size: int, seed: int, split: str | None = "train", epoch: int = 0
) -> Iterator[list]:
    """Yield batches of one split. Train order is a seeded shuffle; dev/test keep file order."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    items = [r for r in records if split is None or _split_of(r) == split]
    if not items:
        raise DataError(f"split {split!r} is empty")
    order = np.arange(len(items))
    if split == "train":
        order = rng.stream(seed, "shuffle", epoch).permutation(len(items))
    for start in range(0, len(items), batch_size):
        yield [items[i] for i in order[start : start + batch_size]]


def _split_of(item) -> str:
    return item.split if hasattr(item, "split") else item.record.split


# --------------------------------------------------------------------------- fixtures

# Per-split label counts and video counts of the MultiClimate release.
SPLIT_COUNTS = {
    "train": {StanceLabel.SUPPORT: 1449, StanceLabel.NEUTRAL: 1036, StanceLabel.OPPOSE: 887},
    "dev": {StanceLabel.SUPPORT: 204, StanceLabel.NEUTRAL: 83, StanceLabel.OPPOSE: 130},
    "test": {StanceLabel.SUPPORT: 194, StanceLabel.NEUTRAL: 73, StanceLabel.OPPOSE: 153},
}
SPLIT_VIDEOS = {"train": 80, "dev": 10, "test": 10}

FIXTURE_TOPICS = (
    "Big Data and Climate Change",
    "Climate Change Adaptation in Fisheries",
    "Emission Reduction Targets",
    "Renewable Energy Transition",
    "Sea Level Rise and Coastal Cities",
    "Climate Policy and the Economy",
    "Global Warming and Extreme Weather",
    "Carbon Capture Technology",
)

_LABEL_WORDS = {
    StanceLabel.SUPPORT: ("urgent", "action", "protect", "renewable", "solutions", "science"),
    StanceLabel.OPPOSE: ("hoax", "exaggerated", "costly", "alarmist", "doubt", "overblown"),
    StanceLabel.NEUTRAL: ("report", "meeting", "schedule", "weather", "today", "describes"),
}
_FILLER = ("the", "we", "this", "video", "people", "about", "world", "change", "climate", "is", "a", "of")
# Mean brightness and dominant channel per label for the separable fixture.
_LABEL_IMAGE = {StanceLabel.SUPPORT: (0.2, 1), StanceLabel.OPPOSE: (0.8, 0), StanceLabel.NEUTRAL: (0.5, 2)}


def _placeholder_transcript(gen: np.random.Generator, label: StanceLabel, separable: bool) -> str:
    n = int(gen.integers(6, 14))
    words = list(gen.choice(_FILLER, size=n))
    if separable:
        cue = list(gen.choice(_LABEL_WORDS[label], size=2, replace=False))
        for w in cue:
            words.insert(int(gen.integers(0, len(words) + 1)), w)
    return " ".join(words).capitalize() + "."


def _placeholder_image(gen: np.random.Generator, label: StanceLabel, size: int, separable: bool) -> np.ndarray:
    if separable:
        level, channel = _LABEL_IMAGE[label]
        img = np.clip(level + gen.normal(0.0, 0.05, size=(3, size, size)), 0.0, 1.0)
        img[channel] = np.clip(img[channel] + 0.15, 0.0, 1.0)
        return img
    return gen.random((3, size, size))


def generate_fixture(
    out_dir,
    counts: dict[str, dict[StanceLabel, int]] | None = None,
    videos: dict[str, int] | None = None,
    seed: int = 0,
    image_size: int = 16,
    separable: bool = False,
) -> list[ExampleRecord]:
    """Write ``manifest.jsonl`` plus PPM images to ``out_dir``.

    Defaults reproduce the MultiClimate split/label counts with placeholder
    content. ``separable=True`` plants label cues in both transcript and
    image so a small model can fit the data.
    """
    counts = SPLIT_COUNTS if counts is None else counts
    videos = SPLIT_VIDEOS if videos is None else videos
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create fixture directory {out}: {exc}") from exc
    records = []
    video_offset = 0
    for split in SPLITS:
        labels = [lab for lab in StanceLabel for _ in range(counts.get(split, {}).get(lab, 0))]
        gen = rng.stream(seed, "fixture", split)
        labels = [labels[i] for i in gen.permutation(len(labels))]
        n_videos = max(1, videos.get(split, 1))
        for k, label in enumerate(labels):
            video = video_offset + (k * n_videos) // max(1, len(labels))
            rid = f"{split}-{k:05d}"
            image = f"images/{rid}.ppm"
            pixels = _placeholder_image(gen, label, image_size, separable)
            (out / image).write_bytes(encode_ppm(pixels))
            records.append(
                ExampleRecord(
                    id=rid,
                    split=split,
                    topic=FIXTURE_TOPICS[video % len(FIXTURE_TOPICS)],
                    transcript=_placeholder_transcript(gen, label, separable),
                    image=image,
                    label=label,
                    video_id=f"v{video:03d}",
                )
            )
        video_offset += n_videos
    write_manifest(records, out / "manifest.jsonl")
    return records


def separable_counts(train_per_class: int = 20, eval_per_class: int = 4) -> dict[str, dict[StanceLabel, int]]:
    return {
        "train": {lab: train_per_class for lab in StanceLabel},
        "dev": {lab: eval_per_class for lab in StanceLabel},
        "test": {lab: eval_per_class for lab in StanceLabel},
    }
