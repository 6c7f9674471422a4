"""Frame-index parsing, frame selection, and dataset manifest construction.

The sidecar is a CSV (producible from ffprobe-style tooling) listing every
decoded frame with its picture type. Manifests assign patches to
train/val/test by whole videos (default) so no video leaks across splits,
then balance classes within each (kind, split) by seeded down-sampling.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from provnet.errors import DataError

log = logging.getLogger(__name__)

SIDECAR_FIELDS = ["video_id", "frame_index", "pict_type", "width", "height", "frame_path"]
MANIFEST_VERSION = "provnet-1"


@dataclass
class FrameRecord:
    video_id: str
    frame_index: int
    pict_type: str  # I | P | B
    width: int
    height: int
    frame_path: str
    excluded: bool = False  # B-frames are kept but never analyzed


@dataclass
class ManifestEntry:
    patch_path: str
    label: int
    kind: str  # I | P
    split: str  # train | val | test
    video_id: str
    frame_index: int


@dataclass
class Manifest:
    entries: list
    class_names: list
    seed: int
    split: tuple = (0.70, 0.15, 0.15)

    def subset(self, kind: str, split: str) -> list:
        return [e for e in self.entries if e.kind == kind and e.split == split]

    def save(self, path):
        header = {
            "version": MANIFEST_VERSION,
            "class_names": self.class_names,
            "seed": self.seed,
            "split": list(self.split),
        }
        lines = [json.dumps(header, sort_keys=True)]
        for e in self.entries:
            lines.append(
                json.dumps(
                    {
                        "patch_path": e.patch_path,
                        "label": e.label,
                        "kind": e.kind,
                        "split": e.split,
                        "video_id": e.video_id,
                        "frame_index": e.frame_index,
                    },
                    sort_keys=True,
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise DataError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        if header.get("version") != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version")
        entries = [ManifestEntry(**json.loads(line)) for line in lines[1:] if line]
        return cls(
            entries=entries,
            class_names=header["class_names"],
            seed=header["seed"],
            split=tuple(header["split"]),
        )


def parse_frame_index(sidecar_stream) -> list[FrameRecord]:
    """Parse and validate a sidecar CSV stream into per-video sorted records.

    Unknown picture types are rejected with a logged diagnostic; duplicate
    (video_id, frame_index) pairs are a hard error. B-frame records are
    retained but flagged excluded.
    """
    reader = csv.DictReader(sidecar_stream)
    records = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        pict = (row.get("pict_type") or "").strip().upper()
        if pict not in ("I", "P", "B"):
            log.warning("line %d: rejecting record with pict_type %r", lineno, pict)
            continue
        key = (row["video_id"], int(row["frame_index"]))
        if key in seen:
            raise DataError(f"duplicate frame record {key}")
        seen.add(key)
        records.append(
            FrameRecord(
                video_id=row["video_id"],
                frame_index=int(row["frame_index"]),
                pict_type=pict,
                width=int(row["width"]),
                height=int(row["height"]),
                frame_path=row["frame_path"],
                excluded=(pict == "B"),
            )
        )

    by_video: dict[str, list[FrameRecord]] = {}
    order = []
    for rec in records:
        if rec.video_id not in by_video:
            by_video[rec.video_id] = []
            order.append(rec.video_id)
        by_video[rec.video_id].append(rec)

    out = []
    for vid in order:
        group = by_video[vid]
        indices = [r.frame_index for r in group]
        if indices != sorted(indices):
            log.warning("video %s: frame indices out of order, sorting", vid)
            group = sorted(group, key=lambda r: r.frame_index)
        out.extend(group)
    return out


def select_iframes(records: list[FrameRecord]) -> list[FrameRecord]:
    """Exactly the I-frame records, original order preserved."""
    return [r for r in records if r.pict_type == "I"]


def select_pframe_triplets(records: list[FrameRecord], stride: int = 3) -> list[tuple]:
    """Windows of three consecutive P-frames, confined to a single GOP.

    B- and I-frames are removed before windowing; the window advances by
    ``stride`` (3 = non-overlapping, 1 = dense). Returns (prev, center,
    next) FrameRecord triples.
    """
    if stride < 1:
        raise DataError(f"triplet stride must be >= 1, got {stride}")
    by_video: dict[str, list[FrameRecord]] = {}
    order = []
    for rec in records:
        if rec.video_id not in by_video:
            by_video[rec.video_id] = []
            order.append(rec.video_id)
        by_video[rec.video_id].append(rec)

    triplets = []
    for vid in order:
        # segment at each I-frame: a GOP is an I-frame plus its followers
        segment: list[FrameRecord] = []
        segments = [segment]
        for rec in by_video[vid]:
            if rec.pict_type == "I":
                segment = []
                segments.append(segment)
            elif rec.pict_type == "P":
                segment.append(rec)
        for seg in segments:
            for start in range(0, len(seg) - 2, stride):
                triplets.append(tuple(seg[start : start + 3]))
    return triplets


@dataclass
class PatchListing:
    """One produced patch file awaiting split assignment."""

    patch_path: str
    label: int
    kind: str
    video_id: str
    frame_index: int
    row: int = 0
    col: int = 0

    def sort_key(self):
        return (self.video_id, self.frame_index, self.kind, self.row, self.col)


def _assign_video_splits(listing, split, rng) -> dict[str, str]:
    """Assign whole videos to splits, per class, targeting patch proportions."""
    by_class: dict[int, dict[str, int]] = {}
    for item in listing:
        by_class.setdefault(item.label, {})
        counts = by_class[item.label]
        counts[item.video_id] = counts.get(item.video_id, 0) + 1

    assignment: dict[str, str] = {}
    names = ["train", "val", "test"]
    for label in sorted(by_class):
        videos = sorted(by_class[label])
        if len(videos) < 3:
            raise DataError(
                f"class {label} has only {len(videos)} videos; need at least one per split"
            )
        rng.shuffle(videos)
        total = sum(by_class[label].values())
        cum_targets = [split[0] * total, (split[0] + split[1]) * total]
        cum = 0
        remaining = len(videos)
        split_idx = 0
        for vid in videos:
            # never starve a later split of its one required video
            if split_idx < 2 and (cum >= cum_targets[split_idx] or remaining <= 2 - split_idx):
                split_idx += 1
            assignment[vid] = names[split_idx]
            cum += by_class[label][vid]
            remaining -= 1
        assigned_splits = {assignment[v] for v in videos}
        if assigned_splits != set(names):
            # force one video into each missing split from the largest one
            for missing in sorted(set(names) - assigned_splits):
                donors = [v for v in videos if assignment[v] == "train"]
                if not donors:
                    raise DataError(f"class {label}: cannot populate split {missing}")
                assignment[donors[-1]] = missing
    return assignment


def build_manifest(
    patch_listing: list[PatchListing],
    class_names: list[str],
    split=(0.70, 0.15, 0.15),
    seed: int = 0,
    split_by: str = "video",
) -> Manifest:
    """Split and balance patches into a manifest, deterministically by seed.

    ``split_by="video"`` (default) keeps every video inside one split;
    ``split_by="patch"`` reproduces the literal per-patch protocol.
    Classes are then balanced within each (kind, split) by seeded
    down-sampling to the minimum class count.
    """
    if abs(sum(split) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {split}")
    if split_by not in ("video", "patch"):
        raise DataError(f"unknown split_by {split_by!r}")
    listing = sorted(patch_listing, key=PatchListing.sort_key)
    if not listing:
        raise DataError("empty patch listing")
    rng = np.random.default_rng(seed)

    if split_by == "video":
        video_split = _assign_video_splits(listing, split, rng)
        assigned = [(item, video_split[item.video_id]) for item in listing]
    else:
        names = ["train", "val", "test"]
        perm = rng.permutation(len(listing))
        n_train = int(round(split[0] * len(listing)))
        n_val = int(round(split[1] * len(listing)))
        assigned = [None] * len(listing)
        for pos, idx in enumerate(perm):
            s = names[0] if pos < n_train else names[1] if pos < n_train + n_val else names[2]
            assigned[idx] = (listing[idx], s)

    # balance per (kind, split) by down-sampling to the minimum class count
    groups: dict[tuple, dict[int, list]] = {}
    for item, split_name in assigned:
        groups.setdefault((item.kind, split_name), {}).setdefault(item.label, []).append(
            (item, split_name)
        )

    labels = list(range(len(class_names)))
    entries = []
    for key in sorted(groups):
        per_class = groups[key]
        missing = [lbl for lbl in labels if not per_class.get(lbl)]
        if missing:
            report = {class_names[lbl]: len(per_class.get(lbl, [])) for lbl in labels}
            raise DataError(
                f"(kind={key[0]}, split={key[1]}): classes {missing} have no patches; counts {report}"
            )
        floor = min(len(v) for v in per_class.values())
        for lbl in labels:
            pool = per_class[lbl]
            keep_idx = sorted(rng.choice(len(pool), size=floor, replace=False))
            for i in keep_idx:
                item, split_name = pool[i]
                entries.append(
                    ManifestEntry(
                        patch_path=item.patch_path,
                        label=item.label,
                        kind=item.kind,
                        split=split_name,
                        video_id=item.video_id,
                        frame_index=item.frame_index,
                    )
                )
    entries.sort(key=lambda e: (e.kind, e.split, e.label, e.video_id, e.frame_index, e.patch_path))
    manifest = Manifest(entries=entries, class_names=list(class_names), seed=seed, split=tuple(split))
    if split_by == "video":
        _check_no_leakage(manifest)
    return manifest


def _check_no_leakage(manifest: Manifest):
    split_videos: dict[str, set] = {"train": set(), "val": set(), "test": set()}
    for e in manifest.entries:
        split_videos[e.split].add(e.video_id)
    for a in split_videos:
        for b in split_videos:
            if a < b and split_videos[a] & split_videos[b]:
                raise DataError(
                    f"video leakage between {a} and {b}: {split_videos[a] & split_videos[b]}"
                )
