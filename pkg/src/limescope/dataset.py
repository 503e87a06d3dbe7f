"""Dataset ingestion, label handling, and the stratified 70:10:20 split.

Ingestion reads a GTSRB-style directory tree: per-class subdirectories of
images and/or semicolon-delimited annotation CSVs with columns
Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId. Train and test
portions are returned as one concatenated dataset and then re-split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClass, InvalidParam, IoError, MalformedCsv, UnknownClass

__all__ = [
    "LabeledDataset",
    "SplitSpec",
    "ingest_gtsrb",
    "stratified_split",
    "class_histogram",
    "write_split_manifest",
    "read_split_manifest",
]

IMAGE_SUFFIXES = (".ppm", ".png")
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class LabeledDataset:
    """Image paths with class indices in [0, num_classes)."""

    items: tuple[tuple[str, int], ...]
    num_classes: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        paths = [p for p, _ in self.items]
        if len(set(paths)) != len(paths):
            raise InvalidParam("dataset paths must be unique")
        for p, c in self.items:
            if not 0 <= c < self.num_classes:
                raise InvalidParam(f"class {c} for {p} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SplitSpec:
    """Ratios (train, val, test) summing to 1, a seed, and the strategy."""

    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise InvalidParam(f"ratios must be 3 non-negative values, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise InvalidParam(f"ratios must sum to 1, got {sum(self.ratios)}")


def _read_annotation_csv(path: Path, num_classes: int | None) -> list[tuple[str, int]]:
    items: list[tuple[str, int]] = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh, delimiter=";")
            header = next(reader, None)
            if header is None:
                return items
            try:
                fn_col = header.index("Filename")
                cls_col = header.index("ClassId")
            except ValueError as exc:
                raise MalformedCsv(f"{path}:1: missing Filename/ClassId columns") from exc
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) <= max(fn_col, cls_col):
                    raise MalformedCsv(f"{path}:{lineno}: expected {len(header)} fields")
                try:
                    cls = int(row[cls_col])
                except ValueError as exc:
                    raise MalformedCsv(
                        f"{path}:{lineno}: ClassId {row[cls_col]!r} is not an integer"
                    ) from exc
                if cls < 0 or (num_classes is not None and cls >= num_classes):
                    raise UnknownClass(
                        f"{path}:{lineno}: ClassId {cls} outside [0, {num_classes})"
                    )
                items.append((str((path.parent / row[fn_col]).resolve()), cls))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return items


def ingest_gtsrb(root, num_classes: int | None = None) -> LabeledDataset:
    """Walk a GTSRB-format tree into one LabeledDataset.

    Directories holding an annotation CSV are read from the CSV; otherwise a
    directory whose name parses as an integer contributes its image files
    under that class index. num_classes bounds the accepted ClassId range;
    when omitted it becomes max seen + 1.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"dataset root {root} is not a directory")
    items: list[tuple[str, int]] = []
    for dirpath in sorted([root, *root.rglob("*")]):
        if not dirpath.is_dir():
            continue
        csvs = sorted(dirpath.glob("*.csv"))
        if csvs:
            for c in csvs:
                items.extend(_read_annotation_csv(c, num_classes))
            continue
        try:
            cls = int(dirpath.name)
        except ValueError:
            continue
        if cls < 0 or (num_classes is not None and cls >= num_classes):
            raise UnknownClass(f"{dirpath}: class directory {cls} outside [0, {num_classes})")
        for img in sorted(dirpath.iterdir()):
            if img.suffix.lower() in IMAGE_SUFFIXES:
                items.append((str(img.resolve()), cls))
    # Duplicates can only come from a CSV row repeating a file; keep first.
    seen: set[str] = set()
    unique = []
    for p, c in items:
        if p not in seen:
            seen.add(p)
            unique.append((p, c))
    if not unique:
        raise IoError(f"no images or annotation CSVs found under {root}")
    c_max = max(c for _, c in unique)
    effective = num_classes if num_classes is not None else c_max + 1
    return LabeledDataset(tuple(sorted(unique)), effective)


def class_histogram(ds: LabeledDataset) -> np.ndarray:
    """Per-class item counts, length num_classes."""
    counts = np.zeros(ds.num_classes, dtype=np.int64)
    for _, c in ds.items:
        counts[c] += 1
    return counts


def _allocate(m: int, ratios) -> list[int]:
    # Floor allocation, remainders to the largest fractional parts; ties go
    # train, then val, then test.
    exact = [m * r for r in ratios]
    floors = [int(np.floor(e)) for e in exact]
    rem = m - sum(floors)
    order = sorted(range(3), key=lambda i: (-(exact[i] - floors[i]), i))
    for i in order[:rem]:
        floors[i] += 1
    return floors


def stratified_split(
    ds: LabeledDataset, spec: SplitSpec
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Split into (train, val, test), per class when stratified.

    Items are sorted by path, then shuffled with a per-class seeded
    generator, so the result is independent of ingestion order and exactly
    reproducible per seed. Per-class split counts differ from the exact
    ratio share by less than 1.
    """
    buckets: tuple[list, list, list] = ([], [], [])
    if spec.stratified:
        for c in range(ds.num_classes):
            members = sorted((p for p, cc in ds.items if cc == c))
            if not members:
                raise EmptyClass(f"class {c} has no items")
            rng = np.random.default_rng([spec.seed, c])
            perm = rng.permutation(len(members))
            shuffled = [members[i] for i in perm]
            n_train, n_val, _ = _allocate(len(members), spec.ratios)
            for idx, p in enumerate(shuffled):
                if idx < n_train:
                    buckets[0].append((p, c))
                elif idx < n_train + n_val:
                    buckets[1].append((p, c))
                else:
                    buckets[2].append((p, c))
    else:
        members = sorted(ds.items)
        rng = np.random.default_rng(spec.seed)
        perm = rng.permutation(len(members))
        shuffled = [members[i] for i in perm]
        n_train, n_val, _ = _allocate(len(members), spec.ratios)
        buckets[0].extend(shuffled[:n_train])
        buckets[1].extend(shuffled[n_train : n_train + n_val])
        buckets[2].extend(shuffled[n_train + n_val :])
    return tuple(
        LabeledDataset(tuple(sorted(b)), ds.num_classes, ds.class_names) for b in buckets
    )


def write_split_manifest(path, splits: dict[str, LabeledDataset]) -> None:
    """CSV manifest with columns path,class,split; rows sorted by path."""
    rows = []
    for name, ds in splits.items():
        if name not in SPLIT_NAMES:
            raise InvalidParam(f"split name must be one of {SPLIT_NAMES}, got {name!r}")
        rows.extend((p, c, name) for p, c in ds.items)
    rows.sort()
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "class", "split"])
        writer.writerows(rows)


def read_split_manifest(path, num_classes: int | None = None) -> dict[str, LabeledDataset]:
    """Read back a manifest written by write_split_manifest."""
    per_split: dict[str, list[tuple[str, int]]] = {name: [] for name in SPLIT_NAMES}
    try:
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["path", "class", "split"]:
                raise MalformedCsv(f"{path}:1: expected header path,class,split")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3 or row[2] not in SPLIT_NAMES:
                    raise MalformedCsv(f"{path}:{lineno}: expected path,class,split row")
                try:
                    cls = int(row[1])
                except ValueError as exc:
                    raise MalformedCsv(f"{path}:{lineno}: class {row[1]!r} not an integer") from exc
                per_split[row[2]].append((row[0], cls))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    all_classes = [c for rows in per_split.values() for _, c in rows]
    if not all_classes:
        raise MalformedCsv(f"{path}: manifest has no rows")
    effective = num_classes if num_classes is not None else max(all_classes) + 1
    return {
        name: LabeledDataset(tuple(sorted(rows)), effective)
        for name, rows in per_split.items()
    }
