"""Parsing of RRUFF spectrum exports and persisted fold manifests."""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EmptyCorpus,
    InconsistentFoldCount,
    MalformedDataLine,
    ManifestError,
    MissingHeader,
    NonMonotonicShift,
    ParseFailures,
    UnknownKindSuffix,
)

log = logging.getLogger(__name__)

SPLIT_MAGIC = "# spectral-forge split v1"
_SEP = re.compile(r"[,\s]+")


class Kind(str, enum.Enum):
    RAW = "RAW"
    PROCESSED = "PROCESSED"

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, Kind):
            return value
        v = value.strip().upper()
        if v in ("RAW",):
            return cls.RAW
        if v in ("PROCESSED", "CLEAN"):
            return cls.PROCESSED
        raise ValueError(f"unknown spectrum kind {value!r}")


def kind_from_filename(path: str) -> Kind:
    """RAW/PROCESSED from the RRUFF file-name suffix; contents are never consulted."""
    name = os.path.basename(path)
    if "Raman_Data_RAW" in name:
        return Kind.RAW
    if "Raman_Data_Processed" in name:
        return Kind.PROCESSED
    raise UnknownKindSuffix(path)


@dataclass(frozen=True, eq=False)
class Spectrum:
    mineral_name: str
    rruff_id: str
    kind: Kind
    shifts: np.ndarray
    intensities: np.ndarray
    source_path: str = ""
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.shifts, dtype=np.float64)
        y = np.asarray(self.intensities, dtype=np.float64)
        if s.ndim != 1 or s.shape != y.shape:
            raise ValueError("shifts and intensities must be 1-D and equally long")
        if s.size < 2:
            raise ValueError("a spectrum needs at least 2 points")
        if np.any(np.diff(s) <= 0):
            raise ValueError("shifts must be strictly increasing")
        object.__setattr__(self, "shifts", s)
        object.__setattr__(self, "intensities", y)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.shifts.tolist(), self.intensities.tolist()))

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (
            self.mineral_name == other.mineral_name
            and self.rruff_id == other.rruff_id
            and self.kind == other.kind
            and self.source_path == other.source_path
            and np.array_equal(self.shifts, other.shifts)
            and np.array_equal(self.intensities, other.intensities)
            and dict(self.metadata) == dict(other.metadata)
        )


def parse_spectrum_file(path: str, contents: str | None = None) -> Spectrum:
    """Parse one RRUFF text export.

    Header lines look like ``##KEY=value``; ``##NAMES`` and ``##RRUFFID`` are
    required and every other key is kept in ``metadata``. Data lines hold a
    shift and an intensity separated by a comma and/or whitespace. Parsing
    stops at ``##END=``. A descending shift axis is re-sorted (with a warning);
    a repeated shift is an error.
    """
    kind = kind_from_filename(path)
    if contents is None:
        contents = Path(path).read_text(encoding="utf-8", errors="replace")

    headers: dict[str, str] = {}
    shifts: list[float] = []
    values: list[float] = []
    data_line_files: list[int] = []
    for file_line, raw in enumerate(contents.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("##"):
            key, _, value = line[2:].partition("=")
            key = key.strip()
            if key.upper() == "END":
                break
            headers[key] = value.strip()
            continue
        ordinal = len(shifts) + 1
        parts = [p for p in _SEP.split(line) if p]
        if len(parts) != 2:
            raise MalformedDataLine(ordinal, raw, file_line)
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise MalformedDataLine(ordinal, raw, file_line) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise MalformedDataLine(ordinal, raw, file_line)
        shifts.append(x)
        values.append(y)
        data_line_files.append(file_line)

    for key in ("NAMES", "RRUFFID"):
        if key not in headers:
            raise MissingHeader(key, path)
    if len(shifts) < 2:
        raise MalformedDataLine(len(shifts) + 1, "<fewer than 2 data lines>")

    s = np.asarray(shifts)
    y = np.asarray(values)
    d = np.diff(s)
    if np.any(d < 0):
        if np.all(d < 0):
            log.warning("%s: descending shift axis, re-sorting", path)
        else:
            log.warning("%s: unordered shift axis, re-sorting", path)
        order = np.argsort(s, kind="stable")
        s, y = s[order], y[order]
        d = np.diff(s)
    else:
        order = np.arange(s.size)
    dup = np.flatnonzero(d == 0)
    if dup.size:
        raise NonMonotonicShift(int(order[dup[0] + 1]) + 1)

    meta = {k: v for k, v in headers.items() if k not in ("NAMES", "RRUFFID")}
    return Spectrum(
        mineral_name=headers["NAMES"],
        rruff_id=headers["RRUFFID"],
        kind=kind,
        shifts=s,
        intensities=y,
        source_path=str(path),
        metadata=meta,
    )


def serialize_spectrum(spectrum: Spectrum) -> str:
    """Inverse of :func:`parse_spectrum_file` (shortest round-tripping floats)."""
    lines = [f"##NAMES={spectrum.mineral_name}", f"##RRUFFID={spectrum.rruff_id}"]
    lines += [f"##{k}={v}" for k, v in spectrum.metadata.items()]
    lines += [f"{x!r}, {y!r}" for x, y in zip(spectrum.shifts.tolist(), spectrum.intensities.tolist())]
    lines.append("##END=")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RawCorpus:
    spectra: tuple[Spectrum, ...]
    manifest_hash: str
    failures: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        seen = set()
        for s in self.spectra:
            key = (s.rruff_id, s.kind, s.source_path)
            if key in seen:
                raise ValueError(f"duplicate spectrum {key}")
            seen.add(key)

    def __len__(self):
        return len(self.spectra)

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.spectra:
            counts[s.mineral_name] = counts.get(s.mineral_name, 0) + 1
        return counts

    def subset(self, spectra: Iterable[Spectrum]) -> "RawCorpus":
        spectra = tuple(spectra)
        return RawCorpus(spectra, _hash_entries((s.source_path, -1) for s in spectra), self.failures)


def _hash_entries(entries) -> str:
    h = hashlib.sha256()
    for p, size in entries:
        h.update(f"{p}\t{size}\n".encode())
    return h.hexdigest()


def load_corpus(root_dir: str, kind_filter: "Kind | str", strict: bool = False) -> RawCorpus:
    """Parse every ``*.txt`` under ``root_dir`` whose name matches ``kind_filter``.

    Files are visited in sorted relative-path order. Files that fail to parse
    are listed in ``RawCorpus.failures`` and logged; with ``strict=True`` any
    failure raises :class:`ParseFailures` instead.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise EmptyCorpus(f"not a directory: {root_dir}")
    kind_filter = Kind.parse(kind_filter)
    files = sorted(root.rglob("*.txt"), key=lambda p: p.relative_to(root).as_posix())

    spectra, failures, entries = [], [], []
    for f in files:
        try:
            k = kind_from_filename(f.name)
        except UnknownKindSuffix:
            continue
        if k is not kind_filter:
            continue
        rel = f.relative_to(root).as_posix()
        entries.append((rel, f.stat().st_size))
        try:
            spectra.append(parse_spectrum_file(str(f)))
        except Exception as e:  # collected, never silently dropped
            failures.append((str(f), f"{type(e).__name__}: {e}"))

    if failures:
        if strict:
            raise ParseFailures(failures)
        log.warning("%d of %d files failed to parse", len(failures), len(entries))
    if not spectra:
        raise EmptyCorpus(f"no parseable {kind_filter.value} spectra under {root_dir}")
    return RawCorpus(tuple(spectra), _hash_entries(entries), tuple(failures))


@dataclass(frozen=True)
class SplitEntry:
    source_path: str
    label: str
    fold: int


@dataclass(frozen=True)
class SplitManifest:
    dataset_id: str
    k: int
    entries: tuple[SplitEntry, ...]

    def assignments(self) -> dict[str, int]:
        return {e.source_path: e.fold for e in self.entries}


def persist_split(dataset_id: str, entries: Iterable, path: str, k: int | None = None) -> SplitManifest:
    """Write a fold manifest: one ``source_path<TAB>label<TAB>fold`` line per spectrum.

    ``entries`` yields ``(source_path, label, fold)`` triples or
    :class:`SplitEntry`. ``k`` defaults to ``max(fold) + 1``.
    """
    rows = [e if isinstance(e, SplitEntry) else SplitEntry(str(e[0]), str(e[1]), int(e[2])) for e in entries]
    if not rows:
        raise InconsistentFoldCount("empty split")
    if k is None:
        k = max(r.fold for r in rows) + 1
    seen = set()
    for r in rows:
        if not 0 <= r.fold < k:
            raise InconsistentFoldCount(f"fold {r.fold} outside [0, {k}) for {r.source_path}")
        if r.source_path in seen:
            raise InconsistentFoldCount(f"{r.source_path} assigned twice")
        if "\t" in r.source_path or "\t" in r.label or "\n" in r.source_path + r.label:
            raise ManifestError(f"tab/newline in manifest field: {r.source_path!r}")
        seen.add(r.source_path)

    text = [SPLIT_MAGIC, f"# dataset_id={dataset_id}", f"# k={k}"]
    text += [f"{r.source_path}\t{r.label}\t{r.fold}" for r in rows]
    from .io_utils import atomic_write_text

    atomic_write_text(path, "\n".join(text) + "\n")
    return SplitManifest(dataset_id, k, tuple(rows))


def load_split(path: str, check_files: bool = True, root: str | None = None) -> SplitManifest:
    """Reload a manifest written by :func:`persist_split`.

    With ``check_files`` every referenced spectrum must exist (relative paths
    resolve against ``root``, default the manifest's directory).
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != SPLIT_MAGIC:
        raise ManifestError(f"{path}: missing '{SPLIT_MAGIC}' header")
    meta, rows = {}, []
    for n, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{n}: expected 3 tab-separated fields")
        try:
            fold = int(parts[2])
        except ValueError:
            raise ManifestError(f"{path}:{n}: bad fold {parts[2]!r}") from None
        rows.append(SplitEntry(parts[0], parts[1], fold))
    k = int(meta.get("k", max((r.fold for r in rows), default=-1) + 1))
    for r in rows:
        if not 0 <= r.fold < k:
            raise InconsistentFoldCount(f"fold {r.fold} outside [0, {k}) for {r.source_path}")
    if check_files:
        base = Path(root) if root is not None else Path(path).parent
        for r in rows:
            p = Path(r.source_path)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                raise ManifestError(f"manifest references missing file: {r.source_path}")
    return SplitManifest(meta.get("dataset_id", ""), k, tuple(rows))
