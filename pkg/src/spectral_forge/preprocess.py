"""Batch preprocessing: pruning, resampling onto the fixed grid, normalization,
shifts and peak-preserving augmentations.

Binary dataset layout (all integers little-endian)::

    b"SFDSET1\\n"                 8-byte magic
    uint32 H                      length of the JSON header
    H bytes                       UTF-8 JSON header (rows, cols, grid, classes, ...)
    int32[rows]                   class index per row
    float32[rows * cols]          intensities, row-major

See ``docs/formats.md`` for the header keys.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConstantRow, DatasetFormatError, DegenerateSpectrum, EmptyAfterPruning
from .ingest import Kind, RawCorpus, Spectrum
from .io_utils import atomic_write_bytes

log = logging.getLogger(__name__)

DATASET_MAGIC = b"SFDSET1\n"


class NormMode(str, enum.Enum):
    MAX_ABS = "MAX_ABS"
    MIN_MAX = "MIN_MAX"


@dataclass(frozen=True)
class PreprocessConfig:
    n_min: int = 8
    range_lo: float = 200.0
    range_hi: float = 1600.0
    grid_step: float = 1.0
    target_len: int = 1392
    norm_mode: NormMode = NormMode.MIN_MAX
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "norm_mode", NormMode(self.norm_mode))
        if self.n_min < 1:
            raise ValueError("n_min must be >= 1")
        if self.grid_step <= 0 or self.range_hi <= self.range_lo:
            raise ValueError("empty shift range")
        if self.full_len < self.target_len:
            raise ValueError(f"grid has {self.full_len} points, fewer than target_len={self.target_len}")
        if self.target_len % 16:
            raise ValueError("target_len must be a multiple of 16")

    @property
    def full_len(self) -> int:
        return int(math.floor((self.range_hi - self.range_lo) / self.grid_step + 1e-9)) + 1

    @property
    def grid(self) -> np.ndarray:
        return self.range_lo + self.grid_step * np.arange(self.target_len, dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["norm_mode"] = self.norm_mode.value
        return d

    @classmethod
    def from_dict(cls, d) -> "PreprocessConfig":
        known = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                continue
            if k in ("n_min", "target_len", "seed"):
                v = int(v)
            elif k in ("range_lo", "range_hi", "grid_step"):
                v = float(v)
            kw[k] = v
        return cls(**kw)


# -- row operations ---------------------------------------------------------

def resample(spectrum, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Linear interpolation onto the fixed grid, zero outside the measured span.

    ``spectrum`` is a :class:`Spectrum` or a ``(shifts, intensities)`` pair.
    The full ``range_lo..range_hi`` grid is built and then truncated to its
    first ``target_len`` points.
    """
    if isinstance(spectrum, Spectrum):
        x, y = spectrum.shifts, spectrum.intensities
    else:
        x, y = (np.asarray(a, dtype=np.float64) for a in spectrum)
    inside = np.count_nonzero((x >= cfg.range_lo) & (x <= cfg.range_hi))
    if inside < 2:
        raise DegenerateSpectrum(f"only {inside} point(s) inside [{cfg.range_lo}, {cfg.range_hi}]")
    full = cfg.range_lo + cfg.grid_step * np.arange(cfg.full_len, dtype=np.float64)
    out = np.interp(full, x, y, left=0.0, right=0.0)
    return out[: cfg.target_len]


def as_spectrum(row: np.ndarray, cfg: PreprocessConfig = PreprocessConfig(), name="", rruff_id="") -> Spectrum:
    return Spectrum(name, rruff_id, Kind.PROCESSED, cfg.grid, np.asarray(row, dtype=np.float64))


def normalize(row: np.ndarray, mode: "NormMode | str" = NormMode.MIN_MAX) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    mode = NormMode(mode)
    if mode is NormMode.MAX_ABS:
        scale = np.max(np.abs(row))
        if scale == 0:
            raise ConstantRow("all-zero row cannot be MAX_ABS normalized")
        return row / scale
    lo, hi = row.min(), row.max()
    if not hi > lo:
        raise ConstantRow("constant row cannot be MIN_MAX normalized")
    out = (row - lo) / (hi - lo)
    # pin the extremes exactly despite rounding
    out[row == lo] = 0.0
    out[row == hi] = 1.0
    return out


def shift_spectrum(row: np.ndarray, delta: int) -> np.ndarray:
    """Translate along the last axis by ``delta`` grid steps, zero-filling."""
    row = np.asarray(row)
    n = row.shape[-1]
    delta = int(delta)
    if abs(delta) >= n:
        raise ValueError(f"|delta|={abs(delta)} must be < {n}")
    out = np.zeros_like(row)
    if delta > 0:
        out[..., delta:] = row[..., : n - delta]
    elif delta < 0:
        out[..., :delta] = row[..., -delta:]
    else:
        out[...] = row
    return out


# -- augmentation -------------------------------------------------------------

class AugOp(str, enum.Enum):
    ADD_TANH = "ADD_TANH"
    ADD_COS = "ADD_COS"
    GAUSS_NOISE = "GAUSS_NOISE"
    SUBSAMPLE_INTERP = "SUBSAMPLE_INTERP"


@dataclass(frozen=True)
class AugmentationSpec:
    ops: tuple = (AugOp.ADD_TANH, AugOp.ADD_COS, AugOp.GAUSS_NOISE, AugOp.SUBSAMPLE_INTERP)
    weights: tuple = (1.0, 1.0, 1.0, 2.0)
    rng_seed: int = 0
    alpha: float = 0.2  # ADD_TANH / ADD_COS amplitude, in units of mean(row)
    beta: float = 0.02  # GAUSS_NOISE sigma, in units of mean(row)
    rho: float = 0.5  # SUBSAMPLE_INTERP kept fraction

    def __post_init__(self):
        ops = tuple(AugOp(o) for o in self.ops)
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "weights", w)
        if len(ops) != len(w) or not ops:
            raise ValueError("ops and weights must be non-empty and equally long")
        if any(x < 0 for x in w) or sum(w) <= 0:
            raise ValueError("weights must be nonnegative with a positive sum")
        if AugOp.SUBSAMPLE_INTERP in ops:
            ws = w[ops.index(AugOp.SUBSAMPLE_INTERP)]
            if any(x > ws for x in w):
                raise ValueError("SUBSAMPLE_INTERP must carry the largest weight")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.weights)
        return w / w.sum()


def apply_aug_op(row: np.ndarray, op: AugOp, rng: np.random.Generator, spec: AugmentationSpec = AugmentationSpec(), *, period=None) -> np.ndarray:
    """Apply one augmentation. Random parameters come from ``rng``."""
    row = np.asarray(row, dtype=np.float64)
    n = row.shape[-1]
    scale = abs(float(row.mean()))
    idx = np.arange(n, dtype=np.float64)
    op = AugOp(op)
    if op is AugOp.ADD_TANH:
        center = rng.uniform(0, n)
        width = rng.uniform(n / 8, n / 2)
        sign = rng.choice((-1.0, 1.0))
        return row + sign * spec.alpha * scale * np.tanh((idx - center) / width)
    if op is AugOp.ADD_COS:
        p = rng.uniform(n / 2, 2 * n) if period is None else float(period)
        phase = rng.uniform(0, 2 * np.pi)
        return row + spec.alpha * scale * np.cos(2 * np.pi * idx / p + phase)
    if op is AugOp.GAUSS_NOISE:
        if spec.beta == 0:
            return row.copy()
        return row + rng.normal(0.0, spec.beta * scale, size=n)
    keep_n = max(2, int(round(spec.rho * n)))
    inner = rng.choice(np.arange(1, n - 1), size=max(0, keep_n - 2), replace=False)
    keep = np.sort(np.concatenate(([0, n - 1], inner)))
    return np.interp(idx, idx[keep], row[keep])


def augment(row: np.ndarray, spec: AugmentationSpec = AugmentationSpec(), rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply one weight-sampled augmentation.

    Without ``rng`` a fresh generator seeded from ``spec.rng_seed`` is used,
    so the call is a pure function of ``(row, spec)``.
    """
    if rng is None:
        rng = np.random.default_rng(spec.rng_seed)
    op = spec.ops[rng.choice(len(spec.ops), p=spec.probabilities)]
    return apply_aug_op(row, op, rng, spec)


def augment_batch(X: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator, prob: float = 1.0) -> np.ndarray:
    """Augment each row of ``X`` (shape ``[..., n]``) independently with probability ``prob``."""
    flat = X.reshape(-1, X.shape[-1])
    out = flat.astype(np.float64, copy=True)
    for i in range(flat.shape[0]):
        if prob >= 1.0 or rng.random() < prob:
            out[i] = augment(flat[i], spec, rng)
    return out.reshape(X.shape).astype(X.dtype, copy=False)


# -- datasets -----------------------------------------------------------------

def prune_classes(corpus: RawCorpus, n_min: int) -> RawCorpus:
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    counts = corpus.class_counts()
    kept = [s for s in corpus.spectra if counts[s.mineral_name] >= n_min]
    if not kept:
        raise EmptyAfterPruning(f"no class has >= {n_min} spectra")
    if len(kept) == len(corpus.spectra):
        return corpus
    return corpus.subset(kept)


@dataclass(frozen=True, eq=False)
class SpectralDataset:
    grid: np.ndarray
    rows: np.ndarray
    labels: np.ndarray
    class_names: tuple
    provenance: tuple = ()
    kind: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[0] != labels.shape[0] or rows.shape[1] != len(self.grid):
            raise ValueError("rows/labels/grid shape mismatch")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValueError("label index outside class table")
        if not np.all(np.isfinite(rows)):
            raise ValueError("non-finite intensity in dataset")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=np.float64))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return self.rows.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.rows.astype("<f4").tobytes())
        h.update(self.labels.astype("<i4").tobytes())
        h.update("\n".join(self.class_names).encode())
        return h.hexdigest()[:16]

    def take(self, idx) -> "SpectralDataset":
        """Rows ``idx`` with the class table re-indexed to the classes present."""
        idx = np.asarray(idx)
        present = np.unique(self.labels[idx])
        remap = np.full(self.num_classes, -1)
        remap[present] = np.arange(present.size)
        prov = tuple(self.provenance[i] for i in idx) if self.provenance else ()
        return SpectralDataset(
            self.grid, self.rows[idx], remap[self.labels[idx]],
            tuple(self.class_names[c] for c in present), prov, self.kind, dict(self.config),
        )


def build_dataset(corpus: RawCorpus, cfg: PreprocessConfig = PreprocessConfig()) -> SpectralDataset:
    """Prune, resample, normalize. Spectra that cannot be resampled or
    normalized are dropped with a warning and pruning is re-applied."""
    corpus = prune_classes(corpus, cfg.n_min)
    rows, keep = [], []
    for s in corpus.spectra:
        try:
            rows.append(normalize(resample(s, cfg), cfg.norm_mode))
            keep.append(s)
        except (DegenerateSpectrum, ConstantRow) as e:
            log.warning("dropping %s: %s", s.source_path, e)
    if len(keep) != len(corpus.spectra):
        counts: dict[str, int] = {}
        for s in keep:
            counts[s.mineral_name] = counts.get(s.mineral_name, 0) + 1
        pairs = [(s, r) for s, r in zip(keep, rows) if counts[s.mineral_name] >= cfg.n_min]
        if not pairs:
            raise EmptyAfterPruning("nothing left after dropping degenerate spectra")
        keep, rows = [p[0] for p in pairs], [p[1] for p in pairs]
    names = sorted({s.mineral_name for s in keep})
    index = {n: i for i, n in enumerate(names)}
    kinds = {s.kind.value for s in keep}
    return SpectralDataset(
        grid=cfg.grid,
        rows=np.stack(rows),
        labels=np.array([index[s.mineral_name] for s in keep]),
        class_names=tuple(names),
        provenance=tuple(s.source_path for s in keep),
        kind=",".join(sorted(kinds)),
        config=cfg.to_dict(),
    )


def save_dataset(ds: SpectralDataset, path: str) -> None:
    step = float(ds.grid[1] - ds.grid[0]) if len(ds.grid) > 1 else 1.0
    header = {
        "version": 1,
        "rows": len(ds),
        "cols": int(ds.rows.shape[1]),
        "grid_lo": float(ds.grid[0]),
        "grid_step": step,
        "class_names": list(ds.class_names),
        "provenance": list(ds.provenance),
        "kind": ds.kind,
        "config": ds.config,
        "label_dtype": "<i4",
        "dtype": "<f4",
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join([
        DATASET_MAGIC,
        struct.pack("<I", len(hb)),
        hb,
        ds.labels.astype("<i4").tobytes(),
        ds.rows.astype("<f4").tobytes(),
    ])
    atomic_write_bytes(path, blob)


def load_dataset(path: str) -> SpectralDataset:
    blob = Path(path).read_bytes()
    if not blob.startswith(DATASET_MAGIC):
        raise DatasetFormatError(f"{path}: bad magic")
    off = len(DATASET_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off: off + hlen].decode("utf-8"))
    off += hlen
    n, m = header["rows"], header["cols"]
    need = off + 4 * n + 4 * n * m
    if len(blob) != need:
        raise DatasetFormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    labels = np.frombuffer(blob, dtype="<i4", count=n, offset=off).astype(np.int64)
    rows = np.frombuffer(blob, dtype="<f4", count=n * m, offset=off + 4 * n).reshape(n, m)
    grid = header["grid_lo"] + header["grid_step"] * np.arange(m, dtype=np.float64)
    return SpectralDataset(grid, rows.astype(np.float32), labels, tuple(header["class_names"]),
                           tuple(header.get("provenance", ())), header.get("kind", ""), header.get("config", {}))


def class_weights(labels: Sequence[int], num_classes: int) -> np.ndarray:
    """Inverse-frequency weights ``N / (C * count_c)``; absent classes get the weight of a singleton."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    present = max(1, np.count_nonzero(counts))
    return labels.size / (present * np.maximum(counts, 1.0))
