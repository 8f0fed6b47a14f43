"""Synthetic RRUFF-style spectra for demos and tests.

Each class owns a handful of Lorentzian bands. Specimens jitter band
positions, widths and heights; RAW files add a smooth fluorescence
background and shot-like noise, PROCESSED files carry only mild noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import Kind, RawCorpus, Spectrum, _hash_entries, serialize_spectrum
from .io_utils import atomic_write_text
from .preprocess import PreprocessConfig, SpectralDataset, build_dataset


@dataclass(frozen=True)
class SyntheticConfig:
    n_classes: int = 6
    per_class: int = 10
    bands: tuple = (3, 6)
    band_jitter: float = 2.0
    width_range: tuple = (4.0, 12.0)
    noise: float = 0.01
    fluorescence: float = 1.5
    shift_lo: float = 150.0
    shift_hi: float = 1700.0
    step: float = 1.7
    seed: int = 0


def _class_bands(cfg: SyntheticConfig, rng):
    out = []
    for _ in range(cfg.n_classes):
        k = int(rng.integers(cfg.bands[0], cfg.bands[1] + 1))
        centers = np.sort(rng.uniform(220, 1560, k))
        widths = rng.uniform(*cfg.width_range, k)
        heights = rng.uniform(0.2, 1.0, k)
        heights[rng.integers(k)] = 1.0
        out.append((centers, widths, heights))
    return out


def _spectrum_values(x, bands, cfg, kind, rng):
    centers, widths, heights = bands
    c = centers + rng.normal(0, cfg.band_jitter, centers.size)
    w = widths * rng.uniform(0.85, 1.15, widths.size)
    h = heights * rng.uniform(0.7, 1.3, heights.size)
    y = (h[:, None] / (1.0 + ((x[None, :] - c[:, None]) / w[:, None]) ** 2)).sum(0)
    if kind is Kind.RAW:
        t = (x - x[0]) / (x[-1] - x[0])
        a, b = rng.uniform(0.2, 1.0, 2) * cfg.fluorescence
        y = y + a * np.exp(-((t - rng.uniform(0.3, 0.9)) ** 2) / 0.3) + b * t
        y = y + rng.normal(0, 3 * cfg.noise, x.size) * np.sqrt(np.abs(y) + 0.1)
    else:
        y = y + rng.normal(0, cfg.noise, x.size)
    return 1000.0 * y


def synthetic_spectra(cfg: SyntheticConfig = SyntheticConfig(), kind: Kind = Kind.PROCESSED) -> list[Spectrum]:
    rng = np.random.default_rng(cfg.seed)
    bands = _class_bands(cfg, rng)
    x = np.arange(cfg.shift_lo, cfg.shift_hi, cfg.step)
    out = []
    for c in range(cfg.n_classes):
        name = f"Synthite{c:03d}"
        for i in range(cfg.per_class):
            rid = f"R{c:03d}{i:03d}"
            suffix = "Raman_Data_RAW" if kind is Kind.RAW else "Raman_Data_Processed"
            path = f"{name}__{rid}__Raman__{suffix}__{i}.txt"
            y = _spectrum_values(x, bands[c], cfg, kind, rng)
            out.append(Spectrum(name, rid, kind, x.copy(), y, path, {"LOCALITY": "synthetic"}))
    return out


def write_synthetic_corpus(root, cfg: SyntheticConfig = SyntheticConfig(), kinds=(Kind.RAW, Kind.PROCESSED)) -> list[Path]:
    """Write RRUFF-format text files under ``root``; returns the paths."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in kinds:
        for s in synthetic_spectra(cfg, Kind.parse(kind)):
            p = root / s.source_path
            atomic_write_text(p, serialize_spectrum(s))
            paths.append(p)
    return paths


def synthetic_dataset(cfg: SyntheticConfig = SyntheticConfig(), kind: Kind = Kind.PROCESSED,
                      pre: PreprocessConfig | None = None) -> SpectralDataset:
    """In-memory corpus through the standard preprocessing pipeline."""
    spectra = synthetic_spectra(cfg, kind)
    corpus = RawCorpus(tuple(spectra), _hash_entries((s.source_path, 0) for s in spectra))
    pre = PreprocessConfig(n_min=min(8, cfg.per_class)) if pre is None else pre
    return build_dataset(corpus, pre)
