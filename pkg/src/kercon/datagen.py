"""Synthetic multi-site regression data and CSV ingestion.

Each subject gets an age, a site and a feature vector made of

* a signal block: a fixed random linear map of low-order Legendre
  polynomials of the normalized age,
* a nuisance block: subject-level noise under a site-specific gain and
  offset (a stand-in for scanner/protocol artifacts),
* isotropic measurement noise on every feature.

Training and internal-test subjects share the training sites; external-test
subjects come from separate, unseen sites.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

__all__ = [
    "SyntheticConfig",
    "Dataset",
    "SPLITS",
    "generate",
    "save_csv",
    "load_csv",
]

SPLITS = ("train", "internal", "external")
_N_AGE_BASIS = 4


@dataclass
class SyntheticConfig:
    n_train: int = 2000
    n_internal_test: int = 500
    n_external_test: int = 500
    n_sites_train: int = 20
    n_sites_external: int = 5
    feature_dim: int = 32
    signal_dim: Optional[int] = None
    age_range: Tuple[float, float] = (6.0, 86.0)
    site_effect_strength: float = 4.0
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.age_range = tuple(float(a) for a in self.age_range)
        lo, hi = self.age_range
        if not lo < hi:
            raise ValueError("age_range min must be < max")
        if self.n_external_test > 0 and self.n_sites_external < 1:
            raise ValueError("n_sites_external must be >= 1 when n_external_test > 0")
        if self.n_sites_train < 1 or (self.n_train + self.n_internal_test) < 1:
            raise ValueError("need at least one training site and subject")
        if self.site_effect_strength < 0 or self.noise_std < 0:
            raise ValueError("site_effect_strength and noise_std must be >= 0")
        sig = self.signal_dim if self.signal_dim is not None else self.feature_dim // 2
        if not 1 <= sig < self.feature_dim:
            raise ValueError("signal_dim must leave room for a nuisance block")

    @property
    def n_signal(self) -> int:
        return self.signal_dim if self.signal_dim is not None else self.feature_dim // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["age_range"] = list(self.age_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown data config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    features: np.ndarray
    ages: np.ndarray
    sites: np.ndarray
    split: np.ndarray
    config: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.ages = np.asarray(self.ages, dtype=float).ravel()
        self.sites = np.asarray(self.sites, dtype=int).ravel()
        self.split = np.asarray(self.split, dtype=str).ravel()
        m = self.features.shape[0]
        if not (self.ages.size == self.sites.size == self.split.size == m):
            raise ValueError("features, ages, sites and split must have the same length")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")
        check_no_leakage(self.sites, self.split)

    def __len__(self):
        return self.features.shape[0]

    def subset(self, split: str) -> "Dataset":
        keep = self.split == split
        return Dataset(self.features[keep], self.ages[keep], self.sites[keep], self.split[keep], self.config)

    def splits(self) -> Dict[str, "Dataset"]:
        return {s: self.subset(s) for s in SPLITS}


def check_no_leakage(sites, split):
    inside = np.unique(sites[(split == "train") | (split == "internal")])
    outside = np.unique(sites[split == "external"])
    leaked = np.intersect1d(inside, outside)
    if leaked.size:
        raise ValueError(f"external split leaks training sites: {leaked.tolist()}")


def _legendre_basis(a):
    # P1..P4 on [-1, 1]
    return np.stack(
        [a, 0.5 * (3 * a**2 - 1), 0.5 * (5 * a**3 - 3 * a), 0.125 * (35 * a**4 - 30 * a**2 + 3)],
        axis=1,
    )


def generate(config: SyntheticConfig) -> Dataset:
    """Draw a dataset; identical configs give identical arrays."""
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    structure_seq, *split_seqs = root.spawn(1 + len(SPLITS))
    structure = np.random.default_rng(structure_seq)

    n_sig = cfg.n_signal
    n_nuis = cfg.feature_dim - n_sig
    n_sites = cfg.n_sites_train + cfg.n_sites_external
    age_map = structure.normal(0.0, 1.0, size=(_N_AGE_BASIS, n_sig))
    site_offset = structure.normal(0.0, 1.0, size=(n_sites, n_nuis))
    site_log_gain = structure.normal(0.0, 0.5, size=(n_sites, n_nuis))

    lo, hi = cfg.age_range
    counts = {"train": cfg.n_train, "internal": cfg.n_internal_test, "external": cfg.n_external_test}
    parts = []
    for name, seq in zip(SPLITS, split_seqs):
        n = counts[name]
        rng = np.random.default_rng(seq)
        ages = rng.uniform(lo, hi, size=n)
        if name == "external":
            sites = rng.integers(cfg.n_sites_train, n_sites, size=n)
        else:
            sites = rng.integers(0, cfg.n_sites_train, size=n)
        a = 2.0 * (ages - lo) / (hi - lo) - 1.0
        signal = _legendre_basis(a) @ age_map
        latent = rng.normal(size=(n, n_nuis))
        s = cfg.site_effect_strength
        nuisance = np.exp(s * site_log_gain[sites]) * latent + s * site_offset[sites]
        feats = np.concatenate([signal, nuisance], axis=1) + cfg.noise_std * rng.normal(size=(n, cfg.feature_dim))
        parts.append((feats, ages, sites, np.full(n, name)))

    feats, ages, sites, split = (np.concatenate(x) for x in zip(*parts))
    return Dataset(feats, ages, sites, split, cfg.to_dict())


def _atomic_write_text(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_csv(dataset: Dataset, path, manifest: bool = True):
    """Write ``site,age,f0..f{d-1},split`` rows; floats are written exactly.

    With ``manifest`` and a known generator config, a ``<name>.json``
    manifest is written next to the CSV.
    """
    path = Path(path)
    d = dataset.features.shape[1]
    header = ["site", "age", *(f"f{j}" for j in range(d)), "split"]
    lines = [",".join(header)]
    for feats, age, site, split in zip(dataset.features, dataset.ages, dataset.sites, dataset.split):
        lines.append(",".join([str(int(site)), repr(float(age)), *(repr(float(v)) for v in feats), str(split)]))
    _atomic_write_text(path, "\n".join(lines) + "\n")
    if manifest and dataset.config is not None:
        doc = {"schema_version": 1, "csv": path.name, "synthetic_config": dataset.config}
        _atomic_write_text(path.with_suffix(".json"), json.dumps(doc, indent=2))


def load_csv(path) -> Dataset:
    """Parse a CSV written by :func:`save_csv` (or any file with that schema)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in ("site", "age", "split", "f0"):
            if col not in header:
                raise ValueError(f"{path}: missing column '{col}'")
        feat_cols = sorted((h for h in header if h.startswith("f") and h[1:].isdigit()), key=lambda h: int(h[1:]))
        expected = [f"f{j}" for j in range(len(feat_cols))]
        if feat_cols != expected:
            gap = next(e for e, f in zip(expected + [None], feat_cols + [None]) if e != f)
            raise ValueError(f"{path}: missing column '{gap}'")
        i_site, i_age, i_split = header.index("site"), header.index("age"), header.index("split")
        i_feats = [header.index(c) for c in feat_cols]
        feats, ages, sites, split = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                sites.append(int(row[i_site]))
                ages.append(float(row[i_age]))
                feats.append([float(row[i]) for i in i_feats])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from None
            tag = row[i_split].strip()
            if tag not in SPLITS:
                raise ValueError(f"{path}:{lineno}: unknown split '{tag}'")
            split.append(tag)
    config = None
    manifest = path.with_suffix(".json")
    if manifest.exists():
        config = json.loads(manifest.read_text()).get("synthetic_config")
    return Dataset(np.array(feats, dtype=float).reshape(len(feats), len(feat_cols)), ages, sites, split, config)
