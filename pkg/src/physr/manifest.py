"""Dataset manifest: LR/HR pair records, normalization stats and the train/test split."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FieldSequence, NormStats, load_field, save_field
from .degrade import DegradeSpec
from .errors import DataError
from .pde import PDESystem

MANIFEST_VERSION = 1


@dataclass
class SamplePair:
    name: str
    lr: FieldSequence
    hr: FieldSequence
    seed: int | None = None
    trimmed: int = 0


def check_pair(lr: FieldSequence, hr: FieldSequence, spec: DegradeSpec, name: str = "sample") -> None:
    want_sizes = tuple(n * spec.r_s for n in lr.grid.sizes)
    if hr.grid.sizes != want_sizes:
        raise DataError(f"{name}: HR sizes {hr.grid.sizes} != LR sizes {lr.grid.sizes} x r_s={spec.r_s}")
    if hr.n_frames != spec.hr_frames(lr.n_frames):
        raise DataError(
            f"{name}: HR has {hr.n_frames} frames, expected r_t*(T_lr-1)+1 = {spec.hr_frames(lr.n_frames)}"
        )
    if lr.channel_names != hr.channel_names:
        raise DataError(f"{name}: channel labels differ between LR and HR")


def split_indices(n: int, ratio: float = 0.7, seed: int = 0) -> tuple[list[int], list[int]]:
    if n < 2:
        raise DataError("need at least two samples to split")
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return sorted(int(i) for i in order[:n_train]), sorted(int(i) for i in order[n_train:])


@dataclass
class DatasetManifest:
    samples: list[SamplePair]
    pde: PDESystem
    degrade: DegradeSpec
    norm_stats: NormStats
    train: list[int]
    test: list[int]
    split_ratio: float = 0.7
    split_seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.verify()

    def verify(self) -> None:
        ids = sorted(self.train + self.test)
        if ids != list(range(len(self.samples))):
            raise DataError("split: train/test assignment must be disjoint and cover every sample")
        for s in self.samples:
            check_pair(s.lr, s.hr, self.degrade, s.name)
            if s.hr.channel_names != self.pde.channels:
                raise DataError(f"{s.name}: channels {s.hr.channel_names} do not match {self.pde.kind}")

    def subset(self, which: str) -> list[SamplePair]:
        idx = {"train": self.train, "test": self.test}[which]
        return [self.samples[i] for i in idx]

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "pde": self.pde.to_dict(),
            "degrade": self.degrade.to_dict(),
            "norm_stats": self.norm_stats.to_dict(),
            "split": {"ratio": self.split_ratio, "seed": self.split_seed, "train": self.train, "test": self.test},
            "samples": [
                {"name": s.name, "lr": f"lr/{s.name}.fld", "hr": f"hr/{s.name}.fld", "seed": s.seed, "trimmed": s.trimmed}
                for s in self.samples
            ],
            "extra": self.extra,
        }

    def save(self, directory) -> Path:
        root = Path(directory)
        (root / "lr").mkdir(parents=True, exist_ok=True)
        (root / "hr").mkdir(parents=True, exist_ok=True)
        for s in self.samples:
            save_field(s.lr.astype(np.float32), root / "lr" / f"{s.name}.fld")
            save_field(s.hr.astype(np.float32), root / "hr" / f"{s.name}.fld")
        path = root / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from None
        if d.get("version") != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version {d.get('version')}")
        root = path.parent
        samples = []
        for rec in d["samples"]:
            for key in ("lr", "hr"):
                if not (root / rec[key]).exists():
                    raise DataError(f"{path}: missing field file {root / rec[key]}")
            samples.append(
                SamplePair(rec["name"], load_field(root / rec["lr"]), load_field(root / rec["hr"]), rec.get("seed"), rec.get("trimmed", 0))
            )
        split = d["split"]
        return cls(
            samples,
            PDESystem.from_dict(d["pde"]),
            DegradeSpec.from_dict(d["degrade"]),
            NormStats.from_dict(d["norm_stats"]),
            list(split["train"]),
            list(split["test"]),
            split.get("ratio", 0.7),
            split.get("seed", 0),
            d.get("extra", {}),
        )


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
