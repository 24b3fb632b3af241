"""HR -> LR degradation: temporal striding plus spatial block-mean blur."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FieldSequence, GridSpec
from .errors import ConfigError, DataError

BLURS = ("block_mean", "none")


@dataclass(frozen=True)
class DegradeSpec:
    r_t: int = 4
    r_s: int = 8
    blur: str = "block_mean"

    def __post_init__(self):
        if int(self.r_t) != self.r_t or int(self.r_s) != self.r_s or self.r_t < 1 or self.r_s < 1:
            raise ConfigError(f"r_t and r_s must be positive integers, got {self.r_t}, {self.r_s}")
        if self.blur not in BLURS:
            raise ConfigError(f"blur must be one of {BLURS}, got {self.blur!r}")

    def to_dict(self) -> dict:
        return {"r_t": self.r_t, "r_s": self.r_s, "blur": self.blur}

    @classmethod
    def from_dict(cls, d: dict) -> "DegradeSpec":
        return cls(int(d["r_t"]), int(d["r_s"]), d.get("blur", "block_mean"))

    def lr_frames(self, hr_frames: int) -> int:
        return (hr_frames - 1) // self.r_t + 1

    def hr_frames(self, lr_frames: int) -> int:
        return self.r_t * (lr_frames - 1) + 1

    def lr_offset(self) -> float:
        """Position of an LR node inside its block, in HR grid steps."""
        return (self.r_s - 1) / 2 if self.blur == "block_mean" else 0.0

    def lr_grid(self, hr: GridSpec) -> GridSpec:
        off = self.lr_offset()
        return GridSpec(
            tuple(n // self.r_s for n in hr.sizes),
            tuple(h * self.r_s for h in hr.spacing),
            tuple(o + off * h for o, h in zip(hr.origin, hr.spacing)),
        )

    def check(self, hr: FieldSequence) -> None:
        bad = [n for n in hr.grid.sizes if n % self.r_s]
        if bad:
            raise DataError(
                f"degrade: HR spatial sizes {hr.grid.sizes} not divisible by r_s={self.r_s}; "
                f"trim or pad each axis to a multiple of {self.r_s}"
            )
        extra = (hr.n_frames - 1) % self.r_t
        if extra:
            raise DataError(
                f"degrade: HR frame count {hr.n_frames} is not 1 mod r_t={self.r_t}; "
                f"trim {extra} trailing frame(s) (see trim_frames)"
            )


def trim_frames(hr: FieldSequence, r_t: int) -> tuple[FieldSequence, int]:
    """Drop trailing frames so the count is ``r_t * k + 1``; returns the number dropped."""
    extra = (hr.n_frames - 1) % r_t
    if extra == 0:
        return hr, 0
    return hr.replace(values=hr.values[: hr.n_frames - extra]), extra


def block_mean(values: np.ndarray, r: int, m: int) -> np.ndarray:
    """Mean over non-overlapping ``r**m`` blocks of the trailing ``m`` axes."""
    lead = values.shape[: values.ndim - m]
    shape = list(lead)
    for n in values.shape[values.ndim - m :]:
        shape += [n // r, r]
    blocks = values.reshape(shape)
    axes = tuple(len(lead) + 2 * i + 1 for i in range(m))
    return blocks.mean(axis=axes)


def degrade(hr: FieldSequence, spec: DegradeSpec) -> FieldSequence:
    spec.check(hr)
    m = hr.grid.spatial_dims
    vals = np.asarray(hr.values)[:: spec.r_t]
    if spec.blur == "block_mean":
        out = block_mean(vals, spec.r_s, m)
    else:
        out = vals[(slice(None), slice(None)) + (slice(None, None, spec.r_s),) * m]
    return FieldSequence(
        np.ascontiguousarray(out).astype(vals.dtype), hr.dt * spec.r_t, spec.lr_grid(hr.grid), hr.channel_names
    )


def pair_manifest(hr_corpus, spec: DegradeSpec, pde, split_ratio: float = 0.7, seed: int = 0, names=None, seeds=None):
    """Degrade every HR sample, pool normalization stats over the HR corpus and split 70/30."""
    from .core import compute_norm_stats
    from .manifest import DatasetManifest, SamplePair, split_indices

    if not hr_corpus:
        raise DataError("pair_manifest: empty corpus")
    ref = hr_corpus[0]
    for i, hr in enumerate(hr_corpus):
        if hr.values.shape != ref.values.shape or hr.grid != ref.grid:
            raise DataError(f"pair_manifest: sample {i} shape {hr.values.shape} differs from {ref.values.shape}")
    names = names or [f"{i:04d}" for i in range(len(hr_corpus))]
    seeds = seeds or [None] * len(hr_corpus)
    samples = []
    trimmed_corpus = []
    for name, s, hr in zip(names, seeds, hr_corpus):
        hr, dropped = trim_frames(hr, spec.r_t)
        trimmed_corpus.append(hr)
        samples.append(SamplePair(name, degrade(hr, spec), hr, s, dropped))
    train, test = split_indices(len(samples), split_ratio, seed)
    return DatasetManifest(
        samples, pde, spec, compute_norm_stats(trimmed_corpus), train, test, split_ratio, seed
    )
