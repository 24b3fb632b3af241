"""Grid/field data model, the binary field container and normalization."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

MAGIC = b"PHYSRFLD"
FORMAT_VERSION = 1
MIN_NODES = 5


@dataclass(frozen=True)
class GridSpec:
    """Uniform Cartesian grid. Spatial axis ``i`` of a field runs along ``sizes[i]``."""

    sizes: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        spacing = tuple(float(h) for h in self.spacing)
        origin = (0.0,) * len(sizes) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(sizes) not in (2, 3):
            raise DataError(f"grid: spatial_dims must be 2 or 3, got {len(sizes)}")
        if len(spacing) != len(sizes) or len(origin) != len(sizes):
            raise DataError("grid: sizes, spacing and origin must have one entry per axis")
        if any(s < MIN_NODES for s in sizes):
            raise DataError(f"grid: sizes {sizes} must be >= {MIN_NODES} on every axis")
        if not all(np.isfinite(h) and h > 0 for h in spacing):
            raise DataError(f"grid: spacing {spacing} must be positive on every axis")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def uniform(cls, n: int, m: int = 2, dx: float = 1.0) -> "GridSpec":
        return cls((n,) * m, (dx,) * m)

    @property
    def spatial_dims(self) -> int:
        return len(self.sizes)

    @property
    def lengths(self) -> tuple[float, ...]:
        """Periodic domain extent N*dx per axis."""
        return tuple(n * h for n, h in zip(self.sizes, self.spacing))

    def coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.sizes[axis]) * self.spacing[axis]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*(self.coords(i) for i in range(self.spatial_dims)), indexing="ij")


@dataclass(frozen=True, eq=False)
class FieldSequence:
    """Time-ordered multichannel field with layout ``[time, channel, *space]``."""

    values: np.ndarray
    dt: float
    grid: GridSpec
    channel_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values)
        names = tuple(self.channel_names)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "dt", float(self.dt))
        m = self.grid.spatial_dims
        if values.ndim != 2 + m:
            raise DataError(f"values: expected {2 + m} axes [time, channel, space...], got shape {values.shape}")
        if values.shape[1] != len(names):
            raise DataError(f"channel_names: {len(names)} labels for {values.shape[1]} channels")
        if tuple(values.shape[2:]) != self.grid.sizes:
            raise DataError(f"grid: sizes {self.grid.sizes} do not match spatial shape {values.shape[2:]}")
        if values.shape[0] < 1:
            raise DataError("values: at least one frame required")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DataError(f"dt: must be positive and finite, got {self.dt}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"values: non-finite entry at index {tuple(int(i) for i in bad)}")
        values = values.view()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.dt

    def replace(self, values=None, dt=None, grid=None, channel_names=None) -> "FieldSequence":
        return FieldSequence(
            self.values if values is None else values,
            self.dt if dt is None else dt,
            self.grid if grid is None else grid,
            self.channel_names if channel_names is None else channel_names,
        )

    def astype(self, dtype) -> "FieldSequence":
        return self.replace(values=self.values.astype(dtype))

    def equals(self, other: "FieldSequence") -> bool:
        """Bit-exact comparison of payload and metadata."""
        return (
            self.values.dtype == other.values.dtype
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
            and self.dt == other.dt
            and self.grid == other.grid
            and self.channel_names == other.channel_names
        )


# ---------------------------------------------------------------------------
# binary container


def save_field(seq: FieldSequence, path) -> None:
    """Write ``seq`` as little-endian float32; values must survive the cast unchanged."""
    values = np.asarray(seq.values)
    payload = values.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise DataError("values: non-finite entry after float32 cast")
    if values.dtype != np.float32 and not np.array_equal(payload.astype(values.dtype), values):
        raise DataError("values: not exactly representable in float32; cast with .astype(np.float32) first")
    m = seq.grid.spatial_dims
    header = [MAGIC, struct.pack("<BB", FORMAT_VERSION, 2 + m)]
    header.append(struct.pack(f"<{2 + m}I", *values.shape))
    header.append(struct.pack("<d", seq.dt))
    header.append(struct.pack(f"<{m}d", *seq.grid.spacing))
    header.append(struct.pack(f"<{m}d", *seq.grid.origin))
    for name in seq.channel_names:
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
    Path(path).write_bytes(b"".join(header) + np.ascontiguousarray(payload).tobytes())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise DataError(f"{self.path}: truncated header while reading {what}")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out


def load_field(path) -> FieldSequence:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: bad magic {buf[:8]!r}")
    r = _Reader(buf, path)
    r.pos = 8
    version, naxes = r.take("<BB", "version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if naxes not in (4, 5):
        raise DataError(f"{path}: axis count {naxes} (expected 4 or 5)")
    m = naxes - 2
    shape = r.take(f"<{naxes}I", "sizes")
    (dt,) = r.take("<d", "dt")
    spacing = r.take(f"<{m}d", "spacing")
    origin = r.take(f"<{m}d", "origin")
    names = []
    for c in range(shape[1]):
        (n,) = r.take("<H", f"channel label {c}")
        raw = buf[r.pos : r.pos + n]
        if len(raw) != n:
            raise DataError(f"{path}: truncated channel label {c}")
        names.append(raw.decode("utf-8"))
        r.pos += n
    expected = int(np.prod(shape)) * 4
    if len(buf) - r.pos != expected:
        raise DataError(f"{path}: payload has {len(buf) - r.pos} bytes, header implies {expected}")
    values = np.frombuffer(buf, dtype="<f4", offset=r.pos).reshape(shape).astype(np.float32)
    try:
        grid = GridSpec(tuple(shape[2:]), spacing, origin)
        return FieldSequence(values, dt, grid, tuple(names))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(x) for x in self.mean))
        object.__setattr__(self, "std", tuple(float(x) for x in self.std))
        if len(self.mean) != len(self.std):
            raise DataError("norm stats: mean and std lengths differ")

    @property
    def degenerate_channels(self) -> list[int]:
        return [c for c, s in enumerate(self.std) if not s > 0]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["mean"], d["std"])

    def _broadcast(self, seq: FieldSequence):
        if len(self.mean) != seq.n_channels:
            raise DataError(f"norm stats have {len(self.mean)} channels, field has {seq.n_channels}")
        if self.degenerate_channels:
            raise DataError(f"norm stats: zero std on channels {self.degenerate_channels}")
        shape = (1, -1) + (1,) * seq.grid.spatial_dims
        return np.reshape(self.mean, shape), np.reshape(self.std, shape)


def compute_norm_stats(corpus: Sequence[FieldSequence]) -> NormStats:
    """Per-channel mean and population std pooled over all frames and samples."""
    if len(corpus) == 0:
        raise DataError("corpus is empty")
    nc = corpus[0].n_channels
    if any(s.n_channels != nc for s in corpus):
        raise DataError("corpus: inconsistent channel counts")
    total = np.zeros(nc)
    count = 0
    for s in corpus:
        v = np.moveaxis(np.asarray(s.values, dtype=np.float64), 1, 0).reshape(nc, -1)
        total += v.sum(axis=1)
        count += v.shape[1]
    mean = total / count
    sq = np.zeros(nc)
    for s in corpus:
        v = np.moveaxis(np.asarray(s.values, dtype=np.float64), 1, 0).reshape(nc, -1)
        sq += ((v - mean[:, None]) ** 2).sum(axis=1)
    return NormStats(mean, np.sqrt(sq / count))


def normalize(seq: FieldSequence, stats: NormStats) -> FieldSequence:
    mean, std = stats._broadcast(seq)
    return seq.replace(values=((seq.values - mean) / std).astype(seq.values.dtype))


def denormalize(seq: FieldSequence, stats: NormStats) -> FieldSequence:
    mean, std = stats._broadcast(seq)
    return seq.replace(values=(seq.values * std + mean).astype(seq.values.dtype))
