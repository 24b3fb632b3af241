"""Snapshot panels (LR, baseline, PhySR, ground truth) and loss curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError  # noqa: E402


def _slice2d(a: np.ndarray) -> np.ndarray:
    """2D view of a spatial field; 3D volumes are cut at the middle of the last axis."""
    return a if a.ndim == 2 else a[..., a.shape[-1] // 2]


def _frame_index(frame, n: int) -> int:
    if frame == "mid":
        return n // 2
    try:
        k = int(frame)
    except ValueError:
        raise ConfigError(f"--frame must be an integer or 'mid', got {frame!r}") from None
    if not -n <= k < n:
        raise ConfigError(f"frame {k} out of range for {n} HR frames")
    return k % n


def plot_snapshots(manifest_path, checkpoint, sample: int, frame, out: Path, split: str = "test") -> list[Path]:
    from .evaluation import interp_baseline, predict
    from .manifest import DatasetManifest
    from .model import load_checkpoint

    man = DatasetManifest.load(manifest_path)
    samples = man.subset(split)
    if not 0 <= sample < len(samples):
        raise ConfigError(f"sample {sample} out of range for the {split} split ({len(samples)} samples)")
    s = samples[sample]
    k = _frame_index(frame, s.hr.n_frames)
    r_t = man.degrade.r_t
    panels = {"LR": None, "interpolation": interp_baseline(s.lr, man.degrade, "periodic" if man.pde.periodic else "clamp").values[k]}
    if checkpoint:
        model, _ = load_checkpoint(checkpoint)
        panels["PhySR"] = predict(model, [s])[0][k]
    panels["ground truth"] = np.asarray(s.hr.values[k])
    # LR frames only exist every r_t HR frames; show the nearest earlier one
    lr_frame = s.lr.values[k // r_t]
    written = []
    for c, name in enumerate(s.hr.channel_names):
        imgs = [_slice2d(lr_frame[c])] + [_slice2d(p[c]) for key, p in panels.items() if key != "LR"]
        titles = [f"LR (t={k // r_t * r_t})"] + [key for key in panels if key != "LR"]
        vmin = min(float(i.min()) for i in imgs)
        vmax = max(float(i.max()) for i in imgs)
        fig, axes = plt.subplots(1, len(imgs), figsize=(3.2 * len(imgs), 3.2))
        for ax, img, title in zip(axes, imgs, titles):
            im = ax.imshow(img, vmin=vmin, vmax=vmax, cmap="viridis", origin="lower")
            ax.set_title(title)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.colorbar(im, ax=list(axes), shrink=0.8)
        fig.suptitle(f"{s.name} channel {name}, HR frame {k}")
        p = Path(out) / f"{s.name}_{name}_f{k}.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        written.append(p)
    return written


def plot_history(history_path, out: Path) -> list[Path]:
    from .train import read_history

    rows = read_history(history_path)
    ep = [r["epoch"] for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 3.5))
    for key in ("L", "L_d", "L_p"):
        a.semilogy(ep, [max(r[key], 1e-12) for r in rows], label=key)
    a.set_xlabel("epoch")
    a.legend()
    ev = [(r["epoch"], r["test_eps"]) for r in rows if np.isfinite(r["test_eps"])]
    if ev:
        b.plot(*zip(*ev), marker=".")
    b.set_xlabel("epoch")
    b.set_ylabel("test error (%)")
    p = Path(out) / "history.png"
    fig.tight_layout()
    fig.savefig(p, dpi=100)
    plt.close(fig)
    return [p]
