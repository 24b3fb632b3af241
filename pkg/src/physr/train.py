"""Adam training on L = L_d + beta * L_p with deterministic replay and best-checkpoint tracking."""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .errors import ConfigError, NumericalError
from .manifest import DatasetManifest, SamplePair
from .model import PhySR, PhySRConfig
from .pde import PDESystem
from .residual import BCSpec, FDKernelSet, data_loss, pde_residual, physics_loss, total_loss

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "L", "L_d", "L_p", "test_eps", "wall_time")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    batch_size: int = 16
    epochs: int = 300
    beta: float = 0.025
    seed: int = 0
    device: str = "cpu"
    eval_every: int = 10
    fd_order: int = 4
    # AdamW-style decay instead of the classic L2-coupled form
    decoupled_weight_decay: bool = False
    physics_squared: bool = False
    residual_sign: int = -1
    # False drops BC handling from the residual (one-sided edge stencils; ablation D)
    enforce_bcs: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.weight_decay >= 0 and self.beta >= 0):
            raise ConfigError("learning_rate must be > 0; weight_decay and beta must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size and eval_every must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def config_hash(*dicts: dict) -> str:
    blob = json.dumps(list(dicts), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainResult:
    model: PhySR
    history: list[dict]
    best_epoch: int
    best_eps: float
    best_state: dict
    final_state: dict
    seconds_per_epoch: float
    config: dict = field(default_factory=dict)


def stack_pairs(samples: list[SamplePair], model: PhySR) -> tuple[torch.Tensor, torch.Tensor]:
    """Normalized LR inputs and physical HR targets as float32 batch tensors."""
    lr = torch.as_tensor(np.stack([np.asarray(s.lr.values, dtype=np.float32) for s in samples]))
    hr = torch.as_tensor(np.stack([np.asarray(s.hr.values, dtype=np.float32) for s in samples]))
    with torch.no_grad():
        lr = model.normalize(lr)
    return lr, hr


def physics_count(hr: torch.Tensor, m: int) -> int:
    """N_x * N_y (* N_z) * N_t * N_b: every entry except the channel axis."""
    return hr.numel() // hr.shape[-m - 1]


class LossFn:
    """Callable computing (L, L_d, L_p) for a batch; shared by training and gradient checks."""

    def __init__(self, system: PDESystem, dt: float, spacing, cfg: TrainConfig):
        self.system = system
        self.cfg = cfg
        self.m = len(spacing)
        self.kernels = FDKernelSet(cfg.fd_order, dt, spacing)
        if cfg.enforce_bcs:
            self.bc = BCSpec.from_system(system, cfg.fd_order)
        else:
            self.bc = BCSpec.uniform("none", self.m, cfg.fd_order // 2)

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, cfg: TrainConfig) -> "LossFn":
        hr0 = manifest.samples[0].hr
        return cls(manifest.pde, hr0.dt, hr0.grid.spacing, cfg)

    def __call__(self, hr_hat: torch.Tensor, hr: torch.Tensor):
        l_d = data_loss(hr_hat, hr)
        if self.cfg.beta == 0:
            l_p = hr_hat.new_zeros(())
        else:
            res = pde_residual(hr_hat, self.system, self.kernels, self.bc, self.cfg.residual_sign)
            l_p = physics_loss(res, physics_count(res, self.m), squared=self.cfg.physics_squared)
        return total_loss(l_d, l_p, self.cfg.beta), l_d, l_p


def make_optimizer(params, cfg: TrainConfig):
    if cfg.decoupled_weight_decay:
        return torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    return torch.optim.Adam(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def build_model(model_cfg: PhySRConfig, manifest: DatasetManifest, seed: int) -> PhySR:
    torch.manual_seed(seed)
    return PhySR(model_cfg, manifest.norm_stats)


def train(
    model: PhySR | PhySRConfig,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    evaluate: Callable[[PhySR, list[SamplePair]], list[float]] | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on the manifest's train split; test-split error drives best-checkpoint selection."""
    if evaluate is None:
        from .evaluation import evaluate_model as evaluate
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    if isinstance(model, PhySRConfig):
        model = build_model(model, manifest, cfg.seed)
    else:
        torch.manual_seed(cfg.seed)
    device = torch.device(cfg.device)
    model.to(device)
    rng = np.random.default_rng(cfg.seed)
    train_set, test_set = manifest.subset("train"), manifest.subset("test")
    lr_all, hr_all = stack_pairs(train_set, model)
    lr_all, hr_all = lr_all.to(device), hr_all.to(device)
    loss_fn = LossFn.from_manifest(manifest, cfg)
    opt = make_optimizer(model.parameters(), cfg)

    history = []
    best = (math.inf, 0, copy.deepcopy(model.state_dict()))
    t_total = 0.0
    n = lr_all.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            ti = torch.as_tensor(idx, device=device)
            hr_hat = model(lr_all[ti])
            L, l_d, l_p = loss_fn(hr_hat, hr_all[ti])
            if not torch.isfinite(L):
                ids = [train_set[i].name for i in idx]
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b} (samples {ids})")
            opt.zero_grad()
            L.backward()
            opt.step()
            sums += len(idx) * np.array([L.item(), l_d.item(), l_p.item()])
        dt = time.perf_counter() - t0
        t_total += dt
        row = dict(zip(("L", "L_d", "L_p"), (sums / n).tolist()))
        row["epoch"] = epoch
        row["test_eps"] = math.nan
        if test_set and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            eps = float(np.mean(evaluate(model, test_set)))
            row["test_eps"] = eps
            if eps < best[0]:
                best = (eps, epoch, copy.deepcopy(model.state_dict()))
        row["wall_time"] = dt
        history.append({k: row[k] for k in HISTORY_COLUMNS})
        if on_epoch:
            on_epoch(history[-1])
        log.debug("epoch %d L=%.5g L_d=%.5g L_p=%.5g eps=%.4g", epoch, row["L"], row["L_d"], row["L_p"], row["test_eps"])

    final_state = copy.deepcopy(model.state_dict())
    if test_set:
        model.load_state_dict(best[2])
    return TrainResult(
        model, history, best[1], best[0], best[2], final_state, t_total / cfg.epochs,
        {"model": model.cfg.to_dict(), "train": cfg.to_dict()},
    )


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return [{k: (int(r[k]) if k == "epoch" else float(r[k])) for k in HISTORY_COLUMNS} for r in rows]


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(
    model: PhySR,
    lr: torch.Tensor,
    loss: Callable[[torch.Tensor], torch.Tensor],
    eps: float = 1e-4,
    max_entries: int = 12,
    seed: int = 0,
    frozen: tuple[str, ...] = (),
    skipped: dict | None = None,
) -> dict[str, float]:
    """Worst relative deviation between autograd and central differences, per parameter.

    Runs on a float64 copy. For every trainable tensor the check covers one random
    direction through the whole tensor plus up to ``max_entries`` single entries.
    Parameters whose name starts with an entry of ``frozen`` are skipped.

    A probe whose difference quotient changes between ``eps`` and ``eps/2`` straddles
    a kink of a piecewise-linear activation and cannot be judged; such probes are
    left out and counted per parameter in ``skipped`` when given.
    """
    m = copy.deepcopy(model).double()
    x = lr.double()
    for name, p in m.named_parameters():
        if frozen and name.startswith(frozen):
            p.requires_grad_(False)
    params = [(n, p) for n, p in m.named_parameters() if p.requires_grad]
    m.zero_grad()
    loss(m(x)).backward()
    grads = {n: p.grad.detach().clone() for n, p in params}
    gen = torch.Generator().manual_seed(seed)

    def f():
        with torch.no_grad():
            return float(loss(m(x)))

    out = {}
    for name, p in params:
        g = grads[name]
        worst = 0.0
        d = torch.randn(p.shape, generator=gen, dtype=p.dtype)
        d /= d.norm()
        probes = [("dir", d)]
        flat = torch.randperm(p.numel(), generator=gen)[:max_entries]
        for i in flat.tolist():
            e = torch.zeros(p.numel(), dtype=p.dtype)
            e[i] = 1.0
            probes.append(("entry", e.view(p.shape)))
        n_skip = 0
        for _, d in probes:
            fd, fd_half = (_central(p, d, h, f) for h in (eps, eps / 2))
            an = float((g * d).sum())
            scale = max(abs(an), abs(fd))
            # entries whose sensitivity is below round-off cannot be resolved by differences
            if scale < 1e-8:
                continue
            # smooth, well-resolved probes agree to ~eps^2; a larger change means a kink or round-off
            if abs(fd - fd_half) > 1e-4 * scale:
                n_skip += 1
                continue
            worst = max(worst, abs(an - fd) / scale)
        out[name] = worst
        if skipped is not None:
            skipped[name] = n_skip
    return out


@torch.no_grad()
def _central(p: torch.Tensor, d: torch.Tensor, h: float, f) -> float:
    p.add_(h * d)
    fp = f()
    p.sub_(2 * h * d)
    fm = f()
    p.add_(h * d)
    return (fp - fm) / (2 * h)
