"""Reference Gray-Scott solver: RK4 in time, wrap-around high-order Laplacian in space."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .core import FieldSequence, GridSpec
from .errors import ConfigError, NumericalError
from .pde import GS2D, GS3D, GrayScottParams, PDESystem, gs_reaction
from .residual import laplacian_periodic

DEFAULT_BOUNDS = (-0.1, 1.3)
_TOL = 1e-9


def stability_limit(params: GrayScottParams, grid: GridSpec) -> float:
    """Explicit diffusion bound dx^2 / (2 m max(gamma))."""
    dx = min(grid.spacing)
    return dx * dx / (2 * grid.spatial_dims * max(params.gamma_u, params.gamma_v))


def default_internal_dt(params: GrayScottParams, grid: GridSpec, snapshot_dt: float, safety: float = 0.32) -> float:
    """Largest step dividing ``snapshot_dt`` within ``safety`` of the diffusion bound."""
    n = math.ceil(snapshot_dt / (safety * stability_limit(params, grid)) - _TOL)
    return snapshot_dt / max(n, 1)


def _steps(a: float, b: float, what: str) -> int:
    q = a / b
    n = round(q)
    if abs(q - n) > _TOL * max(1.0, abs(q)):
        raise ConfigError(f"{what}: {b} does not divide {a}")
    return n


@dataclass(frozen=True)
class SimSpec:
    system: PDESystem
    grid: GridSpec
    t_end: float
    snapshot_dt: float
    internal_dt: float | None = None
    seed: int = 0
    # Frames are stored from t_start; the integration always starts at t = 0.
    t_start: float = 0.0
    safety: float = 1.0
    bounds: tuple[float, float] | None = DEFAULT_BOUNDS

    def __post_init__(self):
        if self.system.kind not in (GS2D, GS3D):
            raise ConfigError(f"the solver only handles Gray-Scott systems, not {self.system.kind}")
        if self.grid.spatial_dims != self.system.spatial_dims:
            raise ConfigError(f"{self.system.kind} needs a {self.system.spatial_dims}D grid")
        if not self.snapshot_dt > 0:
            raise ConfigError("snapshot_dt must be > 0")
        if not 0 <= self.t_start <= self.t_end:
            raise ConfigError("require 0 <= t_start <= t_end")
        if not 0 < self.safety <= 1:
            raise ConfigError("safety factor must lie in (0, 1]")
        if self.internal_dt is None:
            object.__setattr__(self, "internal_dt", default_internal_dt(self.system.params, self.grid, self.snapshot_dt))
        if not 0 < self.internal_dt <= self.snapshot_dt * (1 + _TOL):
            raise ConfigError("internal_dt must lie in (0, snapshot_dt]")
        limit = self.safety * stability_limit(self.system.params, self.grid)
        if self.internal_dt > limit * (1 + _TOL):
            raise ConfigError(f"internal_dt {self.internal_dt} exceeds the diffusion stability bound {limit:.6g}")
        _steps(self.snapshot_dt, self.internal_dt, "internal_dt")
        _steps(self.t_end - self.t_start, self.snapshot_dt, "snapshot_dt")
        _steps(self.t_start, self.snapshot_dt, "snapshot_dt (t_start)")

    @property
    def n_frames(self) -> int:
        return _steps(self.t_end - self.t_start, self.snapshot_dt, "snapshot_dt") + 1

    @property
    def steps_per_snapshot(self) -> int:
        return _steps(self.snapshot_dt, self.internal_dt, "internal_dt")


def default_ic(grid: GridSpec, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Quiescent state (1, 0) with a noisy (0.5, 0.25) seed block at the domain center."""
    u = np.ones(grid.sizes)
    v = np.zeros(grid.sizes)
    box = []
    for n in grid.sizes:
        side = max(1, round(n / 8))
        lo = n // 2 - side // 2
        box.append(slice(lo, lo + side))
    box = tuple(box)
    rng = np.random.default_rng(seed)
    shape = u[box].shape
    u[box] = 0.50 + rng.uniform(-0.02, 0.02, shape)
    v[box] = 0.25 + rng.uniform(-0.02, 0.02, shape)
    return u, v


def _rhs(u, v, p: GrayScottParams, spacing, reaction: bool, order: int):
    du = p.gamma_u * laplacian_periodic(u, spacing, order)
    dv = p.gamma_v * laplacian_periodic(v, spacing, order)
    if reaction:
        ru, rv = gs_reaction(u, v, p)
        du, dv = du + ru, dv + rv
    return du, dv


def _rk4(u, v, p, spacing, dt, reaction, order):
    k1u, k1v = _rhs(u, v, p, spacing, reaction, order)
    k2u, k2v = _rhs(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v, p, spacing, reaction, order)
    k3u, k3v = _rhs(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v, p, spacing, reaction, order)
    k4u, k4v = _rhs(u + dt * k3u, v + dt * k3v, p, spacing, reaction, order)
    u = u + dt / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
    v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return u, v


def step_gs(u, v, params: GrayScottParams, grid: GridSpec, internal_dt: float, reaction: bool = True, order: int = 4):
    """One classical RK4 step; ``reaction=False`` gives pure diffusion."""
    is_np = isinstance(u, np.ndarray)
    tu = torch.as_tensor(u, dtype=torch.float64)
    tv = torch.as_tensor(v, dtype=torch.float64)
    un, vn = _rk4(tu, tv, params, grid.spacing, internal_dt, reaction, order)
    if not (torch.isfinite(un).all() and torch.isfinite(vn).all()):
        raise NumericalError("step_gs: non-finite state after one step")
    return (un.numpy(), vn.numpy()) if is_np else (un, vn)


def simulate_many(spec: SimSpec, seeds: Sequence[int] | None = None, initial=None) -> list[FieldSequence]:
    """Integrate several initial conditions in lockstep (one batched tensor).

    ``initial`` optionally overrides the default seeded IC with a list of (u0, v0).
    """
    if initial is None:
        seeds = [spec.seed] if seeds is None else list(seeds)
        initial = [default_ic(spec.grid, s) for s in seeds]
    u = torch.as_tensor(np.stack([ic[0] for ic in initial]), dtype=torch.float64)
    v = torch.as_tensor(np.stack([ic[1] for ic in initial]), dtype=torch.float64)
    p, dt = spec.system.params, spec.internal_dt
    sp = spec.grid.spacing
    start_step = _steps(spec.t_start, dt, "internal_dt (t_start)")
    per = spec.steps_per_snapshot
    total = start_step + (spec.n_frames - 1) * per
    frames = []
    step = 0
    while True:
        if spec.bounds is not None and step % per == 0:
            lo, hi = spec.bounds
            mn = min(u.min().item(), v.min().item())
            mx = max(u.max().item(), v.max().item())
            if mn < lo or mx > hi:
                raise NumericalError(f"simulate: state left [{lo}, {hi}] at step {step} (min {mn:.4g}, max {mx:.4g})")
        if step >= start_step and (step - start_step) % per == 0:
            frames.append(torch.stack([u, v], 1).clone())
        if step == total:
            break
        u, v = _rk4(u, v, p, sp, dt, True, 4)
        step += 1
        if not (torch.isfinite(u).all() and torch.isfinite(v).all()):
            raise NumericalError(f"simulate: non-finite state at step {step}")
    stack = torch.stack(frames, 1).numpy()  # [sample, time, channel, *space]
    return [FieldSequence(stack[i], spec.snapshot_dt, spec.grid, spec.system.channels) for i in range(len(initial))]


def simulate(spec: SimSpec) -> FieldSequence:
    return simulate_many(spec)[0]
