"""Finite-difference derivative engine, hard boundary encoding and loss assembly.

All operators act on torch tensors whose trailing ``m`` axes are spatial, so
they serve both the differentiable training loss and float64 solver checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
import torch

from .core import FieldSequence
from .errors import ConfigError, DataError
from .pde import GS2D, GS3D, RBC2D, PDESystem, gs_reaction, rbc_rhs

ORDERS = (2, 4, 6)


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], deriv: int) -> tuple[Fraction, ...]:
    """Exact weights of the ``deriv``-th derivative on integer ``offsets`` (unit spacing)."""
    from sympy import finite_diff_weights

    w = finite_diff_weights(deriv, list(offsets), 0)[deriv][-1]
    return tuple(Fraction(int(c.p), int(c.q)) for c in w)


def central_offsets(order: int) -> tuple[int, ...]:
    if order not in ORDERS:
        raise ConfigError(f"FD order must be one of {ORDERS}, got {order}")
    h = order // 2
    return tuple(range(-h, h + 1))


@dataclass(frozen=True)
class FDKernelSet:
    """Stencils for ``u_t`` and first/second spatial derivatives at a given order."""

    order: int = 4
    dt: float = 1.0
    spacing: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        central_offsets(self.order)
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))

    @property
    def half_width(self) -> int:
        return self.order // 2

    @property
    def k_t(self) -> np.ndarray:
        return np.array([-1.0, 0.0, 1.0]) / (2 * self.dt)

    @property
    def s1_exact(self) -> tuple[Fraction, ...]:
        return fd_weights(central_offsets(self.order), 1)

    @property
    def s2_exact(self) -> tuple[Fraction, ...]:
        return fd_weights(central_offsets(self.order), 2)

    def k_s1(self, axis: int = 0) -> np.ndarray:
        return np.array([float(c) for c in self.s1_exact]) / self.spacing[axis]

    def k_s2(self) -> np.ndarray:
        """Cross-shaped m-dimensional Laplacian kernel (isotropic spacing assumed for display)."""
        m = len(self.spacing)
        w = self.order + 1
        c = self.half_width
        kern = np.zeros((w,) * m)
        for axis in range(m):
            idx = [c] * m
            for j, coef in enumerate(self.s2_exact):
                idx[axis] = j
                kern[tuple(idx)] += float(coef) / self.spacing[axis] ** 2
        return kern


# ---------------------------------------------------------------------------
# boundary conditions


@dataclass(frozen=True)
class Face:
    kind: str = "periodic"
    # Dirichlet value or Neumann flux (derivative along +axis); scalar or broadcastable to the face.
    value: object = 0.0


@dataclass(frozen=True)
class BCSpec:
    faces: tuple[tuple[Face, Face], ...]
    ghost_depth: int = 2

    def __post_init__(self):
        for axis, (lo, hi) in enumerate(self.faces):
            if (lo.kind == "periodic") != (hi.kind == "periodic"):
                raise ConfigError(f"axis {axis}: periodic faces must come in pairs")
        if self.ghost_depth < 1:
            raise ConfigError("ghost_depth must be >= 1")

    @property
    def spatial_dims(self) -> int:
        return len(self.faces)

    @classmethod
    def uniform(cls, kind: str, m: int, ghost_depth: int = 2, value=0.0) -> "BCSpec":
        return cls(tuple((Face(kind, value), Face(kind, value)) for _ in range(m)), ghost_depth)

    @classmethod
    def periodic(cls, m: int, ghost_depth: int = 2) -> "BCSpec":
        return cls.uniform("periodic", m, ghost_depth)

    @classmethod
    def from_system(cls, system: PDESystem, order: int = 4) -> "BCSpec":
        kinds = system.bc_kind
        faces = tuple((Face(kinds[2 * a]), Face(kinds[2 * a + 1])) for a in range(system.spatial_dims))
        return cls(faces, order // 2)


def _sl(ndim: int, dim: int, s: slice):
    idx = [slice(None)] * ndim
    idx[dim] = s
    return tuple(idx)


def _face_value(value, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(value, dtype=like.dtype, device=like.device).expand_as(like)


def apply_dirichlet(x: torch.Tensor, bc: BCSpec) -> torch.Tensor:
    """Overwrite Dirichlet boundary nodes with their prescribed values."""
    m = bc.spatial_dims
    cloned = False
    for axis, faces in enumerate(bc.faces):
        dim = x.ndim - m + axis
        for side, face in enumerate(faces):
            if face.kind != "dirichlet":
                continue
            if not cloned:
                x, cloned = x.clone(), True
            node = 0 if side == 0 else x.shape[dim] - 1
            sl = _sl(x.ndim, dim, slice(node, node + 1))
            x[sl] = _face_value(face.value, x[sl])
    return x


def _ghosts(x: torch.Tensor, dim: int, face: Face, side: int, depth: int, h: float) -> torch.Tensor:
    """Ghost layers outside one face, ordered along +axis."""
    n = x.shape[dim]
    if face.kind == "periodic":
        if depth > n:
            raise DataError(f"periodic pad depth {depth} exceeds axis length {n}")
        return x.narrow(dim, n - depth, depth) if side == 0 else x.narrow(dim, 0, depth)
    near = 0 if side == 0 else n - 1
    edge = x.narrow(dim, near, 1)
    layers = []
    for j in range(1, depth + 1):
        mirror = x.narrow(dim, near + j if side == 0 else near - j, 1)
        if face.kind == "dirichlet":
            # odd reflection about the boundary value keeps the FD relation consistent
            g = 2 * _face_value(face.value, edge) - mirror
        elif face.kind == "neumann":
            # central difference across the face reproduces the prescribed flux
            s = _face_value(face.value, edge)
            g = mirror - 2 * j * h * s if side == 0 else mirror + 2 * j * h * s
        else:
            raise ConfigError(f"cannot build ghost nodes for a face of kind {face.kind!r}")
        layers.append(g)
    if side == 0:
        layers = layers[::-1]
    return torch.cat(layers, dim)


def pad_with_bcs(x: torch.Tensor, bc: BCSpec, spacing: Sequence[float] | None = None, axes=None) -> torch.Tensor:
    """Hard-apply ``bc`` and add ``ghost_depth`` layers on the requested spatial axes."""
    m = bc.spatial_dims
    spacing = (1.0,) * m if spacing is None else tuple(spacing)
    axes = range(m) if axes is None else axes
    x = apply_dirichlet(x, bc)
    for axis in axes:
        dim = x.ndim - m + axis
        lo, hi = bc.faces[axis]
        d, h = bc.ghost_depth, spacing[axis]
        x = torch.cat([_ghosts(x, dim, lo, 0, d, h), x, _ghosts(x, dim, hi, 1, d, h)], dim)
    return x


# ---------------------------------------------------------------------------
# derivatives


def _apply_stencil(xp: torch.Tensor, dim: int, weights, n: int) -> torch.Tensor:
    # weights sum to zero, so differencing against a reference node is equivalent
    # and makes constants vanish exactly in floating point
    ref = xp.narrow(dim, len(weights) // 2, n)
    out = None
    for j, w in enumerate(weights):
        if w == 0 or j == len(weights) // 2:
            continue
        term = float(w) * (xp.narrow(dim, j, n) - ref)
        out = term if out is None else out + term
    return out if out is not None else torch.zeros_like(ref)


def _one_sided(x: torch.Tensor, dim: int, deriv: int, order: int, side: int) -> list:
    """Edge-node values from one-sided stencils of matching accuracy."""
    n = x.shape[dim]
    width = order + deriv
    if n < width:
        raise DataError(f"axis of length {n} too short for a one-sided order-{order} stencil")
    out = []
    for i in range(order // 2):
        offs = tuple(range(-i, width - i))
        if side == 0:
            out.append(_apply_stencil(x.narrow(dim, 0, width), dim, fd_weights(offs, deriv), 1))
        else:
            offs = tuple(-o for o in offs[::-1])
            out.append(_apply_stencil(x.narrow(dim, n - width, width), dim, fd_weights(offs, deriv), 1))
    return out if side == 0 else out[::-1]


def derivative_1d(
    x: torch.Tensor, axis: int, deriv: int, spacing: Sequence[float], bc: BCSpec | None = None, order: int = 4
) -> torch.Tensor:
    """``deriv``-th derivative along spatial ``axis``.

    Faces of kind ``none`` fall back to one-sided stencils on the edge nodes;
    every other face is handled with ghost layers and the central stencil.
    """
    m = len(spacing)
    if not 0 <= axis < m:
        raise DataError(f"axis {axis} out of range for {m} spatial dims")
    half = order // 2
    w = fd_weights(central_offsets(order), deriv)
    bc = BCSpec.periodic(m, half) if bc is None else bc
    dim = x.ndim - m + axis
    n = x.shape[dim]
    lo, hi = bc.faces[axis]
    h = spacing[axis]
    x = apply_dirichlet(x, bc)
    parts = [x]
    if lo.kind != "none":
        parts.insert(0, _ghosts(x, dim, lo, 0, half, h))
    if hi.kind != "none":
        parts.append(_ghosts(x, dim, hi, 1, half, h))
    xp = torch.cat(parts, dim) if len(parts) > 1 else x
    n_lo = 0 if lo.kind != "none" else half
    n_hi = 0 if hi.kind != "none" else half
    out = [_apply_stencil(xp, dim, w, n - n_lo - n_hi)]
    if n_lo:
        out = _one_sided(x, dim, deriv, order, 0) + out
    if n_hi:
        out = out + _one_sided(x, dim, deriv, order, 1)
    res = torch.cat(out, dim) if len(out) > 1 else out[0]
    return res / h**deriv


def spatial_derivative(
    x: torch.Tensor,
    axis: int | None,
    which: str,
    spacing: Sequence[float],
    bc: BCSpec | None = None,
    order: int = 4,
) -> torch.Tensor:
    """First derivative along ``axis`` or the full Laplacian (``axis`` ignored)."""
    if which == "first":
        return derivative_1d(x, axis, 1, spacing, bc, order)
    if which == "laplacian":
        out = None
        for a in range(len(spacing)):
            d2 = derivative_1d(x, a, 2, spacing, bc, order)
            out = d2 if out is None else out + d2
        return out
    raise ConfigError(f"unknown derivative {which!r}; expected 'first' or 'laplacian'")


def laplacian_periodic(x: torch.Tensor, spacing: Sequence[float], order: int = 4) -> torch.Tensor:
    """Wrap-around Laplacian via ``torch.roll``; the solver's hot path."""
    m = len(spacing)
    w = fd_weights(central_offsets(order), 2)
    half = order // 2
    out = None
    for axis in range(m):
        dim = x.ndim - m + axis
        acc = None
        for j, c in enumerate(w):
            if c == 0 or j == half:
                continue
            term = float(c) * (torch.roll(x, shifts=half - j, dims=dim) - x)
            acc = term if acc is None else acc + term
        acc = acc / spacing[axis] ** 2
        out = acc if out is None else out + acc
    return out


def time_derivative(x, dt: float | None = None, dim: int = 0):
    """Central difference in time with forward/backward Euler on the end frames.

    ``x`` is a tensor (``dt`` required) or a FieldSequence (returns a float64 tensor).
    """
    if isinstance(x, FieldSequence):
        dt = x.dt
        x = torch.tensor(np.asarray(x.values, dtype=np.float64))
        dim = 0
    if dt is None:
        raise ConfigError("time_derivative: dt required for tensor input")
    n = x.shape[dim]
    if n < 3:
        raise DataError(f"time_derivative needs >= 3 frames, got {n}")
    interior = (x.narrow(dim, 2, n - 2) - x.narrow(dim, 0, n - 2)) / (2 * dt)
    first = (x.narrow(dim, 1, 1) - x.narrow(dim, 0, 1)) / dt
    last = (x.narrow(dim, n - 1, 1) - x.narrow(dim, n - 2, 1)) / dt
    return torch.cat([first, interior, last], dim)


# ---------------------------------------------------------------------------
# residuals and losses


def pde_residual(
    hr: torch.Tensor,
    system: PDESystem,
    kernels: FDKernelSet,
    bc: BCSpec | None = None,
    sign: int = -1,
) -> torch.Tensor:
    """Discrete residual ``u_t + sign * F[u]`` of ``hr`` laid out ``[..., time, channel, *space]``.

    With the default ``sign=-1`` an exact solution has zero residual.
    """
    m = system.spatial_dims
    if hr.ndim < 2 + m or hr.shape[-m - 1] != len(system.channels):
        raise DataError(f"pde_residual: expected {len(system.channels)} channels for {system.kind}, got shape {tuple(hr.shape)}")
    if sign not in (-1, 1):
        raise ConfigError("sign must be -1 or +1")
    if len(kernels.spacing) != m:
        raise ConfigError(f"kernel spacing has {len(kernels.spacing)} axes, system has {m}")
    bc = BCSpec.from_system(system, kernels.order) if bc is None else bc
    hr = apply_dirichlet(hr, bc)
    tdim = hr.ndim - m - 2
    cdim = tdim + 1
    u_t = time_derivative(hr, kernels.dt, tdim)
    sp, order = kernels.spacing, kernels.order

    def ch(t, i):
        return t.select(cdim, i)

    if system.kind in (GS2D, GS3D):
        p = system.params
        u, v = ch(hr, 0), ch(hr, 1)
        ru, rv = gs_reaction(u, v, p)
        fu = p.gamma_u * spatial_derivative(u, None, "laplacian", sp, bc, order) + ru
        fv = p.gamma_v * spatial_derivative(v, None, "laplacian", sp, bc, order) + rv
        return torch.stack([ch(u_t, 0) + sign * fu, ch(u_t, 1) + sign * fv], cdim)
    if system.kind == RBC2D:
        names = system.channels
        f = {n: ch(hr, i) for i, n in enumerate(names)}
        d = {}
        for n in ("u", "v", "p", "T"):
            d[f"{n}_x"] = spatial_derivative(f[n], 0, "first", sp, bc, order)
            d[f"{n}_y"] = spatial_derivative(f[n], 1, "first", sp, bc, order)
        for n in ("u", "v", "T"):
            d[f"lap_{n}"] = spatial_derivative(f[n], None, "laplacian", sp, bc, order)
        rhs = rbc_rhs(f, d, system.params, system.buoyancy_axis)
        ut = {n: ch(u_t, i) for i, n in enumerate(names)}
        return torch.stack(
            [
                rhs["continuity"],
                ut["u"] + sign * rhs["momentum_u"],
                ut["v"] + sign * rhs["momentum_v"],
                ut["T"] + sign * rhs["energy"],
            ],
            cdim,
        )
    raise ConfigError(f"no residual for {system.kind}")


def physics_loss(residual: torch.Tensor, count: int | None = None, squared: bool = False) -> torch.Tensor:
    """Frobenius norm of the residual divided by ``count`` (default: number of entries).

    ``squared=True`` gives the mean-square variant instead.
    """
    if squared:
        return residual.pow(2).mean()
    count = residual.numel() if count is None else count
    return torch.linalg.vector_norm(residual) / count


def data_loss(hr_hat: torch.Tensor, hr_true: torch.Tensor) -> torch.Tensor:
    if tuple(hr_hat.shape) != tuple(hr_true.shape):
        raise DataError(f"data_loss: shape {tuple(hr_hat.shape)} != {tuple(hr_true.shape)}")
    return (hr_hat - hr_true).abs().mean()


def total_loss(l_d, l_p, beta: float = 0.025):
    return l_d + beta * l_p
