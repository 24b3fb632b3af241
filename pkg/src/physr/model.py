"""PhySR network: temporal interpolation, ConvLSTM refinement in LR latent space and
temporally-shared spatial reconstruction (wide-activation residual blocks, sub-pixel
shuffle, global residual path)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import weight_norm

from .core import NormStats
from .errors import ConfigError, DataError
from .residual import BCSpec, apply_dirichlet

PADDING_MODES = {"periodic": "circular", "zero": "zeros"}
TEMPORAL = ("convlstm", "conv")
ACTIVATIONS = {"relu": nn.ReLU, "gelu": nn.GELU, "tanh": nn.Tanh}


@dataclass(frozen=True)
class PhySRConfig:
    n_channels: int = 2
    m: int = 2
    r_t: int = 4
    r_s: int = 8
    features: int = 32
    n_res_blocks: int = 2
    kernel_size: int = 3
    expansion: int = 4
    padding_mode: str = "periodic"
    # "conv" swaps the ConvLSTM for a plain convolution (ablation B)
    temporal: str = "convlstm"
    n_convlstm: int = 1
    activation: str = "relu"
    res_scale: float = 0.1
    weight_norm: bool = True

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.m not in (2, 3):
            raise ConfigError(f"m must be 2 or 3, got {self.m}")
        if self.padding_mode not in PADDING_MODES:
            raise ConfigError(f"padding_mode must be one of {tuple(PADDING_MODES)}")
        if self.temporal not in TEMPORAL:
            raise ConfigError(f"temporal must be one of {TEMPORAL}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {tuple(ACTIVATIONS)}")
        for name in ("n_channels", "r_t", "r_s", "features", "expansion", "n_convlstm"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_res_blocks < 0:
            raise ConfigError("n_res_blocks must be >= 0")

    @property
    def shuffle_channels(self) -> int:
        return self.n_channels * self.r_s**self.m

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhySRConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown PhySRConfig keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "PhySRConfig":
        return dataclasses.replace(self, **kw)


def _conv(cfg: PhySRConfig, cin: int, cout: int, wn: bool = False, bias: bool = True) -> nn.Module:
    cls = nn.Conv2d if cfg.m == 2 else nn.Conv3d
    conv = cls(cin, cout, cfg.kernel_size, padding=cfg.kernel_size // 2, padding_mode=PADDING_MODES[cfg.padding_mode], bias=bias)
    return weight_norm(conv) if wn and cfg.weight_norm else conv


# ---------------------------------------------------------------------------
# elementary operations


def pixel_shuffle(x: torch.Tensor, r: int, m: int | None = None) -> torch.Tensor:
    """``[..., C*r^m, *S] -> [..., C, *(S*r)]`` by pure index permutation.

    Output node ``r*s + d`` of channel ``c`` takes input channel ``c*r^m + flat(d)``
    at node ``s``, with ``flat`` the row-major index over the offset ``d``.
    """
    m = x.ndim - 2 if m is None else m
    lead = x.shape[: x.ndim - m - 1]
    cr, space = x.shape[x.ndim - m - 1], x.shape[x.ndim - m :]
    if cr % r**m:
        raise DataError(f"pixel_shuffle: {cr} channels not divisible by r^m = {r**m}")
    c = cr // r**m
    nl = len(lead)
    x = x.reshape(*lead, c, *([r] * m), *space)
    # [..., c, d_1..d_m, s_1..s_m] -> [..., c, s_1, d_1, ..., s_m, d_m]
    perm = list(range(nl + 1))
    for i in range(m):
        perm += [nl + 1 + m + i, nl + 1 + i]
    x = x.permute(perm)
    return x.reshape(*lead, c, *(s * r for s in space))


def pixel_unshuffle(x: torch.Tensor, r: int, m: int | None = None) -> torch.Tensor:
    m = x.ndim - 2 if m is None else m
    lead = x.shape[: x.ndim - m - 1]
    c, space = x.shape[x.ndim - m - 1], x.shape[x.ndim - m :]
    if any(s % r for s in space):
        raise DataError(f"pixel_unshuffle: spatial shape {tuple(space)} not divisible by {r}")
    nl = len(lead)
    split = []
    for s in space:
        split += [s // r, r]
    x = x.reshape(*lead, c, *split)
    perm = list(range(nl + 1)) + [nl + 2 + 2 * i for i in range(m)] + [nl + 1 + 2 * i for i in range(m)]
    x = x.permute(perm)
    return x.reshape(*lead, c * r**m, *(s // r for s in space))


class PixelShuffle(nn.Module):
    def __init__(self, r: int, m: int):
        super().__init__()
        self.r, self.m = r, m

    def forward(self, x):
        return pixel_shuffle(x, self.r, self.m)


def temporal_interpolate(x: torch.Tensor, r_t: int, dim: int = 0) -> torch.Tensor:
    """Linear-in-time upsampling; input frames land exactly on multiples of ``r_t``."""
    if r_t < 1:
        raise ConfigError(f"r_t must be >= 1, got {r_t}")
    n = x.shape[dim]
    if n < 2:
        raise DataError("temporal_interpolate needs at least two frames")
    if r_t == 1:
        return x
    a = x.narrow(dim, 0, n - 1)
    b = x.narrow(dim, 1, n - 1)
    parts = [a]
    for j in range(1, r_t):
        w = j / r_t
        parts.append((1 - w) * a + w * b)
    out = torch.stack(parts, dim + 1)  # [..., n-1, r_t, ...]
    shape = list(x.shape)
    shape[dim] = (n - 1) * r_t
    out = out.reshape(shape)
    return torch.cat([out, x.narrow(dim, n - 1, 1)], dim)


# ---------------------------------------------------------------------------
# building blocks


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM with the four gate kernels stacked as (i, f, c, o)."""

    def __init__(self, cfg: PhySRConfig, input_channels: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.gates = _conv(cfg, input_channels + hidden, 4 * hidden)
        with torch.no_grad():
            self.gates.bias.zero_()
            self.gates.bias[3 * hidden :].fill_(1.0)

    def gate_params(self) -> dict:
        """Per-gate ``(W, b)`` views: W_i, W_f, W_c, W_o."""
        W = self.gates.weight.chunk(4, 0)
        b = self.gates.bias.chunk(4, 0)
        return {g: (w, bb) for g, w, bb in zip("ifco", W, b)}

    def init_state(self, x: torch.Tensor):
        shape = (x.shape[0], self.hidden, *x.shape[2:])
        z = x.new_zeros(shape)
        return z, z

    def forward(self, x, state):
        h, c = state
        if x.shape[2:] != h.shape[2:]:
            raise DataError(f"convlstm_step: input spatial {tuple(x.shape[2:])} != state {tuple(h.shape[2:])}")
        zi, zf, zc, zo = self.gates(torch.cat([x, h], 1)).chunk(4, 1)
        i = torch.sigmoid(zi)
        f = torch.sigmoid(zf)
        c_new = f * c + i * torch.tanh(zc)
        o = torch.sigmoid(zo)
        return o * torch.tanh(c_new), c_new


def convlstm_step(x: torch.Tensor, state, cell: ConvLSTMCell):
    return cell(x, state)


class ResBlock(nn.Module):
    """Wide activation: expand -> nonlinearity -> contract, plus identity skip."""

    def __init__(self, cfg: PhySRConfig):
        super().__init__()
        self.res_scale = cfg.res_scale
        self.expand = _conv(cfg, cfg.features, cfg.features * cfg.expansion, wn=True)
        self.act = ACTIVATIONS[cfg.activation]()
        self.contract = _conv(cfg, cfg.features * cfg.expansion, cfg.features, wn=True)

    def forward(self, x):
        return x + self.res_scale * self.contract(self.act(self.expand(x)))


# ---------------------------------------------------------------------------
# the network


class PhySR(nn.Module):
    def __init__(self, cfg: PhySRConfig, stats: NormStats | None = None, output_bc: BCSpec | None = None):
        super().__init__()
        self.cfg = cfg
        self.output_bc = output_bc
        C, Fe = cfg.n_channels, cfg.features
        # theta_t
        self.input_proj = _conv(cfg, C, Fe)
        if cfg.temporal == "convlstm":
            self.temporal = nn.ModuleList([ConvLSTMCell(cfg, Fe, Fe) for _ in range(cfg.n_convlstm)])
        else:
            self.temporal = nn.ModuleList([_conv(cfg, Fe, Fe)])
        # theta_s
        self.body = nn.Sequential(*[ResBlock(cfg) for _ in range(cfg.n_res_blocks)])
        self.tail = nn.Sequential(_conv(cfg, Fe, cfg.shuffle_channels, wn=True), PixelShuffle(cfg.r_s, cfg.m))
        # theta_r
        self.skip = nn.Sequential(_conv(cfg, C, cfg.shuffle_channels, wn=True), PixelShuffle(cfg.r_s, cfg.m))

        stats = stats or NormStats((0.0,) * C, (1.0,) * C)
        if len(stats.mean) != C:
            raise ConfigError(f"norm stats have {len(stats.mean)} channels, model has {C}")
        if stats.degenerate_channels:
            raise DataError(f"zero std in channel(s) {stats.degenerate_channels}; corpus is constant there")
        view = (1, 1, C) + (1,) * cfg.m
        self.register_buffer("mean", torch.tensor(stats.mean, dtype=torch.float32).view(view))
        self.register_buffer("std", torch.tensor(stats.std, dtype=torch.float32).view(view))

    @property
    def norm_stats(self) -> NormStats:
        return NormStats(self.mean.flatten().tolist(), self.std.flatten().tolist())

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups = {"theta_t": [], "theta_s": [], "theta_r": []}
        for name, p in self.named_parameters():
            top = name.split(".")[0]
            key = {"input_proj": "theta_t", "temporal": "theta_t", "body": "theta_s", "tail": "theta_s", "skip": "theta_r"}[top]
            groups[key].append((name, p))
        return groups

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.std + self.mean

    def spatial_reconstruct(self, h: torch.Tensor, u_hat: torch.Tensor) -> torch.Tensor:
        """HR frame(s) from latent ``h`` and interpolated LR ``u_hat`` (both ``[N, C, *S]``)."""
        if h.shape[2:] != u_hat.shape[2:]:
            raise DataError(f"spatial_reconstruct: latent {tuple(h.shape[2:])} vs LR frame {tuple(u_hat.shape[2:])}")
        return self.tail(self.body(h)) + self.skip(u_hat)

    def refine(self, z: torch.Tensor) -> torch.Tensor:
        """Temporal refinement of lifted frames ``[B, T, F, *S]``."""
        if self.cfg.temporal == "conv":
            B, T = z.shape[:2]
            return self.temporal[0](z.flatten(0, 1)).unflatten(0, (B, T))
        for cell in self.temporal:
            state = cell.init_state(z[:, 0])
            hs = []
            for k in range(z.shape[1]):
                state = cell(z[:, k], state)
                hs.append(state[0])
            z = torch.stack(hs, 1)
        return z

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        """Normalized LR ``[B, T, C, *S]`` -> physical-unit HR ``[B, r_t(T-1)+1, C, *(r_s S)]``."""
        cfg = self.cfg
        if lr.ndim != 3 + cfg.m or lr.shape[2] != cfg.n_channels:
            raise DataError(f"forward: expected [B, T, {cfg.n_channels}, *{cfg.m}D], got {tuple(lr.shape)}")
        try:
            u_hat = temporal_interpolate(lr, cfg.r_t, dim=1)
        except (DataError, ConfigError) as exc:
            raise type(exc)(f"[temporal_interpolate] {exc}") from None
        B, T = u_hat.shape[:2]
        flat = u_hat.flatten(0, 1)
        z = self.input_proj(flat).unflatten(0, (B, T))
        h = self.refine(z)
        out = self.spatial_reconstruct(h.flatten(0, 1), flat).unflatten(0, (B, T))
        out = self.denormalize(out)
        if self.output_bc is not None:
            out = apply_dirichlet(out, self.output_bc)
        return out


@torch.no_grad()
def identity_global_path(model: PhySR) -> None:
    """Make the global path copy each LR cell into its r_s^m children (nearest upsample)."""
    conv = model.skip[0]
    cfg = model.cfg
    centre = (cfg.kernel_size // 2,) * cfg.m
    rr = cfg.r_s**cfg.m
    if hasattr(conv, "parametrizations"):
        v = conv.parametrizations.weight.original1
        g = conv.parametrizations.weight.original0
        v.zero_()
        for c in range(cfg.n_channels):
            for d in range(rr):
                v[(c * rr + d, c) + centre] = 1.0
        g.fill_(1.0)
    else:
        conv.weight.zero_()
        for c in range(cfg.n_channels):
            for d in range(rr):
                conv.weight[(c * rr + d, c) + centre] = 1.0
    conv.bias.zero_()


@torch.no_grad()
def zero_main_path(model: PhySR) -> None:
    for p in list(model.body.parameters()) + list(model.tail.parameters()):
        p.zero_()
    # weight-norm directions must stay nonzero
    for mod in list(model.body.modules()) + list(model.tail.modules()):
        if hasattr(mod, "parametrizations"):
            mod.parametrizations.weight.original1.fill_(1.0)


def count_params(model: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def save_checkpoint(model: PhySR, path, extra: dict | None = None) -> None:
    torch.save(
        {
            "config": model.cfg.to_dict(),
            "norm_stats": model.norm_stats.to_dict(),
            "state": model.state_dict(),
            "extra": json.loads(json.dumps(extra or {})),
        },
        Path(path),
    )


def load_checkpoint(path) -> tuple[PhySR, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = PhySR(PhySRConfig.from_dict(blob["config"]), NormStats.from_dict(blob["norm_stats"]))
    model.load_state_dict(blob["state"])
    return model, blob.get("extra", {})
