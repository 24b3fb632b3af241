"""Governing-equation definitions: Gray-Scott reaction-diffusion and Rayleigh-Benard convection."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, DataError

GS2D, GS3D, RBC2D = "GS2D", "GS3D", "RBC2D"
KINDS = (GS2D, GS3D, RBC2D)
BC_KINDS = ("periodic", "dirichlet", "neumann", "none")

GS_CHANNELS = ("u", "v")
RBC_CHANNELS = ("p", "T", "u", "v")


@dataclass(frozen=True)
class GrayScottParams:
    gamma_u: float
    gamma_v: float
    f: float
    k: float

    def __post_init__(self):
        for name in ("gamma_u", "gamma_v", "f", "k"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"GrayScottParams.{name} must be > 0, got {getattr(self, name)}")


# Standard 2D and 3D Gray-Scott configurations.
GS2D_PARAMS = GrayScottParams(0.16, 0.08, 0.06, 0.062)
GS3D_PARAMS = GrayScottParams(0.2, 0.1, 0.025, 0.055)


@dataclass(frozen=True)
class RBCParams:
    rayleigh: float
    prandtl: float

    def __post_init__(self):
        if not (self.rayleigh > 0 and self.prandtl > 0):
            raise ConfigError(f"RBCParams require Ra > 0 and Pr > 0, got {self.rayleigh}, {self.prandtl}")

    @property
    def r_star(self) -> float:
        """Momentum diffusion coefficient sqrt(Pr/Ra)."""
        return (self.prandtl / self.rayleigh) ** 0.5

    @property
    def p_star(self) -> float:
        """Thermal diffusion coefficient 1/sqrt(Ra*Pr)."""
        return (self.rayleigh * self.prandtl) ** -0.5


RBC_PARAMS = RBCParams(1e6, 1.0)


@dataclass(frozen=True)
class PDESystem:
    kind: str
    params: GrayScottParams | RBCParams
    bc_kind: tuple[str, ...] = ()
    # Axis receiving the buoyancy term T*e_axis (RBC only).
    buoyancy_axis: int = 0
    channels: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown PDE kind {self.kind!r}; expected one of {KINDS}")
        gs = self.kind in (GS2D, GS3D)
        if gs != isinstance(self.params, GrayScottParams):
            raise ConfigError(f"{self.kind} requires {'GrayScottParams' if gs else 'RBCParams'}")
        object.__setattr__(self, "channels", GS_CHANNELS if gs else RBC_CHANNELS)
        bc = self.bc_kind
        if isinstance(bc, str):
            bc = (bc,) * (2 * self.spatial_dims)
        elif not bc:
            bc = ("periodic",) * (2 * self.spatial_dims) if gs else ("periodic", "periodic", "none", "none")
        bc = tuple(bc)
        if len(bc) != 2 * self.spatial_dims or any(b not in BC_KINDS for b in bc):
            raise ConfigError(f"bc_kind must list one of {BC_KINDS} per face (2*m entries), got {bc}")
        object.__setattr__(self, "bc_kind", bc)
        if self.buoyancy_axis not in range(self.spatial_dims):
            raise ConfigError(f"buoyancy_axis {self.buoyancy_axis} out of range")

    @property
    def spatial_dims(self) -> int:
        return 3 if self.kind == GS3D else 2

    @property
    def periodic(self) -> bool:
        return all(b == "periodic" for b in self.bc_kind)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(vars(self.params)),
            "bc_kind": list(self.bc_kind),
            "buoyancy_axis": self.buoyancy_axis,
            "channels": list(self.channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PDESystem":
        kind = d["kind"]
        pcls = RBCParams if kind == RBC2D else GrayScottParams
        return cls(kind, pcls(**d["params"]), tuple(d.get("bc_kind", ())), d.get("buoyancy_axis", 0))

    @classmethod
    def preset(cls, name: str) -> "PDESystem":
        name = name.upper()
        if name == GS2D:
            return cls(GS2D, GS2D_PARAMS)
        if name == GS3D:
            return cls(GS3D, GS3D_PARAMS)
        if name == RBC2D:
            return cls(RBC2D, RBC_PARAMS)
        raise ConfigError(f"unknown system {name!r}; expected one of {KINDS}")


def gs_reaction(u, v, p: GrayScottParams):
    """Pointwise Gray-Scott reaction terms; works on numpy arrays and torch tensors."""
    if tuple(u.shape) != tuple(v.shape):
        raise DataError(f"gs_reaction: u shape {tuple(u.shape)} != v shape {tuple(v.shape)}")
    uvv = u * v * v
    return -uvv + p.f * (1 - u), uvv - (p.f + p.k) * v


RBC_DERIVS = ("u_x", "u_y", "v_x", "v_y", "p_x", "p_y", "T_x", "T_y", "lap_u", "lap_v", "lap_T")


def rbc_rhs(fields: dict, derivs: dict, params: RBCParams, buoyancy_axis: int = 0) -> dict:
    """Right-hand sides of the Boussinesq system.

    Returns ``continuity`` (divergence of velocity, which should vanish) and the
    time-derivative right-hand sides ``momentum_u``, ``momentum_v`` and ``energy``.
    """
    for key in ("p", "T", "u", "v"):
        if key not in fields:
            raise DataError(f"rbc_rhs: missing field {key!r}")
    for key in RBC_DERIVS:
        if key not in derivs:
            raise DataError(f"rbc_rhs: missing derivative {key!r}")
    u, v, T = fields["u"], fields["v"], fields["T"]
    d = derivs
    mom_u = -(u * d["u_x"] + v * d["u_y"]) - d["p_x"] + params.r_star * d["lap_u"]
    mom_v = -(u * d["v_x"] + v * d["v_y"]) - d["p_y"] + params.r_star * d["lap_v"]
    if buoyancy_axis == 0:
        mom_u = mom_u + T
    else:
        mom_v = mom_v + T
    return {
        "continuity": d["u_x"] + d["v_y"],
        "momentum_u": mom_u,
        "momentum_v": mom_v,
        "energy": -(u * d["T_x"] + v * d["T_y"]) + params.p_star * d["lap_T"],
    }
