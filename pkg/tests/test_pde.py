from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from physr.errors import ConfigError, DataError
from physr.pde import (
    GS2D_PARAMS,
    RBC2D,
    RBC_DERIVS,
    RBC_PARAMS,
    GrayScottParams,
    PDESystem,
    RBCParams,
    gs_reaction,
    rbc_rhs,
)
from physr.residual import spatial_derivative, BCSpec


def test_trivial_steady_state_has_no_reaction():
    du, dv = gs_reaction(np.ones((8, 8)), np.zeros((8, 8)), GS2D_PARAMS)
    assert np.all(du == 0) and np.all(dv == 0)


def test_reaction_hand_values():
    assert (GS2D_PARAMS.gamma_u, GS2D_PARAMS.gamma_v, GS2D_PARAMS.f, GS2D_PARAMS.k) == (0.16, 0.08, 0.06, 0.062)
    du, dv = gs_reaction(np.array([0.5]), np.array([0.25]), GS2D_PARAMS)
    assert du[0] == pytest.approx(-0.00125, abs=1e-15)
    assert dv[0] == pytest.approx(0.00075, abs=1e-15)


def test_reaction_matches_loop_oracle():
    rng = np.random.default_rng(2)
    u, v = rng.random((8, 8)), rng.random((8, 8))
    du, dv = gs_reaction(u, v, GS2D_PARAMS)
    f, k = GS2D_PARAMS.f, GS2D_PARAMS.k
    for i in range(8):
        for j in range(8):
            a, b = float(u[i, j]), float(v[i, j])
            assert abs(du[i, j] - (-a * b * b + f * (1 - a))) <= 1e-12
            assert abs(dv[i, j] - (a * b * b - (f + k) * b)) <= 1e-12


@given(
    st.integers(-16, 16), st.integers(-16, 16), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8)
)
def test_reaction_exact_on_dyadic_rationals(a, b, fi, ki, gu, gv):
    # small integers over powers of two keep every product exactly representable
    u, v = a / 8, b / 8
    p = GrayScottParams(gu / 4, gv / 4, fi / 16, ki / 16)
    du, dv = gs_reaction(np.array([u]), np.array([v]), p)
    U, V, F, K = Fraction(a, 8), Fraction(b, 8), Fraction(fi, 16), Fraction(ki, 16)
    assert Fraction(float(du[0])) == -U * V * V + F * (1 - U)
    assert Fraction(float(dv[0])) == U * V * V - (F + K) * V


def test_reaction_shape_mismatch():
    with pytest.raises(DataError, match="shape"):
        gs_reaction(np.ones((4, 4)), np.ones((4, 5)), GS2D_PARAMS)


def test_params_validation():
    with pytest.raises(ConfigError, match="gamma_u"):
        GrayScottParams(0.0, 0.1, 0.1, 0.1)
    with pytest.raises(ConfigError):
        RBCParams(-1.0, 1.0)


def test_rbc_coefficients():
    assert RBC_PARAMS.r_star == pytest.approx(1e-3, rel=1e-12)
    assert RBC_PARAMS.p_star == pytest.approx(1e-3, rel=1e-12)


@given(st.floats(1e2, 1e10), st.floats(1e-3, 1e3))
def test_rbc_coefficient_product(ra, pr):
    p = RBCParams(ra, pr)
    assert p.r_star * p.p_star == pytest.approx(1 / ra, rel=1e-12)


def test_system_channels_and_roundtrip():
    gs = PDESystem.preset("gs2d")
    assert gs.channels == ("u", "v") and gs.periodic
    rbc = PDESystem.preset("rbc2d")
    assert rbc.channels == ("p", "T", "u", "v")
    assert rbc.bc_kind == ("periodic", "periodic", "none", "none")
    assert PDESystem.from_dict(rbc.to_dict()) == rbc
    assert PDESystem.preset("gs3d").spatial_dims == 3
    with pytest.raises(ConfigError, match="bc_kind"):
        PDESystem(RBC2D, RBC_PARAMS, ("periodic",) * 3)


def _constant_rbc(T=0.7):
    shape = (6, 6)
    fields = {"p": np.full(shape, 2.0), "T": np.full(shape, T), "u": np.full(shape, 0.3), "v": np.full(shape, -0.4)}
    derivs = {k: np.zeros(shape) for k in RBC_DERIVS}
    return fields, derivs


@pytest.mark.parametrize("axis", [0, 1])
def test_rbc_constant_fields_leave_buoyancy_only(axis):
    fields, derivs = _constant_rbc(0.7)
    out = rbc_rhs(fields, derivs, RBC_PARAMS, buoyancy_axis=axis)
    assert np.all(out["continuity"] == 0) and np.all(out["energy"] == 0)
    exp_u, exp_v = (0.7, 0.0) if axis == 0 else (0.0, 0.7)
    np.testing.assert_array_equal(out["momentum_u"], exp_u)
    np.testing.assert_array_equal(out["momentum_v"], exp_v)


def test_rbc_missing_derivative_named():
    fields, derivs = _constant_rbc()
    del derivs["lap_T"]
    with pytest.raises(DataError, match="lap_T"):
        rbc_rhs(fields, derivs, RBC_PARAMS)


def test_rbc_manufactured_divergence_free_velocity():
    n = 64
    h = 2 * np.pi / n
    x = np.arange(n) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    u = torch.tensor(np.sin(X) * np.sin(Y))
    v = torch.tensor(np.cos(X) * np.cos(Y))
    bc = BCSpec.periodic(2)
    derivs = {}
    fields = {"u": u, "v": v, "p": u * 0, "T": u * 0}
    for name, f in fields.items():
        derivs[f"{name}_x"] = spatial_derivative(f, 0, "first", (h, h), bc)
        derivs[f"{name}_y"] = spatial_derivative(f, 1, "first", (h, h), bc)
    for name in ("u", "v", "T"):
        derivs[f"lap_{name}"] = spatial_derivative(fields[name], None, "laplacian", (h, h), bc)
    out = rbc_rhs(fields, derivs, RBC_PARAMS)
    # each term is cos(x)sin(y) up to O(h^4); the two truncation errors cancel exactly by symmetry
    assert float(out["continuity"].abs().max()) < 1e-12
    np.testing.assert_allclose(derivs["u_x"].numpy(), np.cos(X) * np.sin(Y), atol=h**4)
