import math
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from physr.core import FieldSequence, GridSpec
from physr.errors import ConfigError, DataError
from physr.pde import GS2D, GrayScottParams, PDESystem, gs_reaction
from physr.residual import (
    BCSpec,
    FDKernelSet,
    Face,
    data_loss,
    derivative_1d,
    fd_weights,
    central_offsets,
    laplacian_periodic,
    pad_with_bcs,
    pde_residual,
    physics_loss,
    spatial_derivative,
    time_derivative,
    total_loss,
)

T64 = torch.float64


def periodic_grid(n, length=2 * math.pi):
    h = length / n
    return torch.arange(n, dtype=T64) * h, h


# ---------------------------------------------------------------------------
# stencils


def test_order4_coefficients_are_the_integer_stencils():
    k = FDKernelSet(4)
    assert [c * 12 for c in k.s1_exact] == [1, -8, 0, 8, -1]
    assert [c * 12 for c in k.s2_exact] == [-1, 16, -30, 16, -1]
    lap = FDKernelSet(4, spacing=(1.0, 1.0)).k_s2()
    assert lap[2, 2] * 12 == -60 and lap[2, 2] == -5.0
    assert FDKernelSet(4, spacing=(1.0,) * 3).k_s2()[2, 2, 2] * 12 == -90
    h = 0.5
    assert FDKernelSet(4, spacing=(h, h)).k_s2()[2, 2] == pytest.approx(-5 / h**2)
    np.testing.assert_array_equal(FDKernelSet(4, dt=2.0).k_t, [-0.25, 0, 0.25])


@pytest.mark.parametrize("order", [2, 4, 6])
@pytest.mark.parametrize("deriv", [1, 2])
def test_weights_match_vandermonde_oracle(order, deriv):
    offs = central_offsets(order)
    n = len(offs)
    # sum_j w_j * o_j^k = k! * [k == deriv] for k < n
    A = np.array([[float(o) ** k for o in offs] for k in range(n)])
    b = np.zeros(n)
    b[deriv] = math.factorial(deriv)
    np.testing.assert_allclose([float(c) for c in fd_weights(offs, deriv)], np.linalg.solve(A, b), atol=1e-12)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_stencil_invariants(order):
    k = FDKernelSet(order)
    s1, s2 = k.s1_exact, k.s2_exact
    assert sum(s1) == 0 and sum(s2) == 0
    assert all(a == -b for a, b in zip(s1, s1[::-1]))
    # affine exactness: first derivative of x_j = j is exactly 1
    assert sum(c * j for c, j in zip(s1, central_offsets(order))) == 1
    assert k.k_s2().sum() == pytest.approx(0, abs=1e-12)


def test_bad_order_rejected():
    with pytest.raises(ConfigError):
        FDKernelSet(3)


def _sin_error(n, order=4):
    x, h = periodic_grid(n)
    d = spatial_derivative(torch.sin(x), 0, "first", (h,), BCSpec.periodic(1, order // 2), order)
    return float((d - torch.cos(x)).abs().max())


def test_first_derivative_convergence_order():
    e64, e128 = _sin_error(64), _sin_error(128)
    assert e64 <= 1e-5
    assert math.log2(e64 / e128) == pytest.approx(4.0, abs=0.3)
    e2 = _sin_error(64, 2) / _sin_error(128, 2)
    assert math.log2(e2) == pytest.approx(2.0, abs=0.3)
    assert math.log2(_sin_error(32, 6) / _sin_error(64, 6)) == pytest.approx(6.0, abs=0.3)


def test_constants_annihilated():
    x = torch.full((3, 12, 10), 4.25, dtype=T64)
    sp = (0.3, 0.7)
    for order in (2, 4, 6):
        for bc in (BCSpec.periodic(2, order // 2), BCSpec.uniform("none", 2, order // 2)):
            assert torch.all(spatial_derivative(x, None, "laplacian", sp, bc, order) == 0)
            assert float(spatial_derivative(x, 1, "first", sp, bc, order).abs().max()) < 1e-12
    assert torch.all(laplacian_periodic(x, sp) == 0)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_polynomial_exactness_with_one_sided_edges(order):
    # one-sided edge stencils have width order + deriv, so the whole line is exact
    rng = np.random.default_rng(order)
    n, h = 16, 0.125
    x = torch.arange(n, dtype=T64) * h - 1.0
    bc = BCSpec.uniform("none", 1, order // 2)
    for deriv, degree in ((1, order), (2, order + 1)):
        c = rng.uniform(-1, 1, degree + 1)
        p = np.polynomial.Polynomial(c)
        got = derivative_1d(torch.tensor(p(x.numpy())), 0, deriv, (h,), bc, order)
        np.testing.assert_allclose(got.numpy(), p.deriv(deriv)(x.numpy()), atol=1e-8)


def test_axis_out_of_range():
    with pytest.raises(DataError, match="axis"):
        spatial_derivative(torch.zeros(8, 8), 2, "first", (1.0, 1.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16), st.integers(-20, 20), st.integers(-20, 20))
def test_periodic_derivative_is_shift_equivariant(seed, s0, s1):
    x = torch.tensor(np.random.default_rng(seed).standard_normal((12, 10)))
    bc = BCSpec.periodic(2)
    for which, axis in (("first", 0), ("first", 1), ("laplacian", None)):
        d = spatial_derivative(x, axis, which, (1.0, 0.5), bc)
        ds = spatial_derivative(torch.roll(x, (s0, s1), (0, 1)), axis, which, (1.0, 0.5), bc)
        torch.testing.assert_close(ds, torch.roll(d, (s0, s1), (0, 1)), atol=1e-12, rtol=0)


def test_roll_laplacian_agrees_with_ghost_laplacian():
    x = torch.tensor(np.random.default_rng(0).standard_normal((2, 9, 11)))
    for order in (2, 4, 6):
        a = laplacian_periodic(x, (0.5, 2.0), order)
        b = spatial_derivative(x, None, "laplacian", (0.5, 2.0), BCSpec.periodic(2, order // 2), order)
        torch.testing.assert_close(a, b, atol=1e-12, rtol=0)


# ---------------------------------------------------------------------------
# boundary padding


def test_periodic_pad_wraps():
    out = pad_with_bcs(torch.tensor([1.0, 2, 3, 4]), BCSpec.periodic(1, 2))
    assert out.tolist() == [3, 4, 1, 2, 3, 4, 1, 2]


def test_neumann_homogeneous_constant_ghosts():
    out = pad_with_bcs(torch.full((6,), 3.5, dtype=T64), BCSpec.uniform("neumann", 1, 3))
    assert torch.all(out == 3.5) and out.numel() == 12


def test_neumann_slope_continues_line():
    h, s = 0.25, -1.75
    x = 2.0 + s * h * torch.arange(8, dtype=T64)
    out = pad_with_bcs(x, BCSpec.uniform("neumann", 1, 2, value=s), (h,))
    line = 2.0 + s * h * torch.arange(-2, 10, dtype=T64)
    torch.testing.assert_close(out, line, atol=1e-12, rtol=0)
    # second-order one-sided difference at each face
    lo = (-3 * out[2] + 4 * out[3] - out[4]) / (2 * h)
    hi = (3 * out[-3] - 4 * out[-4] + out[-5]) / (2 * h)
    assert abs(float(lo) - s) < 1e-12 and abs(float(hi) - s) < 1e-12


def test_dirichlet_overwrite_and_odd_reflection():
    x = torch.arange(6, dtype=T64)
    bc = BCSpec(((Face("dirichlet", 10.0), Face("dirichlet", -1.0)),), 2)
    out = pad_with_bcs(x, bc)
    assert out[2] == 10 and out[-3] == -1
    # ghost u_{-j} = 2 g - u_j
    assert out[:2].tolist() == [2 * 10 - 2, 2 * 10 - 1]
    assert out[-2:].tolist() == [2 * -1 - 4, 2 * -1 - 3]


def test_mixed_periodic_faces_rejected():
    with pytest.raises(ConfigError, match="pairs"):
        BCSpec(((Face("periodic"), Face("neumann")),))
    with pytest.raises(ConfigError):
        pad_with_bcs(torch.zeros(6), BCSpec.uniform("none", 1))


# ---------------------------------------------------------------------------
# time derivative


def _seq(values, dt):
    values = np.asarray(values, dtype=np.float64)
    return FieldSequence(values, dt, GridSpec.uniform(5), ("u",))


def test_time_derivative_constant_linear_quadratic():
    dt = 0.5
    t = np.arange(7) * dt
    base = np.ones((7, 1, 5, 5))
    assert torch.all(time_derivative(_seq(3 * base, dt)) == 0)
    lin = time_derivative(_seq(t[:, None, None, None] * base, dt))
    assert torch.all(lin == 1)
    quad = time_derivative(_seq((t**2)[:, None, None, None] * base, dt))
    np.testing.assert_array_equal(quad[1:-1, 0, 0, 0].numpy(), 2 * t[1:-1])
    with pytest.raises(DataError, match="3 frames"):
        time_derivative(_seq(base[:2], dt))
    with pytest.raises(ConfigError):
        time_derivative(torch.zeros(4, 3))


# ---------------------------------------------------------------------------
# residuals


GS = PDESystem(GS2D, GrayScottParams(0.16, 0.08, 0.06, 0.062))


def test_residual_zero_at_trivial_steady_state():
    hr = torch.zeros(5, 2, 8, 8, dtype=T64)
    hr[:, 0] = 1.0
    k = FDKernelSet(4, 10.0, (1.0, 1.0))
    assert torch.all(pde_residual(hr, GS, k) == 0)
    batched = pde_residual(hr.expand(3, -1, -1, -1, -1), GS, k)
    assert batched.shape == (3, 5, 2, 8, 8) and torch.all(batched == 0)


def test_residual_channel_mismatch():
    with pytest.raises(DataError, match="channels"):
        pde_residual(torch.zeros(5, 3, 8, 8), GS, FDKernelSet())


def test_residual_linear_part_isolates_reaction():
    rng = np.random.default_rng(4)
    hr = torch.tensor(rng.uniform(0, 1, (5, 2, 8, 8)))
    k = FDKernelSet(4, 1.0, (1.0, 1.0))
    a = 1.7
    lhs = pde_residual(a * hr, GS, k) - a * pde_residual(hr, GS, k)
    ru_a, rv_a = gs_reaction(a * hr[:, 0], a * hr[:, 1], GS.params)
    ru, rv = gs_reaction(hr[:, 0], hr[:, 1], GS.params)
    expect = -torch.stack([ru_a - a * ru, rv_a - a * rv], 1)
    torch.testing.assert_close(lhs, expect, atol=1e-12, rtol=0)


def _heat_residual(n, nt, t_end=0.5):
    x, h = periodic_grid(n)
    dt = t_end / (nt - 1)
    t = torch.arange(nt, dtype=T64) * dt
    u = torch.exp(-t)[:, None] * torch.sin(x)[None, :]
    r = time_derivative(u, dt) - spatial_derivative(u, None, "laplacian", (h,), BCSpec.periodic(1))
    return float(r[1:-1].abs().max()), h, dt


def test_manufactured_heat_solution():
    coarse = _heat_residual(32, 11)
    fine = _heat_residual(64, 21)
    for err, h, dt in (coarse, fine):
        assert err <= 1.0 * (h**4 + dt**2)
    assert coarse[0] / fine[0] == pytest.approx(4.0, rel=0.1)


# ---------------------------------------------------------------------------
# losses


def test_physics_loss_closed_forms():
    assert float(physics_loss(torch.zeros(3, 4))) == 0
    for n in (1, 7, 100):
        assert float(physics_loss(torch.ones(n, dtype=T64))) == pytest.approx(n**-0.5, rel=1e-14)
    r = torch.tensor(np.random.default_rng(1).standard_normal((2, 3, 4, 4)))
    assert float(physics_loss(-3.0 * r)) == pytest.approx(3.0 * float(physics_loss(r)), rel=1e-14)
    assert float(physics_loss(torch.ones(4, 2), count=4)) == pytest.approx(8**0.5 / 4)
    assert float(physics_loss(2 * torch.ones(5), squared=True)) == 4


def test_loss_invariant_to_batch_order_and_periodic_shift():
    rng = np.random.default_rng(9)
    hr = torch.tensor(rng.uniform(0, 1, (4, 5, 2, 8, 8)))
    k = FDKernelSet(4, 1.0, (1.0, 1.0))
    base = physics_loss(pde_residual(hr, GS, k))
    perm = physics_loss(pde_residual(hr[[2, 0, 3, 1]], GS, k))
    shift = physics_loss(pde_residual(torch.roll(hr, (3, -2), (-2, -1)), GS, k))
    assert float(perm) == pytest.approx(float(base), rel=1e-12)
    assert float(shift) == pytest.approx(float(base), rel=1e-12)


def test_data_and_total_loss():
    a = torch.tensor(np.random.default_rng(2).standard_normal((2, 3, 4)))
    assert float(data_loss(a, a)) == 0
    assert float(data_loss(a + 1, a)) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(DataError, match="shape"):
        data_loss(a, a[:1])
    assert float(total_loss(torch.tensor(0.3), torch.tensor(5.0), beta=0)) == pytest.approx(0.3)
    assert float(total_loss(torch.tensor(0.3), torch.tensor(4.0))) == pytest.approx(0.3 + 0.025 * 4)
