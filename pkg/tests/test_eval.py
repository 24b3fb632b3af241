import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GS2
from physr.core import FieldSequence, GridSpec
from physr.degrade import DegradeSpec, degrade
from physr.errors import DataError
from physr.evaluation import (
    REFERENCE_ABLATION,
    VARIANTS,
    EvalReport,
    evaluate_baseline,
    format_table,
    interp_baseline,
    relative_error,
    relative_l2,
    variant_configs,
)
from physr.model import PhySR, PhySRConfig, count_params
from physr.train import TrainConfig, config_hash
from test_model import closed_form_count


# ---------------------------------------------------------------------------
# metric


def test_relative_error_closed_forms():
    u = np.random.default_rng(0).standard_normal((3, 2, 6, 6)) + 2
    assert relative_error(u, u) == 0.0
    assert relative_error(u, np.zeros_like(u)) == pytest.approx(100.0, abs=1e-10)
    # ||e|| = 0.04 ||u*||  ->  sqrt(0.04) * 100 = 20
    assert relative_error(u, 1.04 * u) == pytest.approx(20.0, abs=1e-10)
    assert relative_l2(u, 1.04 * u) == pytest.approx(4.0, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_relative_error_scale_invariant(s, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 4, 2, 5, 5))
    assert relative_error(s * a, s * b) == pytest.approx(relative_error(a, b), rel=1e-9)


def test_relative_error_rejects_zero_truth_and_shape_mismatch():
    with pytest.raises(DataError, match="zero norm"):
        relative_error(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(DataError, match="shape"):
        relative_error(np.ones((2, 2)), np.ones((2, 3)))


# ---------------------------------------------------------------------------
# interpolation baseline


def _affine_hr(coef, n=20, frames=9, dt=10.0, channels=GS2.channels):
    g = GridSpec.uniform(n)
    X, Y = g.mesh()
    t = (np.arange(frames) * dt)[:, None, None]
    vals = []
    for a0, ax, ay, at in coef:
        vals.append(a0 + ax * X + ay * Y + at * t)
    return FieldSequence(np.stack(vals, 1), dt, g, channels)


def test_constant_field_is_reproduced_in_every_mode():
    hr = _affine_hr([(0.7, 0, 0, 0), (-0.2, 0, 0, 0)])
    spec = DegradeSpec(2, 4)
    for mode in ("clamp", "periodic", "extrapolate"):
        hat = interp_baseline(degrade(hr, spec), spec, mode)
        np.testing.assert_allclose(hat.values, hr.values, atol=1e-12)


def test_affine_exact_with_extrapolation():
    hr = _affine_hr([(0.3, 0.01, -0.02, 0.001), (1.0, -0.03, 0.005, -0.002)])
    spec = DegradeSpec(2, 4)
    notes = {}
    hat = interp_baseline(degrade(hr, spec), spec, "extrapolate", notes)
    assert hat.grid == hr.grid and hat.dt == hr.dt
    np.testing.assert_allclose(hat.values, hr.values, atol=1e-10)
    # LR nodes sit at block centres, so (r_s - 1)/2 rounded up HR nodes per side fall outside
    assert notes["nodes_outside_hull"] == [4, 4]


def test_clamp_exact_inside_hull_only():
    hr = _affine_hr([(0.3, 0.01, -0.02, 0.001), (1.0, -0.03, 0.005, -0.002)])
    spec = DegradeSpec(2, 4)
    hat = interp_baseline(degrade(hr, spec), spec, "clamp")
    inner = (slice(None), slice(None), slice(2, -2), slice(2, -2))
    np.testing.assert_allclose(hat.values[inner], hr.values[inner], atol=1e-10)
    assert np.abs(hat.values - hr.values).max() > 1e-3


def test_baseline_commutes_with_channel_permutation():
    rng = np.random.default_rng(3)
    g = GridSpec.uniform(6)
    lr = FieldSequence(rng.standard_normal((4, 3, 6, 6)), 20.0, g, ("a", "b", "c"))
    spec = DegradeSpec(2, 4)
    perm = [2, 0, 1]
    for mode in ("clamp", "periodic"):
        a = interp_baseline(lr, spec, mode).values[:, perm]
        b = interp_baseline(lr.replace(values=lr.values[:, perm]), spec, mode).values
        np.testing.assert_array_equal(a, b)


def test_baseline_time_nodes_pass_through():
    rng = np.random.default_rng(4)
    lr = FieldSequence(rng.standard_normal((3, 1, 5, 5)), 20.0, GridSpec.uniform(5), ("u",))
    spec = DegradeSpec(4, 1, blur="none")
    hat = interp_baseline(lr, spec)
    np.testing.assert_array_equal(hat.values[::4], lr.values)
    np.testing.assert_allclose(hat.values[2], 0.5 * (lr.values[0] + lr.values[1]))


def test_evaluate_baseline_report(tiny_manifest):
    rep = evaluate_baseline(tiny_manifest, "test")
    assert len(rep.per_sample) == len(tiny_manifest.test)
    assert rep.notes["boundary"] == "periodic" and rep.n_params is None
    row = rep.row()
    assert row["n_params"] == "N/A" and row["T_train_s"] == "N/A"
    assert float(row["eps_mean"]) == pytest.approx(rep.mean, abs=5e-5)
    for e, l2 in zip(rep.per_sample, rep.per_sample_l2):
        assert l2 == pytest.approx(e**2 / 100)


def test_unknown_boundary_mode(tiny_manifest):
    with pytest.raises(DataError, match="boundary"):
        evaluate_baseline(tiny_manifest, "test", boundary="mirror")


# ---------------------------------------------------------------------------
# parameter counts and ablation configs


def test_count_params_closed_form_extremes():
    bare = PhySRConfig(r_t=2, r_s=2, features=1, n_res_blocks=0)
    assert count_params(PhySR(bare)) == closed_form_count(2, 2, 2, 1, 0)
    for f in (8, 16):
        cfg = PhySRConfig(r_t=2, r_s=4, features=f)
        assert count_params(PhySR(cfg)) == closed_form_count(2, 2, 4, f, 2)


def test_count_params_frozen_excluded():
    model = PhySR(PhySRConfig(r_t=2, r_s=4, features=8))
    total = count_params(model)
    n_skip = sum(p.numel() for p in model.skip.parameters())
    for p in model.skip.parameters():
        p.requires_grad_(False)
    assert count_params(model) == total - n_skip
    assert count_params(model, trainable_only=False) == total


def test_variants_change_only_their_knob():
    mc, tc = PhySRConfig(r_t=2, r_s=4), TrainConfig()
    base = (mc.to_dict(), tc.to_dict())
    hashes = set()
    for v, (mk, tk) in VARIANTS.items():
        m2, t2 = variant_configs(v, mc, tc)
        dm = {k for k in base[0] if base[0][k] != m2.to_dict()[k]}
        dt = {k for k in base[1] if base[1][k] != t2.to_dict()[k]}
        assert dm == set(mk) and dt == set(tk)
        hashes.add(config_hash(m2.to_dict(), t2.to_dict()))
    assert len(hashes) == 4
    assert count_params(PhySR(variant_configs("B", mc, tc)[0])) < count_params(PhySR(mc))
    with pytest.raises(DataError, match="variant"):
        variant_configs("E", mc, tc)


def test_report_rows_and_table(tmp_path):
    from physr.evaluation import write_table

    rep = EvalReport("Model (A)", [1.0, 2.0, 3.0], [2.0, 4.0], n_params=10, t_train=0.5, t_infer_ms=1.25)
    assert rep.mean == 3.0 and rep.std == 1.0
    row = rep.row()
    assert row["per_seed"] == "2.0000,4.0000" and row["n_params"] == 10
    write_table([row, EvalReport("interpolation", [5.0]).row()], tmp_path / "t.tsv")
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[0].split("\t")[0] == "method" and len(lines) == 3
    assert format_table([row]).splitlines()[1].startswith("Model (A)\t10\t")
    with pytest.raises(DataError):
        write_table([], tmp_path / "empty.tsv")


def test_reference_values_cover_every_variant():
    assert set(REFERENCE_ABLATION) == set(VARIANTS)
    assert all(dataclasses.is_dataclass(c) for c in (PhySRConfig(), TrainConfig()))
