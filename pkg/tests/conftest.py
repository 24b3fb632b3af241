import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from physr.core import FieldSequence, GridSpec  # noqa: E402
from physr.degrade import DegradeSpec, pair_manifest  # noqa: E402
from physr.pde import PDESystem  # noqa: E402
from physr.simulate import SimSpec, simulate_many  # noqa: E402

GS2 = PDESystem.preset("gs2d")

# Desk-scale corpus: 64^2 HR, frames t = 1000..1080 every 10 (9 HR / 5 LR frames), 8 train / 3 test.
TOY_SIM = dict(t_start=1000.0, t_end=1080.0, snapshot_dt=10.0, internal_dt=0.5)
TOY_SAMPLES = 11
TOY_DEGRADE = DegradeSpec(2, 4)


def make_tiny_manifest(n=3, hr_size=20, frames=5, r_t=2, r_s=4, seed=0):
    """Random smooth-ish pairs; enough structure for smoke tests, not physics."""
    rng = np.random.default_rng(seed)
    g = GridSpec.uniform(hr_size)
    X, Y = g.mesh()
    corpus = []
    for _ in range(n):
        phase = rng.uniform(0, 2 * np.pi, 2)
        t = np.arange(frames)[:, None, None]
        u = 0.6 + 0.2 * np.sin(2 * np.pi * X / hr_size + phase[0] + 0.1 * t)
        v = 0.2 + 0.1 * np.cos(2 * np.pi * Y / hr_size + phase[1] - 0.1 * t)
        vals = np.stack([u, v], 1) + 0.01 * rng.standard_normal((frames, 2, hr_size, hr_size))
        corpus.append(FieldSequence(vals.astype(np.float32), 10.0, g, GS2.channels))
    return pair_manifest(corpus, DegradeSpec(r_t, r_s), GS2)


@pytest.fixture
def tiny_manifest():
    return make_tiny_manifest()


@pytest.fixture(scope="session")
def toy_manifest():
    spec = SimSpec(GS2, GridSpec.uniform(64), **TOY_SIM)
    hrs = [h.astype(np.float32) for h in simulate_many(spec, seeds=range(TOY_SAMPLES))]
    return pair_manifest(hrs, TOY_DEGRADE, GS2)


# one status line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
