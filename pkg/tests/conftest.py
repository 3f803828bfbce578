import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402

from gsrc.drivers import generate, lorenz63, standardize  # noqa: E402
from gsrc.reservoir import Reservoir, ReservoirParams  # noqa: E402


@pytest.fixture(scope="session")
def l63():
    """Standardized Lorenz63 trajectory, 150 time units at dt=0.01."""
    traj, _ = standardize(generate(lorenz63(), 150.0, transient=50.0, seed=0))
    return traj


@pytest.fixture(scope="session")
def small_res():
    return Reservoir.build(ReservoirParams(n_nodes=120, input_dim=3, spectral_radius=0.8, pnz=0.05, seed=3))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full-size end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    reports = [r for key in ("passed", "failed", "error") for r in terminalreporter.stats.get(key, [])]
    if mod is None or not any("test_acceptance" in getattr(r, "nodeid", "") for r in reports):
        return
    seen = {r.nodeid.rsplit("::", 1)[-1] for r in reports if "test_acceptance" in getattr(r, "nodeid", "")}
    terminalreporter.section("acceptance criteria")
    for num, (name, test) in mod.CRITERIA.items():
        if num in mod.RESULTS:
            ok, detail = mod.RESULTS[num]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {name}: {detail}")
        elif test in seen:
            terminalreporter.write_line(f"[FAIL] {num}. {name}: did not complete")
        else:
            terminalreporter.write_line(f"[----] {num}. {name}: not run")
