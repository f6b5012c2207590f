import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from amrf.synth import SynthSpec, generate_synthetic  # noqa: E402

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    n = dict(report.user_properties).get("criterion")
    if n is None:
        return
    _CRITERIA.setdefault(n, []).append((report.nodeid.split("::")[-1], report.outcome))


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        ok = all(outcome == "passed" for _, outcome in results)
        names = ", ".join(name for name, _ in results)
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  ({names})")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_sets(tmp_path_factory):
    """Small sharp training set and a zoomed, blurred test set at 192 px."""
    root = tmp_path_factory.mktemp("small")
    train = generate_synthetic(SynthSpec(count=24, seed=5, size=192, split="train", prefix="tr"), root / "train")
    test = generate_synthetic(
        SynthSpec(count=16, seed=6, size=192, split="test", prefix="te", zoom_range=(0.9, 1.8), blur_range=(1, 5)),
        root / "test",
    )
    return root, train, test


@pytest.fixture(scope="session")
def style_sets(tmp_path_factory):
    """Two independent 200-sample sets for density fitting and held-out checks."""
    root = tmp_path_factory.mktemp("styles")
    fit = generate_synthetic(SynthSpec(count=200, seed=21, size=192, split="train", prefix="a"), root / "fit")
    held = generate_synthetic(SynthSpec(count=200, seed=22, size=192, split="test", prefix="b"), root / "held")
    return fit, held
