import numpy as np
import pytest

from vitinflate import ViTConfig, random_checkpoint

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and report.when == "call":
        _CRITERIA.append((marker.args[0], report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_cfg():
    return ViTConfig(image_h=8, image_w=8, patch_p=4, in_channels=3, hidden_d=8,
                     layers_l=2, heads=2, num_classes=3)


@pytest.fixture
def tiny_ckpt(tiny_cfg):
    return random_checkpoint(tiny_cfg, seed=7)
