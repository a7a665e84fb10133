import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])


TINY_CONFIG = """\
name: tiny
seeds: [0, 1]
dataset: {kind: two_moons, n_train: 80, n_test: 40}
model: {hidden: [8, 8], prototypes: 4}
train: {epochs: 3, stage2: {steps: 10}}
evaluation:
  ood: {kind: ring, n: 30}
  grid_resolution: 6
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_CONFIG)
    return path
