"""Shared fixtures: shipped experiment configs executed once per session."""
import json
import time
from pathlib import Path

import pytest

from fracshe.harness import execute, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class Battery:
    """Outcome of one shipped config: record, verdict JSON per experiment, wall time."""

    def __init__(self, name: str, root: Path):
        self.cfg = load_config(CONFIGS / f"{name}.json", {"output_dir": str(root)})
        t0 = time.perf_counter()
        self.record, _ = execute(self.cfg)
        self.seconds = time.perf_counter() - t0
        self.verdicts = {
            n: json.loads((self.record.directory / f"{n}.json").read_text()) for n in self.record.verdicts
        }

    def metrics(self, experiment: str) -> dict:
        return self.verdicts[experiment]["metrics"]


@pytest.fixture(scope="session")
def battery(tmp_path_factory):
    cache: dict[str, Battery] = {}
    root = tmp_path_factory.mktemp("runs")

    def get(name: str) -> Battery:
        if name not in cache:
            cache[name] = Battery(name, root)
        return cache[name]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  #{number:<2} {title}: {detail}")
