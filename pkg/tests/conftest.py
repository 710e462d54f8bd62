import shutil
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from riptide.campaign import Campaign, Discovery
from riptide.config import load_campaign_config

FIXTURES = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(Path(__file__).parent))

VS = "versioned_set.py::VersionedSet."
INCREMENT = VS + "__increment_version()=>void-empty"
ADD = VS + "add(item)=>void-empty"
EQUALS_TRUE = VS + "equals(other)=>True"
EQUALS_FALSE = VS + "equals(other)=>False"
INTERSECT_NONE = VS + "intersect(other)=>None"
EMPTY_TRUE = VS + "is_empty()=>True"
EMPTY_FALSE = VS + "is_empty()=>False"

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    rep = outcome.get_result()
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria[number] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, verdict = _criteria[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {title}")


def copy_fixture(dest_parent: Path, name: str) -> Path:
    dest = dest_parent / name
    shutil.copytree(FIXTURES / name, dest, ignore=shutil.ignore_patterns("__pycache__", ".riptide"))
    return dest


@pytest.fixture
def fixture_project(tmp_path):
    """Factory copying a bundled fixture into a fresh temporary directory."""
    return lambda name: copy_fixture(tmp_path, name)


@dataclass
class FinishedCampaign:
    campaign: Campaign
    discovery: Discovery
    diagnoses: dict
    elapsed: float

    @property
    def root(self) -> Path:
        return self.campaign.root


@pytest.fixture(scope="session")
def versioned_set_campaign(tmp_path_factory):
    """The fixture campaign at N=10: discover, diagnose and report, timed."""
    root = copy_fixture(tmp_path_factory.mktemp("vs"), "versioned_set")
    start = time.monotonic()
    c = Campaign(load_campaign_config(root, runs=10))
    disc = c.discover()
    diagnoses = {d.transformation_id: d for d in c.diagnose()}
    c.report()
    return FinishedCampaign(c, disc, diagnoses, time.monotonic() - start)
