"""Shared fixtures: the session-wide toy corpus and the end-of-run summary
for the headline checks in test_acceptance.py."""

import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

import synthdata  # noqa: E402

from polymix.corpus import load_manifest  # noqa: E402

settings.register_profile("suite", max_examples=50, deadline=None,
                          derandomize=True)
settings.load_profile("suite")


class Corpus:
    def __init__(self, manifest: Path):
        self.manifest = manifest
        self.root = manifest.parent
        self.index = load_manifest(manifest)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Corpus:
    """Toy corpus with 2 clips per (instrument, dastgah, tempo bucket) cell."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = synthdata.build_corpus(root, clips_per_cell=2)
    return Corpus(manifest)


# One line per headline check, printed after the run regardless of capture.
_RESULTS: list[tuple[str, bool, str]] = []


def record_result(name: str, passed: bool, detail: str) -> None:
    _RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("headline checks")
    for name, passed, detail in _RESULTS:
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {name}: {detail}")
