from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from pinmeta.history import git_available
from synthetic_corpus import build_corpus

FIXTURES = Path(__file__).parent / "fixtures"
REGISTRY_FIXTURE = FIXTURES / "registry.json"
ADVISORIES_FIXTURE = FIXTURES / "advisories.json"
CUTOFF = "2021-01-01"

requires_git = pytest.mark.skipif(not git_available(), reason="git executable not found")


def pipeline_args(corpus: Path, out: Path, *extra: str) -> list[str]:
    return [
        "--corpus",
        str(corpus),
        "--registry-fixture",
        str(REGISTRY_FIXTURE),
        "--advisories",
        str(ADVISORIES_FIXTURE),
        "--cutoff",
        CUTOFF,
        "--out",
        str(out),
        *extra,
    ]


@pytest.fixture(scope="session")
def ground_truth() -> dict:
    return json.loads((FIXTURES / "ground_truth.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    if not git_available():
        pytest.skip("git executable not found")
    return build_corpus(tmp_path_factory.mktemp("synthetic") / "corpus")


@pytest.fixture(scope="session")
def pipeline_out(corpus_dir: Path, tmp_path_factory: pytest.TempPathFactory) -> Path:
    from pinmeta.cli import main

    out = tmp_path_factory.mktemp("pipeline") / "out"
    assert main(["run", *pipeline_args(corpus_dir, out, "--jobs", "1")]) == 0
    return out


@pytest.fixture
def corpus_copy(corpus_dir: Path, tmp_path: Path) -> Path:
    dest = tmp_path / "corpus"
    shutil.copytree(corpus_dir, dest)
    return dest


SIX_REPOS = ["alpha-bio", "beta-seq", "epsilon-git", "iota-erlang", "mu-media", "xi-cleanup"]


@pytest.fixture(scope="session")
def six_repo_scan(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Scan artifacts of a six-repository subset of the synthetic corpus."""
    from pinmeta.cli import main

    if not git_available():
        pytest.skip("git executable not found")
    root = tmp_path_factory.mktemp("six")
    build_corpus(root / "corpus", SIX_REPOS)
    assert main(["scan", *pipeline_args(root / "corpus", root / "out", "--jobs", "1")]) == 0
    return root / "out"


# criterion number -> (passed, description); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter) -> None:
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}")
