import shutil
from pathlib import Path

import pytest

from codelog.extractors import extract_worktree
from codelog.facts import FactsArchive

FIXTURES = Path(__file__).parent / "fixtures"
QUERIES = Path(__file__).parent.parent / "queries"

PYREPO = FIXTURES / "pyrepo"
POMREPO = FIXTURES / "pomrepo"


@pytest.fixture(scope="session")
def pyrepo() -> Path:
    return PYREPO


@pytest.fixture(scope="session")
def pomrepo() -> Path:
    return POMREPO


@pytest.fixture(scope="session")
def py_extraction():
    return extract_worktree("python", PYREPO)


@pytest.fixture(scope="session")
def py_archive(py_extraction) -> FactsArchive:
    return FactsArchive.build(
        "python", "pyrepo", "c0", py_extraction.file_entries, py_extraction.relations
    )


@pytest.fixture(scope="session")
def xml_extraction():
    return extract_worktree("xml", POMREPO)


@pytest.fixture(scope="session")
def xml_archive(xml_extraction) -> FactsArchive:
    return FactsArchive.build(
        "xml", "pomrepo", "p0", xml_extraction.file_entries, xml_extraction.relations
    )


def query_path(name: str) -> Path:
    return QUERIES / name


def copy_repo(src: Path, dst: Path) -> Path:
    shutil.copytree(src, dst)
    return dst
