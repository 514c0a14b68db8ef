import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from codetations import StoreRoot


@pytest.fixture
def repo(tmp_path: Path) -> StoreRoot:
    """An empty temporary repository root."""
    return StoreRoot(tmp_path)


@pytest.fixture
def write_source(repo: StoreRoot):
    """Write a source file into the temp repo and return its relative path."""

    def _write(rel: str, text: str) -> str:
        full = repo.repo_root / rel
        full.parent.mkdir(parents=True, exist_ok=True)
        full.write_text(text, encoding="utf-8")
        return rel

    return _write
