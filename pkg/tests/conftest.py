import json
from pathlib import Path

import pytest

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "fixture12"


def make_fixture_config(tmp_path: Path, out_name: str = "out", **overrides) -> Path:
    """Materialize the shipped fixture config with absolute paths and a
    throwaway output directory."""
    raw = json.loads((FIXTURE_DIR / "config.json").read_text(encoding="utf-8"))
    for key in ("corpus", "pool", "library", "docs_manifest", "docs_dir"):
        raw[key] = str(FIXTURE_DIR / raw[key])
    raw["out_dir"] = str(tmp_path / out_name)
    raw["cache_dir"] = str(tmp_path / out_name / "cache")
    raw.update(overrides)
    path = tmp_path / f"config_{out_name}.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


@pytest.fixture
def fixture_config(tmp_path):
    def make(out_name="out", **overrides):
        return make_fixture_config(tmp_path, out_name, **overrides)

    return make
