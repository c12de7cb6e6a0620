import json
from pathlib import Path

import pytest

from spiralis.cli import main

jsonschema = pytest.importorskip("jsonschema")

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


def schema(name):
    s = json.loads((ROOT / "docs" / f"{name}.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(s)
    return jsonschema.Draft202012Validator(s)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_conform(path):
    schema("config").validate(json.loads(path.read_text()))


def test_bare_problem_conforms():
    problem = json.loads((CONFIGS / "example1.json").read_text())["problem"]
    schema("config").validate(problem)


@pytest.mark.parametrize("bad", [{}, {"problem": {"x0": 0}}, {"problem": {}, "n": 0}])
def test_invalid_configs_rejected(bad):
    assert not schema("config").is_valid(bad)


@pytest.mark.parametrize("args", [
    ["refine", "--config", str(CONFIGS / "example2.json"), "--structure", "+ P - M"],
    ["solve", "--config", str(CONFIGS / "circle.json")],
    ["solve", "--config", str(CONFIGS / "example1.json"), "--phase", "direct", "--n", "60",
     "--starts", "1"],
], ids=["refined", "trivial", "direct"])
def test_artifacts_conform(args, tmp_path):
    main(args + ["--out", str(tmp_path), "--no-plots"])
    schema("solution").validate(json.loads((tmp_path / "solution.json").read_text()))
    schema("report").validate(json.loads((tmp_path / "report.json").read_text()))
