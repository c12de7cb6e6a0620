import json
import shutil
import subprocess
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from conftest import refined
from spiralis import plots
from spiralis.cli import EXIT_FAIL, EXIT_OK, EXIT_UNVERIFIED, RunConfig, main
from spiralis.serialize import load_solution, read_samples, sample_table

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SVG = "{http://www.w3.org/2000/svg}"


def junction_dots(svg_path) -> int:
    root = ET.parse(svg_path).getroot()
    group = next(g for g in root.iter(f"{SVG}g") if g.get("id") == "junctions")
    return sum(1 for _ in group.iter(f"{SVG}use"))


@pytest.fixture(scope="module")
def ex2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ex2")
    code = main(["refine", "--config", str(CONFIGS / "example2.json"), "--structure", "+ P - M",
                 "--out", str(out)])
    return code, out


def test_refine_writes_artifacts(ex2_run):
    code, out = ex2_run
    assert code == EXIT_OK
    for name in ("trajectory.csv", "solution.json", "report.json", "curve.svg", "series.svg"):
        assert (out / name).is_file(), name
    # atomic writes leave no temporary files behind
    assert not [p for p in out.iterdir() if p.name.startswith(".")]
    data = json.loads((out / "solution.json").read_text())
    assert data["structure"] == "+ P - M" and data["verdict"] == "pass"
    assert data["b"] == pytest.approx(19.012850374851, abs=1e-8)


def test_csv_round_trip_is_bitwise(ex2_run):
    _, out = ex2_run
    table = read_samples(out / "trajectory.csv")
    assert np.array_equal(table, sample_table(refined("ex2")))


def test_junction_dots_example2(ex2_run):
    _, out = ex2_run
    assert junction_dots(out / "curve.svg") == 3


def test_junction_dots_example3c(tmp_path):
    code = main(["refine", "--config", str(CONFIGS / "example3b.json"),
                 "--structure", "- + - 0 - + -", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert junction_dots(tmp_path / "curve.svg") == 6


def test_verify_and_plot_subcommands(ex2_run, tmp_path, capsys):
    _, out = ex2_run
    assert main(["verify", "--solution", str(out / "solution.json"), "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["verdict"] == "pass"
    assert "overall: pass" in capsys.readouterr().out
    assert main(["plot", "--solution", str(out / "solution.json"), "--out", str(tmp_path)]) == EXIT_OK
    assert junction_dots(tmp_path / "curve.svg") == 3


def test_refine_from_previous_solution(ex2_run, tmp_path, capsys):
    _, out = ex2_run
    code = main(["refine", "--config", str(CONFIGS / "example2.json"), "--from",
                 str(out / "solution.json"), "--out", str(tmp_path), "--no-plots"])
    assert code == EXIT_OK
    assert "structure: + P - M" in capsys.readouterr().out
    assert not (tmp_path / "curve.svg").exists()


def test_direct_phase_is_unverified(tmp_path):
    # first-order Hamiltonian drift exceeds the tolerance on the direct route
    code = main(["solve", "--config", str(CONFIGS / "example1.json"), "--phase", "direct",
                 "--n", "100", "--starts", "1", "--out", str(tmp_path), "--no-plots"])
    assert code == EXIT_UNVERIFIED
    saved = json.loads((tmp_path / "report.json").read_text())
    assert main(["verify", "--solution", str(tmp_path / "solution.json")]) == EXIT_UNVERIFIED
    again = json.loads((tmp_path / "report.json").read_text())
    for a, b in zip(saved["checks"], again["checks"]):
        assert a["name"] == b["name"]
        assert a["residual"] == pytest.approx(b["residual"], rel=1e-6, abs=1e-12)


@pytest.mark.parametrize("config", ["line.json", "circle.json"])
def test_trivial_configs(config, tmp_path, capsys):
    code = main(["solve", "--config", str(CONFIGS / config), "--out", str(tmp_path)])
    assert code == EXIT_OK
    data = json.loads((tmp_path / "solution.json").read_text())
    assert data["b"] == 0.0 and data["trivial"] in ("line", "circle")
    assert capsys.readouterr().out.startswith("b = 0.000000000000")


def test_bad_structure_exits_with_error(tmp_path, capsys):
    code = main(["refine", "--config", str(CONFIGS / "example1.json"), "--structure", "+ +",
                 "--out", str(tmp_path)])
    assert code == EXIT_FAIL
    assert "error:" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_FAIL


def test_empty_trajectory(ex2_run, tmp_path):
    _, out = ex2_run
    for name in ("solution.json", "trajectory.csv"):
        shutil.copy(out / name, tmp_path / name)
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    (tmp_path / "trajectory.csv").write_text(header + "\n")
    assert main(["plot", "--solution", str(tmp_path / "solution.json")]) == EXIT_FAIL
    with pytest.raises(ValueError):
        plots.plot_curve(tmp_path / "c.svg", [], [], [])


def test_plot_axes_cover_samples(ex2_run, monkeypatch, tmp_path):
    _, out = ex2_run
    limits = []

    def capture(fig, path):
        limits.extend((ax.get_xlim(), ax.get_ylim()) for ax in fig.axes)
        plots.plt.close(fig)

    monkeypatch.setattr(plots, "_save", capture)
    loaded = load_solution(out / "solution.json")
    plots.plot_solution(tmp_path, loaded)
    (xl, yl) = limits[0]
    x, y = loaded.column("x"), loaded.column("y")
    assert xl[0] <= x.min() and xl[1] >= x.max()
    assert yl[0] <= y.min() and yl[1] >= y.max()
    t = loaded.column("t")
    for (xlim, _), name in zip(limits[1:], plots.TIME_SERIES):
        assert xlim[0] <= t[0] and xlim[1] >= t[-1], name


def test_run_config_accepts_bare_problem(tmp_path):
    problem = json.loads((CONFIGS / "example1.json").read_text())["problem"]
    path = tmp_path / "bare.json"
    path.write_text(json.dumps(problem))
    cfg = RunConfig.from_file(path, n=50, out=tmp_path / "o", seed=None)
    assert cfg.n == 50 and cfg.seed == 0 and cfg.out == tmp_path / "o"
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError):
        RunConfig.from_file(tmp_path / "bad.json")


def test_console_script_help():
    exe = shutil.which("spiralis")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "--help"], capture_output=True, text=True, check=True)
    for sub in ("solve", "refine", "verify", "plot"):
        assert sub in res.stdout
