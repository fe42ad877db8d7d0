import importlib.util
import pathlib

import pytest

SCRIPTS = pathlib.Path(__file__).resolve().parents[1] / "scripts"


def load(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.mark.parametrize("name, extra", [
    ("run_example1", ["--rho", "0", "--n", "40"]),
    ("run_example2", ["--n", "60", "--b-reps", "20"]),
])
def test_table_scripts(tmp_path, name, extra):
    out = tmp_path / "t.csv"
    load(name).main(["--settings", "1", "--reps", "2", "--d", "4", "--tests", "adaptive-lp,l2",
                     "--m-inner", "200", "--m-outer", "20", "--workers", "1",
                     "--out", str(out), *extra])
    lines = out.read_text().strip().split("\n")
    assert lines[0].startswith("test,setting,n,d") and len(lines) == 3


def test_measure_curves(capsys):
    load("measure_curves").main(["--d", "3", "--scales", "1", "2", "--m-inner", "400"])
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == "norm,scale,acceptance_rate,mult_factor"
    # lp family of size 5 and ssq family of size 3 at two scales
    assert len(lines) == 1 + 2 * (5 + 3)
