import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cctest import cli, corr
from cctest.stats import PValueVector, cct_combine


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def fields(out):
    return dict(line.split(": ", 1) for line in out.strip().splitlines())


@pytest.fixture
def pfile(tmp_path):
    def make(text, name="p.txt"):
        p = tmp_path / name
        p.write_text(text)
        return p
    return make


# --- combine ---------------------------------------------------------------------

def test_combine_single(capsys, pfile):
    code, out, _ = run(capsys, "combine", pfile("0.3\n"))
    assert code == 0
    f = fields(out)
    assert float(f["p_value"]) == pytest.approx(0.3, rel=1e-11)
    assert f["method"] == "CCT" and f["d"] == "1"


def test_combine_perfect_dependence(capsys, pfile):
    code, out, _ = run(capsys, "combine", pfile("0.01\n" * 10))
    assert code == 0 and fields(out)["p_value"] == "0.01"


def test_combine_agrees_with_library_to_printed_digits(capsys, pfile):
    values = [1e-6, 0.4, 0.6, 0.7]
    code, out, _ = run(capsys, "combine", pfile("# header\n" + "\n".join(map(str, values)) + "\n"))
    lib = cct_combine(PValueVector(values))
    assert fields(out)["p_value"] == f"{lib.p_value:.12g}"
    assert fields(out)["statistic"] == f"{lib.statistic:.12g}"


@pytest.mark.parametrize("text,line", [("0.0\n", 1), ("0.2\n# c\n1.5\n", 3), ("0.2\nabc\n", 2)])
def test_combine_rejects_bad_pvalue(capsys, pfile, text, line):
    p = pfile(text)
    code, _, err = run(capsys, "combine", p)
    assert code == 3
    assert f":{line}:" in err


def test_combine_clamp(capsys, pfile):
    code, out, _ = run(capsys, "combine", pfile("0.0\n0.5\n"), "--clamp")
    assert code == 0 and float(fields(out)["p_value"]) < 1e-15


def test_combine_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "combine", tmp_path / "nope.txt")
    assert code == 2 and "cannot read" in err


def test_combine_inline_weights(capsys, pfile):
    code, out, _ = run(capsys, "combine", pfile("0.01 3\n0.5 1\n"))
    lib = cct_combine(PValueVector([0.01, 0.5], [0.75, 0.25]))
    assert code == 0 and fields(out)["p_value"] == f"{lib.p_value:.12g}"


def test_combine_weights_file(capsys, pfile):
    p = pfile("0.01\n0.5\n")
    w = pfile("1\n1\n", "w.txt")
    code, out, _ = run(capsys, "combine", p, "--weights", w)
    assert code == 0
    lib = cct_combine([0.01, 0.5])
    assert fields(out)["p_value"] == f"{lib.p_value:.12g}"


def test_combine_weight_mismatch(capsys, pfile):
    code, _, err = run(capsys, "combine", pfile("0.01\n0.5\n"), "--weights", pfile("1\n", "w.txt"))
    assert code == 3


def test_combine_formats(capsys, pfile):
    p = pfile("0.02\n0.3\n")
    _, out, _ = run(capsys, "combine", p, "--format", "json-lines")
    row = json.loads(out)
    assert row["method"] == "CCT" and row["d"] == 2
    _, out, _ = run(capsys, "combine", p, "--format", "csv")
    head, vals = out.strip().splitlines()
    assert head == "method,d,statistic,p_value,calibration"
    assert vals.startswith("CCT,2,")


def test_combine_other_methods(capsys, pfile):
    p = pfile("0.01\n0.5\n0.9\n")
    code, out, _ = run(capsys, "combine", p, "--method", "MinP")
    assert code == 0 and float(fields(out)["p_value"]) == pytest.approx(1 - 0.99**3, rel=1e-11)
    code, out, _ = run(capsys, "combine", p, "--method", "BJ", "--n", 10_000, "--seed", 1)
    f = fields(out)
    assert code == 0 and f["calibration"] == "monte_carlo" and 0 < float(f["p_value"]) < 1


def test_combine_unknown_method(capsys, pfile):
    code, _, err = run(capsys, "combine", pfile("0.1\n"), "--method", "Fisher")
    assert code == 2 and "CCT, MinP, HC, BJ" in err


def test_combine_to_file(capsys, pfile, tmp_path):
    out_path = tmp_path / "o.txt"
    code, out, _ = run(capsys, "combine", pfile("0.3\n"), "--out", out_path)
    assert code == 0 and out == "" and "p_value: 0.3" in out_path.read_text()


# --- gen-corr ---------------------------------------------------------------------

def test_gen_corr_ar1(capsys):
    code, out, _ = run(capsys, "gen-corr", "ar1", "--d", 2, "--rho", 0.5)
    assert code == 0 and out == "1,0.5\n0.5,1\n"


def test_gen_corr_singular_bad_d(capsys):
    code, _, err = run(capsys, "gen-corr", "singular", "--d", 7, "--rho", 0.5)
    assert code == 2 and "divisible by 5" in err


def test_gen_corr_exchangeable_identity(capsys):
    _, out, _ = run(capsys, "gen-corr", "exchangeable", "--d", 3, "--rho", 0)
    assert out == "1,0,0\n0,1,0\n0,0,1\n"


@pytest.mark.parametrize("model,rho", [("ar1", 0.8), ("polydecay", 1.5), ("singular", 0.6),
                                       ("banded", 0.5)])
def test_gen_corr_round_trip(capsys, tmp_path, model, rho):
    path = tmp_path / "m.csv"
    code, _, _ = run(capsys, "gen-corr", model, "--d", 10, "--rho", rho, "--bandwidth", 2,
                     "--out", path)
    assert code == 0
    expected = corr.build_model(model, 10, rho, 2)
    np.testing.assert_array_equal(corr.load_correlation(path), expected)


def test_gen_corr_bad_rho(capsys):
    code, _, _ = run(capsys, "gen-corr", "ar1", "--d", 3, "--rho", 1.0)
    assert code == 2


# --- crit ----------------------------------------------------------------------------

def test_crit_analytic(capsys):
    code, out, _ = run(capsys, "crit", "CCT", "--analytic", "--alpha", 0.05)
    assert code == 0 and float(fields(out)["critical_value"]) == pytest.approx(6.31375151468,
                                                                               rel=1e-11)


def test_crit_simulated(capsys):
    code, out, _ = run(capsys, "crit", "CCT", "--model", "identity", "--d", 10, "--alpha", 0.05,
                       "--n", 100_000, "--seed", 1)
    f = fields(out)
    assert code == 0
    assert abs(float(f["critical_value"]) - 6.3138) < 3 * float(f["std_error"])
    code, out, _ = run(capsys, "crit", "MinP", "--model", "identity", "--d", 10, "--alpha", 0.05,
                       "--n", 100_000, "--seed", 1)
    f = fields(out)
    assert abs(float(f["critical_value"]) - 0.005116) < 3 * float(f["std_error"])


def test_crit_from_matrix_file(capsys, tmp_path):
    path = tmp_path / "m.csv"
    corr.save_correlation(corr.ar1_correlation(4, 0.3), path)
    code, out, _ = run(capsys, "crit", "HC", "--matrix", path, "--n", 10_000, "--seed", 2)
    assert code == 0 and float(fields(out)["critical_value"]) > 0


def test_crit_errors(capsys):
    assert run(capsys, "crit", "CCT", "--alpha", 0.05)[0] == 2
    assert run(capsys, "crit", "MinP", "--analytic")[0] == 2
    assert run(capsys, "crit", "CCT", "--model", "identity", "--d", 3, "--alpha", 0.001,
               "--n", 1000)[0] == 2


# --- size-sim / power-sim -------------------------------------------------------------

def write_json(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_size_sim_model1(capsys, tmp_path):
    cfg = write_json(tmp_path, {"model": "ar1", "d": 20, "rho": 0.4, "n_samples": 10_000,
                                "alphas": [0.05]})
    code, out, _ = run(capsys, "size-sim", cfg, "--seed", 3)
    assert code == 0
    lines = out.strip().splitlines()
    header = lines[0].split(",")
    row = dict(zip(header, lines[1].split(",")))
    assert header[-2:] == ["n_samples", "seed"]
    assert abs(float(row["ratio"]) - 1) < 0.2
    assert row["seed"] == "3" and row["n_samples"] == "10000"


def test_size_sim_deterministic_across_threads(capsys, tmp_path):
    cfg = write_json(tmp_path, {"model": ["ar1", "polydecay"], "d": 5, "rho": [0.5, 0.9],
                                "n_samples": 80_000})
    outs = [run(capsys, "size-sim", cfg, "--seed", 7, "--threads", t)[1] for t in (1, 2, 1)]
    assert outs[0] == outs[1] == outs[2]
    assert len(outs[0].strip().splitlines()) == 1 + 4 * 3


def test_size_sim_warns_on_small_tail(capsys, tmp_path):
    cfg = write_json(tmp_path, {"model": "ar1", "d": 5, "rho": 0.2, "n_samples": 10_000,
                                "alphas": [1e-5]})
    code, out, err = run(capsys, "size-sim", cfg)
    assert code == 0 and "unstable" in err and out


def test_size_sim_svg(capsys, tmp_path):
    cfg = write_json(tmp_path, {"model": "ar1", "d": 5, "rho": [0.2, 0.8], "n_samples": 20_000})
    svg1, svg2 = tmp_path / "a.svg", tmp_path / "b.svg"
    assert run(capsys, "size-sim", cfg, "--svg", svg1)[0] == 0
    assert run(capsys, "size-sim", cfg, "--svg", svg2)[0] == 0
    root = ET.fromstring(svg1.read_text())
    assert root.tag.endswith("svg")
    assert svg1.read_bytes() == svg2.read_bytes()


def test_size_sim_from_matrix(capsys, tmp_path):
    m = tmp_path / "m.csv"
    corr.save_correlation(corr.singular_correlation(10, 0.6), m)
    cfg = write_json(tmp_path, {"matrix": str(m), "n_samples": 10_000, "alphas": [0.1]})
    code, out, _ = run(capsys, "size-sim", cfg)
    assert code == 0 and out.splitlines()[1].startswith("m,10,")


@pytest.mark.parametrize("obj", [
    {"model": "ar1", "d": 5, "rho": 0.5, "bogus": 1},
    {"model": "ar1", "d": 5, "rho": 0.5, "alphas": [0.7]},
    {"model": "nope", "d": 5, "rho": 0.5},
    {"d": 5},
    [1, 2],
])
def test_size_sim_invalid_config(capsys, tmp_path, obj):
    assert run(capsys, "size-sim", write_json(tmp_path, obj))[0] == 2


def test_size_sim_unparseable_config(capsys, tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert run(capsys, "size-sim", p)[0] == 2


def test_power_sim_grid(capsys, tmp_path):
    cfg = write_json(tmp_path, {"d": 20, "signal_fraction": 0.1, "rho_grid": [0, 0.2, 0.4],
                                "n_crit_samples": 5000, "n_power_samples": 1000})
    svg = tmp_path / "p.svg"
    code, out, _ = run(capsys, "power-sim", cfg, "--seed", 1, "--svg", svg)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 1 + 4 * 3
    assert lines[1].startswith("20,2,2.379")
    ET.fromstring(svg.read_text())
    assert run(capsys, "power-sim", cfg, "--seed", 1)[1] == out


def test_power_sim_invalid_method(capsys, tmp_path):
    cfg = write_json(tmp_path, {"d": 20, "signal_fraction": 0.1, "methods": ["CCT", "Fisher"]})
    code, _, err = run(capsys, "power-sim", cfg)
    assert code == 2 and "CCT, MinP, HC, BJ" in err


# --- entry points ---------------------------------------------------------------------

def test_no_command_is_usage_error(capsys):
    assert run(capsys)[0] == 2


def test_module_entry_point(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("0.01\n0.02\n")
    res = subprocess.run([sys.executable, "-m", "cctest", "combine", str(p)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "p_value:" in res.stdout
    res = subprocess.run([sys.executable, "-m", "cctest", "combine", str(tmp_path / "x")],
                         capture_output=True, text=True)
    assert res.returncode == 2


def test_invalid_matrix_file_is_data_error(capsys, tmp_path):
    m = tmp_path / "bad.csv"
    m.write_text("0.9,0.5\n0.5,1\n")
    code, _, err = run(capsys, "crit", "CCT", "--matrix", m, "--n", 10_000)
    assert code == 3 and "diagonal" in err
