import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import rw_data
from robustdlm.cli import GROUP_OBS_PRIOR, main, read_grouped_csv
from robustdlm.engine import GridSettings
from robustdlm.oracle import kalman_smooth


def write_long_csv(path, table):
    """``table`` maps (group, series) to a list of values (None for a blank cell)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "group_id", "time", "value"])
        for (gid, sid), vals in table.items():
            for t, v in enumerate(vals):
                w.writerow([sid, gid, 2000 + t, "" if v is None else repr(float(v))])
    return path


def read_states(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_malformed_csv_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("series_id,group_id,time,value\nA,G,1,1.0\nA,G,2,abc\n")
    assert main(["fit", str(p), "-o", str(tmp_path / "out")]) == 2
    assert "line 3" in capsys.readouterr().err
    p.write_text("series_id,group_id,time,value\nA,G,1,1.0\nA,G,2\n")
    assert main(["fit", str(p), "-o", str(tmp_path / "out")]) == 2
    assert "line 3" in capsys.readouterr().err
    p.write_text("series,group_id,time,value\n")
    assert main(["fit", str(p)]) == 2
    assert "line 1" in capsys.readouterr().err
    p.write_text("series_id,group_id,time,value\nA,G,1,1.0\nA,G,3,2.0\n")
    assert main(["fit", str(p)]) == 2
    assert "contiguous" in capsys.readouterr().err


def test_fixed_gaussian_fit_matches_kalman(tmp_path):
    y = rw_data(40, seed=41)
    data = write_long_csv(tmp_path / "d.csv", {("G", "A"): y})
    out = tmp_path / "out"
    rc = main(["fit", str(data), "-o", str(out), "--family", "gaussian",
               "--fix-obs-precision", "0.8", "--fix-sys-precision", "1.5"])
    assert rc == 0
    means = np.array([float(r["mean"]) for r in read_states(out / "states.csv")])
    np.testing.assert_allclose(means, kalman_smooth(y, 1 / 0.8, 1 / 1.5).means, atol=1e-3)


def test_free_gaussian_fit_matches_kalman_mixture(tmp_path):
    y = rw_data(40, seed=42)
    data = write_long_csv(tmp_path / "d.csv", {("G", "A"): y})
    out = tmp_path / "out"
    assert main(["fit", str(data), "-o", str(out), "--family", "gaussian"]) == 0
    means = np.array([float(r["mean"]) for r in read_states(out / "states.csv")])
    # the same grid, integrated with the exact smoother at every point
    from robustdlm.engine import fit
    from robustdlm.model import GAUSSIAN, DlmSpec, DofPrior, GammaPrior, PriorSpec, TimeSeries
    pri = PriorSpec(GammaPrior(*GROUP_OBS_PRIOR), GammaPrior(1.0, 0.1), DofPrior(0.3))
    res = fit(DlmSpec(TimeSeries(y), GAUSSIAN, pri))
    ref = sum(p.weight * kalman_smooth(y, 1 / p.h.obs_precision[0], 1 / p.h.sys_precision).means
              for p in res.grid)
    np.testing.assert_allclose(means, ref, atol=1e-3)


def test_grouped_identical_series_double_information(tmp_path):
    y = rw_data(20, seed=43)
    pair = write_long_csv(tmp_path / "pair.csv", {("G", "A"): y, ("G", "B"): y})
    one = write_long_csv(tmp_path / "one.csv", {("G", "A"): y})
    flags = ["--family", "gaussian", "--fix-sys-precision", "2.0"]
    assert main(["fit", str(pair), "-o", str(tmp_path / "p"), "--fix-obs-precision", "0.5"] + flags) == 0
    assert main(["fit", str(one), "-o", str(tmp_path / "o"), "--fix-obs-precision", "1.0"] + flags) == 0
    a = [float(r["mean"]) for r in read_states(tmp_path / "p" / "states.csv")]
    b = [float(r["mean"]) for r in read_states(tmp_path / "o" / "states.csv")]
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_missing_cell_is_masked(tmp_path):
    y = list(rw_data(25, seed=44))
    y[6] = None
    data = write_long_csv(tmp_path / "d.csv", {("G1", "A"): y, ("G2", "B"): rw_data(25, seed=4)})
    out = tmp_path / "out"
    assert main(["fit", str(data), "-o", str(out), "--family", "gaussian"]) == 0
    report = json.loads((out / "scores.json").read_text())
    assert report["groups"]["G1"]["diagnostics"]["masked"] == [{"series_id": "A", "time": 2006}]
    assert report["groups"]["G2"]["diagnostics"]["masked"] == []
    assert len(report["groups"]["G1"]["cpo"]) == 24
    rows = read_states(out / "states.csv")
    assert len(rows) == 50 and all(np.isfinite(float(r["mean"])) for r in rows)
    with open(out / "hyper.csv") as fh:
        names = [(r["group_id"], r["name"]) for r in csv.DictReader(fh)]
    assert ("G1", "obs_precision") in names and ("G2", "sys_precision") in names


def test_fit_failure_exits_3(tmp_path, capsys):
    data = write_long_csv(tmp_path / "d.csv", {("G", "A"): rw_data(20, seed=45)})
    rc = main(["fit", str(data), "-o", str(tmp_path / "out"), "--family", "gaussian",
               "--fix-obs-precision", "1", "--fix-sys-precision", "1", "--max-newton", "0"])
    assert rc == 3
    assert "fit failed" in capsys.readouterr().err


def test_checksum_ignores_row_order(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("series_id,group_id,time,value\nA,G,1,1.0\nA,G,2,2.0\n")
    b.write_text("time,value,series_id,group_id\n2,2.0,A,G\n1,1.0,A,G\n")
    assert read_grouped_csv(a)[1] == read_grouped_csv(b)[1]
    b.write_text("series_id,group_id,time,value\nA,G,1,1.0\nA,G,2,2.5\n")
    assert read_grouped_csv(a)[1] != read_grouped_csv(b)[1]


def _score_file(path, dic, neg_lpml, checksum="sha256:x"):
    path.write_text(json.dumps({"checksum": checksum,
                                "groups": {"G1": {"dic": dic, "neg_lpml": neg_lpml}}}))
    return str(path)


def test_compare_reference_values(tmp_path, capsys):
    g = _score_file(tmp_path / "g.json", 460.22, 229.09)
    t = _score_file(tmp_path / "t.json", 459.64, 227.81)
    assert main(["compare", g, t, "--json", str(tmp_path / "c.json")]) == 0
    assert "positive" in capsys.readouterr().out
    c = json.loads((tmp_path / "c.json").read_text())["groups"]["G1"]
    assert c["2psbf"] == pytest.approx(2.56, abs=1e-9)
    g = _score_file(tmp_path / "g2.json", 4753.67, 2379.98)
    t = _score_file(tmp_path / "t2.json", 4746.94, 2375.89)
    assert main(["compare", g, t, "--json", str(tmp_path / "c2.json")]) == 0
    c = json.loads((tmp_path / "c2.json").read_text())["groups"]["G1"]
    assert c["2psbf"] == pytest.approx(8.18, abs=1e-9) and c["evidence"] == "strong"


def test_compare_identical_and_mismatched(tmp_path, capsys):
    g = _score_file(tmp_path / "g.json", 100.0, 50.0)
    assert main(["compare", g, g, "--json", str(tmp_path / "c.json")]) == 0
    c = json.loads((tmp_path / "c.json").read_text())["groups"]["G1"]
    assert (c["rdic"], c["lpsbf"], c["2psbf"], c["rpsbf"]) == (0.0, 0.0, 0.0, 0.0)
    assert c["evidence"] == "worth mention"
    other = _score_file(tmp_path / "o.json", 100.0, 50.0, checksum="sha256:y")
    assert main(["compare", g, other]) == 2
    assert "checksum" in capsys.readouterr().err
    (tmp_path / "junk.json").write_text("{}")
    assert main(["compare", g, str(tmp_path / "junk.json")]) == 2


def test_fit_then_compare_end_to_end(tmp_path, capsys):
    y = rw_data(30, seed=46)
    y[15:] += 6.0
    data = write_long_csv(tmp_path / "d.csv", {("G", "A"): y})
    for fam in ("gaussian", "student_t"):
        assert main(["fit", str(data), "-o", str(tmp_path / fam), "--family", fam,
                     "--obs-prior", "1", "2.375", "--sys-prior", "1", "2.375"]) == 0
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "gaussian" / "scores.json"),
                 str(tmp_path / "student_t" / "scores.json")]) == 0
    line = capsys.readouterr().out.splitlines()[1].split()
    assert line[0] == "G" and len(line) >= 6


@pytest.mark.parametrize("text", [
    "seed = 1\nbogus = 3\n",
    "p = [2.0]\n",
    "f = [0.5]\n",
    "replicates = 0\n",
    "[priors]\nobs_shape = -1\n",
    "[grid]\nwidth = 3\n",
    "n_d = [\n",
])
def test_invalid_study_config(tmp_path, text, capsys):
    cfg = tmp_path / "study.toml"
    cfg.write_text(text)
    assert main(["simulate", str(cfg), "-o", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


SMOKE = """\
seed = 2024
replicates = 3
n_d = [100]
p = [0.1]
f = [8.0]
"""


def test_smoke_study_is_fast_and_reproducible(tmp_path):
    cfg = tmp_path / "smoke.toml"
    cfg.write_text(SMOKE)
    start = time.perf_counter()
    assert main(["simulate", str(cfg), "-o", str(tmp_path / "a")]) == 0
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    assert main(["simulate", str(cfg), "-o", str(tmp_path / "b")]) == 0
    for name in ("records.csv", "summary.csv", "report.json", "table_efficiency.csv",
                 "table_rpsbf.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "robustdlm", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0
    for cmd in ("fit", "simulate", "compare"):
        assert cmd in out.stdout


def test_numeric_flag_defaults_follow_module_constants(capsys):
    with pytest.raises(SystemExit):
        main(["fit", "--help"])
    text = capsys.readouterr().out
    assert f"default {GridSettings.step}" in text
    assert "1e-08" in text and "1e-05" in text
