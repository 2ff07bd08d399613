import csv
import io
import shutil
import json
import subprocess
import sys

import pytest

from volspec import __version__
from volspec.cli import SWEEP_HEADER, main, parse_grid


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def squares_file(tmp_path):
    p = tmp_path / "sq.json"
    assert run("spectrum", "--family", "squares", "--count", "800", "--out", str(p))[0] == 0
    return p


@pytest.fixture
def pert_file(tmp_path, squares_file):
    p = tmp_path / "pert.json"
    assert run("synthesize", "--spectrum", str(squares_file), "--out", str(p))[0] == 0
    return p


class TestSpectrum:
    def test_stdout_and_meta(self):
        code, out, _ = run("spectrum", "--family", "livsic", "--c", "1", "--count", "10")
        doc = json.loads(out)
        assert code == 0 and len(doc["points"]) == 20  # count is per side
        assert doc["meta"]["version"] == __version__

    def test_deterministic_without_meta(self):
        a = run("spectrum", "--family", "squares", "--count", "50", "--no-meta")[1]
        b = run("spectrum", "--family", "squares", "--count", "50", "--no-meta")[1]
        assert a == b and "meta" not in json.loads(a)

    def test_custom(self):
        code, out, _ = run("spectrum", "--custom", "1,4,-9", "--no-meta")
        assert code == 0 and sorted(json.loads(out)["points"]) == [-9, 1, 4]

    def test_bad_parameter(self):
        code, _, err = run("spectrum", "--family", "shifted_progression", "--a", "-1")
        assert code == 1 and err

    def test_c_is_not_config(self):
        code, out, _ = run("spectrum", "--family", "livsic", "--c", "2", "--count", "4")
        assert code == 0 and json.loads(out)["points"][3:5] == [-0.25, 0.25]

    def test_unknown_family(self):
        assert run("spectrum", "--family", "primes")[0] == 1

    def test_no_command(self):
        assert run()[0] == 1


class TestDiagnose:
    def test_report(self, squares_file, tmp_path):
        csv_path = tmp_path / "terms.csv"
        code, out, _ = run("diagnose", "--spectrum", str(squares_file), "--terms-csv",
                           str(csv_path), "--no-meta")
        assert code == 0 and json.loads(out)["verdict"] == "Removable"
        assert csv_path.read_text().splitlines()[0].startswith("n,")

    def test_missing_file(self, tmp_path):
        code, _, err = run("diagnose", "--spectrum", str(tmp_path / "nope.json"))
        assert code == 1 and "cannot read" in err

    def test_not_a_spectrum(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"foo": 1}')
        assert run("diagnose", "--spectrum", str(p))[0] == 1

    def test_strict_inconclusive(self, tmp_path):
        p = tmp_path / "b.json"
        run("spectrum", "--family", "shifted_progression", "--a", "0.95", "--count", "500",
            "--out", str(p))
        code, out, _ = run("diagnose", "--spectrum", str(p))
        assert code == 0 and json.loads(out)["verdict"] == "Inconclusive"
        assert run("diagnose", "--spectrum", str(p), "--strict")[0] == 3

    def test_too_few_terms(self, tmp_path):
        p = tmp_path / "s.json"
        run("spectrum", "--family", "squares", "--count", "20", "--out", str(p))
        code, _, err = run("diagnose", "--spectrum", str(p))
        assert code == 1 and "64 terms" in err



class TestConfig:
    def test_config_supplies_flags(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"family": "squares", "count": 7, "no_meta": True}))
        code, out, _ = run("spectrum", "--config", str(cfg))
        assert code == 0 and len(json.loads(out)["points"]) == 7

    def test_command_line_wins(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"family": "squares", "count": 7}))
        code, out, _ = run("spectrum", "--config", str(cfg), "--count", "3")
        assert code == 0 and len(json.loads(out)["points"]) == 3

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"family": "squares", "colour": "red"}))
        code, _, err = run("spectrum", "--config", str(cfg))
        assert code == 1 and "colour" in err


class TestSynthesizeVerify:
    def test_synthesized_payload(self, pert_file):
        doc = json.loads(pert_file.read_text())
        assert doc["delta"] == 1.0 and doc["flags"]["synthesized"]

    def test_refusal_and_force(self, tmp_path):
        s = tmp_path / "s.json"
        run("spectrum", "--family", "squares", "--n0", "2", "--count", "500", "--out", str(s))
        code, _, err = run("synthesize", "--spectrum", str(s))
        assert code == 1 and "force" in err
        assert run("synthesize", "--spectrum", str(s), "--force")[0] == 0

    def test_smooth(self, squares_file):
        code, out, _ = run("synthesize", "--spectrum", str(squares_file), "--smooth", "0.2",
                           "0.2", "1.6", "--no-meta")
        assert code == 0 and json.loads(out)["flags"]["smooth"]["gamma"] == 1.6

    def test_verify(self, pert_file, tmp_path):
        csv_path = tmp_path / "collapse.csv"
        code, out, _ = run("verify", "--pert", str(pert_file), "--N", "100",
                           "--rect=-10.5,10.5,-10,10", "--collapse-csv", str(csv_path))
        doc = json.loads(out)
        assert code == 0 and doc["winding"]["zeros"] == 0
        assert doc["collapse_decreasing"] and [r["N"] for r in doc["collapse"]] == [12, 25, 50, 100]
        assert csv_path.read_text().splitlines()[0] == "N,spectral_radius,n_zeros_in_window"

    def test_verify_N_too_large(self, pert_file):
        assert run("verify", "--pert", str(pert_file), "--mode", "finsec", "--N", "5000")[0] == 1

    def test_contour_through_node(self, pert_file):
        code, _, err = run("verify", "--pert", str(pert_file), "--mode", "winding", "--rect",
                           "4.0000001,10.5,-5,5")
        assert code == 2 and "ContourError" in err and "failing box" in err

    def test_bad_rect(self, pert_file):
        assert run("verify", "--pert", str(pert_file), "--rect", "1,2,3")[0] == 1


class TestSweep:
    def test_grid_parsing(self):
        assert parse_grid("1:2:0.5") == [1.0, 1.5, 2.0]
        assert parse_grid("1.5, 3") == [1.5, 3.0]

    def test_csv(self):
        code, out, _ = run("sweep", "--family", "one_sided_power", "--gamma", "1.5,3",
                           "--count", "500")
        rows = list(csv.reader(io.StringIO(out)))
        assert code == 0 and tuple(rows[0]) == SWEEP_HEADER
        assert [r[1] for r in rows[1:]] == ["Nonremovable", "Removable"]

    def test_needs_one_grid(self):
        assert run("sweep", "--family", "one_sided_power")[0] == 1

    def test_strict(self):
        code, _, _ = run("sweep", "--family", "shifted_progression", "--a", "0.5,0.95",
                         "--count", "500", "--strict")
        assert code == 3


def test_nustar_command(tmp_path):
    s = tmp_path / "l.json"
    p = tmp_path / "lp.json"
    run("spectrum", "--family", "livsic", "--c", "1", "--count", "600", "--out", str(s))
    assert run("synthesize", "--spectrum", str(s), "--out", str(p))[0] == 0
    code, out, err = run("nustar", "--pert", str(p), "--steps", "2", "--no-meta")
    assert code == 0, err
    doc = json.loads(out)
    assert len(doc["steps"]) == 3 and doc["verification"]["passed"]


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "volspec.cli", "--version"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0 and __version__ in res.stdout
    res = subprocess.run([sys.executable, "-m", "volspec.cli", "diagnose", "--bogus"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 1


@pytest.mark.skipif(shutil.which("volspec") is None, reason="console script not installed")
def test_installed_entry_point(tmp_path):
    res = subprocess.run(["volspec", "spectrum", "--family", "squares", "--count", "5",
                          "--no-meta"], capture_output=True, text=True, timeout=120)
    assert res.returncode == 0 and json.loads(res.stdout)["points"][:2] == [1.0, 4.0]
