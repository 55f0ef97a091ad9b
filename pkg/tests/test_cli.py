import csv
import json

import numpy as np
import pytest

from projdyn.cli import main, parse_grid
from projdyn.fixtures import builtin, fixture_to_json


def read_csv(path):
    with open(path) as fh:
        head = fh.readline()
        assert head.startswith("# config_hash=")
        return list(csv.DictReader(fh))


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_parse_grid():
    assert parse_grid("1,2.5", [0]).tolist() == [1.0, 2.5]
    assert parse_grid("0:2:5", [0]).tolist() == [0, 0.5, 1, 1.5, 2]
    assert parse_grid(None, [3]).tolist() == [3.0]


def test_census_cyclic_exact(tmp_path):
    code, out = run(tmp_path, "census", "--fixture", "cyclic", "--depth", "12", "--tgrid", "0,1,2.5,5,7.9")
    assert code == 0
    rows = read_csv(out / "census.csv")
    assert [int(r["total"]) for r in rows] == [2 * int(np.floor(T)) + 1 for T in (0, 1, 2.5, 5, 7.9)]
    for name in ("classes.csv", "delta.json", "census.png", "orbit_growth.png"):
        assert (out / name).exists()


def test_census_simplex_has_no_rank_one(tmp_path):
    code, out = run(tmp_path, "census", "--fixture", "simplex-lattice", "--depth", "3")
    assert code == 0
    rows = read_csv(out / "census.csv")
    assert rows and all(int(r["rank_one"]) == 0 for r in rows)
    assert any(int(r["total"]) > 1 for r in rows)


def test_verify_writes_json(tmp_path, capsys):
    code, out = run(tmp_path, "verify")
    assert code == 0
    data = json.loads((out / "verify.json").read_text())
    assert data["all_pass"] and len(data["checks"]) >= 10
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)


def test_sample_and_density_outputs(tmp_path):
    code, out = run(tmp_path, "sample", "--depth", "6", "--samples", "1000", "--time", "4")
    assert code == 0
    rows = read_csv(out / "mixing_curve.csv")
    assert len(rows) == 9 and float(rows[-1]["t"]) == 4.0
    lines = (out / "samples.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["n"] == len(lines) - 1 == 1000
    assert read_csv(out / "equidistribution.csv")
    code, out = run(tmp_path, "density", "--depth", "6", "--radius", "2.5", name="dens")
    assert code == 0
    assert json.loads((out / "density.json").read_text())["R"] == 2.5
    assert (out / "shadows.png").exists() and (out / "atoms.png").exists()


def test_sample_with_no_samples(tmp_path):
    code, out = run(tmp_path, "sample", "--depth", "6", "--samples", "0")
    assert code == 0
    with open(out / "mixing_curve.csv") as fh:
        assert fh.read().splitlines()[1] == "t,C,se,mA,mB,gap"
    assert (out / "samples.jsonl").read_text().count("\n") == 1


def test_runs_are_byte_identical(tmp_path):
    args = ("sample", "--depth", "6", "--samples", "800", "--seed", "7")
    run(tmp_path, *args, name="a")
    run(tmp_path, *args, name="b")
    for name in ("mixing_curve.csv", "equidistribution.csv", "samples.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run(tmp_path, "sample", "--depth", "6", "--samples", "800", "--seed", "8", name="c")
    assert (tmp_path / "a" / "samples.jsonl").read_bytes() != (tmp_path / "c" / "samples.jsonl").read_bytes()


def test_entropy_on_cyclic_fixture_is_small(tmp_path):
    code, out = run(tmp_path, "entropy", "--fixture", "cyclic", "--depth", "20", "--time", "6",
                    "--samples", "2000")
    assert code == 0
    data = json.loads((out / "entropy.json").read_text())
    assert data["pool"] == "bowen-margulis"
    assert data["estimate"] <= 0.05
    assert len(read_csv(out / "entropy.csv")) == 2


def test_entropy_rejects_simplex(tmp_path, capsys):
    code, _ = run(tmp_path, "entropy", "--fixture", "simplex-lattice")
    assert code == 2
    assert "disk" in capsys.readouterr().err


@pytest.mark.parametrize("fixture, message", [
    ("torus", "unknown"),
    ("missing.json", "missing.json"),
])
def test_bad_fixture(tmp_path, capsys, fixture, message):
    code, _ = run(tmp_path, "census", "--fixture", fixture)
    assert code == 2
    assert message in capsys.readouterr().err


def test_fixture_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"generators": [\n  {"matrix": [[1, 2], [2, 4]]}\n]}')
    assert main(["census", "--fixture", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "singular" in capsys.readouterr().err
    bad.write_text('{"generators": [\n  {"matrix": }\n]}')
    assert main(["census", "--fixture", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 2 column" in capsys.readouterr().err


def test_fixture_file_round_trip(tmp_path):
    path = tmp_path / "fx.json"
    path.write_text(json.dumps(fixture_to_json(builtin("cyclic"))))
    code, out = run(tmp_path, "census", "--fixture", str(path), "--depth", "10", "--tgrid", "3")
    assert code == 0
    assert int(read_csv(out / "census.csv")[0]["total"]) == 7
