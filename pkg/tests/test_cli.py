import numpy as np
import pytest

from imfem import fem
from imfem.cli import main


def run(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_coercivity_prints_value(capsys):
    code, out, _ = run(["coercivity", "--test", "i", "--H", "16"], capsys)
    assert code == 0
    assert abs(float(out.strip()) - 19.93) < 1.0


def test_sigma_writes_round_trippable_field(tmp_path, capsys):
    out_path = tmp_path / "weight.p1"
    code, out, _ = run(["sigma", "--test", "ii", "--h", "16", "--out", str(out_path)], capsys)
    assert code == 0
    u = fem.load_field(out_path)
    assert u.mesh.n == 16
    again = tmp_path / "again.p1"
    fem.save_field(u, again)
    assert again.read_bytes() == out_path.read_bytes()


def test_solve_writes_field(tmp_path, capsys):
    out_path = tmp_path / "u.p1"
    code, _, _ = run(["solve", "--test", "i", "--method", "P1GLS",
                      "--H", "16", "--out", str(out_path)], capsys)
    assert code == 0
    u = fem.load_field(out_path)
    assert np.isfinite(u.coeffs).all()
    assert np.abs(u.coeffs).max() > 0


def test_table_csv_deterministic(tmp_path, capsys):
    cache = tmp_path / "cache"
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        code, _, _ = run([
            "table", "--test", "i", "--method", "P1,P1GLS", "--H", "8",
            "--ref", "64", "--sigma-cache-dir", str(cache), "--out", str(path),
        ], capsys)
        assert code == 0

    def strip_timing(path):
        rows = []
        for line in path.read_text().strip().split("\n"):
            cols = line.split(",")
            rows.append(",".join(cols[:6] + cols[8:]))
        return "\n".join(rows)

    assert strip_timing(paths[0]) == strip_timing(paths[1])
    header = paths[0].read_text().split("\n")[0]
    assert header == "test,method,H,h,err,iterations,offline_s,online_s,admissible,kappa"


def test_usage_error_exit_code(capsys):
    assert main(["table", "--test", "i", "--bogus-flag"]) == 1


def test_unknown_test_exit_code(capsys):
    code, _, err = run(["table", "--test", "xii", "--out", "/tmp/never.csv"], capsys)
    assert code == 1


def test_exact_weight_rejected_for_rotational_test(tmp_path, capsys):
    code, _, err = run(["solve", "--test", "v", "--method", "Sigma1Exact",
                        "--H", "8", "--out", str(tmp_path / "x.p1")], capsys)
    assert code == 1
    assert "irrotational" in err


def test_convergence_output(capsys):
    code, out, _ = run(["convergence", "--study", "manufactured",
                        "--method", "P1", "--H-list", "8,16", "--h-ratio", "2"], capsys)
    assert code == 0
    assert "fitted order" in out
