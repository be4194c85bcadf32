import csv
import json
import math

import numpy as np
import pytest

from exactsi.cli import main, parse_config_file, read_csv_dataset
from exactsi.errors import InvalidArgumentError


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def make_regression_csv(path, rng, n=50, p=5, signal=4.0):
    X = rng.standard_normal((n, p))
    y = X[:, 0] * signal - X[:, 1] * signal + rng.standard_normal(n)
    header = ["y"] + [f"x{j}" for j in range(p)]
    write_csv(path, header, np.column_stack([y, X]).tolist())
    return path


def make_mutation_panel_csv(path, rng, n=633, p=91):
    """Binary mutation indicators with a continuous log-resistance response."""
    freqs = rng.uniform(0.03, 0.4, size=p)
    X = (rng.random((n, p)) < freqs).astype(float)
    beta = np.zeros(p)
    signal_idx = rng.choice(p, size=6, replace=False)
    beta[signal_idx] = rng.uniform(1.0, 2.5, size=6)
    y = X @ beta + rng.standard_normal(n) * 0.8
    header = ["resistance"] + [f"P{j}" for j in range(p)]
    write_csv(path, header, np.column_stack([y, X]).tolist())
    return path


class TestReadCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        path = make_regression_csv(tmp_path / "d.csv", rng)
        data, names = read_csv_dataset(str(path))
        assert data.n == 50 and data.p == 5
        assert names == [f"x{j}" for j in range(5)]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(InvalidArgumentError):
            read_csv_dataset(str(path))

    def test_non_numeric_diagnostics(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x0\n1.0,2.0\n3.0,oops\n")
        with pytest.raises(InvalidArgumentError, match="row 3.*x0"):
            read_csv_dataset(str(path))

    def test_missing_response(self, tmp_path):
        path = tmp_path / "no_y.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(InvalidArgumentError, match="response column"):
            read_csv_dataset(str(path))


class TestSelect:
    def test_mutation_panel_plausible_selection(self, tmp_path):
        rng = np.random.default_rng(1)
        path = make_mutation_panel_csv(tmp_path / "hiv_like.csv", rng)
        out = tmp_path / "sel.json"
        code = main(
            [
                "select",
                "--input",
                str(path),
                "--response",
                "resistance",
                "--rho",
                "0.8",
                "--seed",
                "3",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert report["n"] == 633 and report["p"] == 91
        assert 1 <= report["selected_count"] <= 40
        assert report["kkt_residual"] < 1e-6
        assert len(report["selected"]) == report["selected_count"]

    def test_huge_lambda_empty_selection_exits_zero(self, tmp_path):
        rng = np.random.default_rng(2)
        path = make_regression_csv(tmp_path / "d.csv", rng)
        out = tmp_path / "sel.json"
        code = main(
            [
                "select",
                "--input",
                str(path),
                "--rho",
                "0.8",
                "--lambda",
                "1e9",
                "--seed",
                "0",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert report["selected_count"] == 0
        assert report["selected"] == []

    def test_empty_file_errors(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        code = main(["select", "--input", str(path), "--rho", "0.8"])
        assert code == 1

    def test_rho_and_tau2_exclusive(self, tmp_path):
        rng = np.random.default_rng(3)
        path = make_regression_csv(tmp_path / "d.csv", rng)
        assert main(["select", "--input", str(path)]) == 1
        assert (
            main(["select", "--input", str(path), "--rho", "0.8", "--tau2", "1.0"]) == 1
        )


class TestInfer:
    def run_infer(self, tmp_path, rng, alpha="0.1", extra=(), seed="5"):
        path = make_regression_csv(tmp_path / "d.csv", rng, n=60, p=6)
        out = tmp_path / f"inf_{alpha}_{seed}"
        code = main(
            [
                "infer",
                "--input",
                str(path),
                "--rho",
                "0.8",
                "--alpha",
                alpha,
                "--seed",
                seed,
                "--out",
                str(out),
                *extra,
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / f"inf_{alpha}_{seed}.json").read_text())
        with open(str(out) + ".csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        return report, rows

    def test_intervals_written_and_parse(self, tmp_path):
        rng = np.random.default_rng(4)
        report, rows = self.run_infer(tmp_path, rng)
        good = [r for r in rows if not r["error"]]
        assert good, "expected at least one interval"
        for r in good:
            assert float(r["lower"]) < float(r["upper"])
            assert r["significant"] in ("0", "1")
        assert report["methods"]["exact"]["intervals"] == len(good)

    def test_alpha_nesting_same_seed(self, tmp_path):
        rng = np.random.default_rng(4)
        wide, _ = self.run_infer(tmp_path, rng, alpha="0.1")
        rng = np.random.default_rng(4)
        narrow, _ = self.run_infer(tmp_path, rng, alpha="0.5")
        w = wide["methods"]["exact"]["mean_length"]
        n = narrow["methods"]["exact"]["mean_length"]
        assert n < w

    def test_multi_method(self, tmp_path):
        rng = np.random.default_rng(6)
        report, rows = self.run_infer(
            tmp_path, rng, extra=("--method", "exact", "--method", "split")
        )
        methods = {r["method"] for r in rows}
        assert "exact" in methods and "split" in methods


class TestSimulateValidate:
    def test_simulate_writes_summary_and_rows(self, tmp_path):
        out = tmp_path / "study"
        code = main(
            [
                "simulate",
                "--n",
                "50",
                "--p",
                "8",
                "--sparsity",
                "2",
                "--signal-fraction",
                "2.0",
                "--corr",
                "0.3",
                "--sigma2",
                "1.0",
                "--n-reps",
                "3",
                "--rho",
                "0.8",
                "--method",
                "exact",
                "--method",
                "split",
                "--seed",
                "11",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        summary = json.loads((tmp_path / "study.json").read_text())
        assert set(summary["methods"]) == {"exact", "split"}
        with open(tmp_path / "study.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            assert r["method"] in ("exact", "split")
            assert int(r["covered"]) in (0, 1)

    def test_single_rep_csv(self, tmp_path):
        out = tmp_path / "one"
        code = main(
            [
                "simulate", "--n", "50", "--p", "6", "--sparsity", "2",
                "--signal-fraction", "2.0", "--corr", "0.0", "--sigma2", "1.0",
                "--n-reps", "1", "--rho", "0.8", "--method", "exact",
                "--seed", "2", "--out", str(out),
            ]
        )
        assert code == 0
        with open(tmp_path / "one.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        reps = {r["rep"] for r in rows}
        assert reps <= {"0"}

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "study.cfg"
        cfg.write_text(
            "[study]\n"
            "n = 50\n"
            "p = 6\n"
            "sparsity = 2\n"
            "signal_fraction = 2.0\n"
            "corr = 0.0\n"
            "sigma2 = 1.0\n"
            "n_reps = 2\n"
            "rho = 0.8\n"
            "methods = exact\n"
            "seed = 5\n"
        )
        out = tmp_path / "cfgstudy"
        code = main(
            ["simulate", "--config", str(cfg), "--n-reps", "1", "--out", str(out)]
        )
        assert code == 0
        summary = json.loads((tmp_path / "cfgstudy.json").read_text())
        assert summary["config"]["n_reps"] == 1  # flag beat the file
        assert summary["config"]["n"] == 50

    def test_byte_identical_reruns(self, tmp_path):
        args = [
            "simulate", "--n", "50", "--p", "6", "--sparsity", "2",
            "--signal-fraction", "2.0", "--corr", "0.0", "--sigma2", "1.0",
            "--n-reps", "2", "--rho", "0.8", "--method", "exact", "--seed", "9",
        ]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus = 3\n")
        assert main(["simulate", "--config", str(cfg)]) == 1


def test_parse_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\n[sec]\na = 1\nb = two words # trailing\n")
    parsed = parse_config_file(str(cfg))
    assert parsed == {"a": "1", "b": "two words"}
