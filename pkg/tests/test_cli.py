import json
import subprocess
import sys

import numpy as np
import pytest

from scalarquant import codec
from scalarquant.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main, read_table
from scalarquant.quantizer import Codebook, RunTrace
from scalarquant.spectral import UpdateMatrix


def call(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path), "--quiet"])


class TestDesign:
    def test_uniform_alm_k3(self, tmp_path):
        assert call(tmp_path, "design", "--density", "uniform", "--scheme", "alm", "--k", "3") == EXIT_OK
        cb = Codebook.from_json((tmp_path / "codebook_alm_K3.json").read_text())
        np.testing.assert_allclose(cb.levels, [0, 1 / 6, 1 / 2, 5 / 6, 1], atol=1e-10)

    def test_beta24_aeq_k8_files_round_trip(self, tmp_path):
        assert call(tmp_path, "design", "--density", "beta:2,4", "--scheme", "aeq", "--k", "8",
                    "--max-iter", "2000") == EXIT_OK
        cb = Codebook.from_json((tmp_path / "codebook_aeq_K8.json").read_text())
        with open(tmp_path / "trace_aeq_K8.csv") as fh:
            trace = RunTrace.read_csv(fh)
        np.testing.assert_array_equal(trace.level_history()[-1], cb.levels)

    def test_both_schemes_and_k_list(self, tmp_path):
        assert call(tmp_path, "design", "--density", "beta:2,2", "--k", "2,4") == EXIT_OK
        names = sorted(p.name for p in tmp_path.glob("codebook_*.json"))
        assert names == ["codebook_aeq_K2.json", "codebook_aeq_K4.json",
                         "codebook_alm_K2.json", "codebook_alm_K4.json"]

    @pytest.mark.parametrize("argv", [["--k", "0"], ["--density", "gamma:2"], ["--k", "x"],
                                      ["--threshold", "-1"], ["--init", "missing.json"]])
    def test_invalid_input(self, tmp_path, argv):
        assert call(tmp_path, "design", "--density", "uniform", *argv) == EXIT_INVALID

    def test_not_converged(self, tmp_path):
        assert call(tmp_path, "design", "--density", "beta:2,4", "--scheme", "alm", "--k", "16",
                    "--max-iter", "20") == EXIT_NOT_CONVERGED

    def test_init_file(self, tmp_path):
        init = tmp_path / "init.json"
        init.write_text(json.dumps([0, 0.05, 0.1, 0.9, 1]))
        assert call(tmp_path, "design", "--density", "uniform", "--scheme", "alm", "--k", "3",
                    "--init", str(init)) == EXIT_OK
        cb = Codebook.from_json((tmp_path / "codebook_alm_K3.json").read_text())
        np.testing.assert_allclose(cb.levels, [0, 1 / 6, 1 / 2, 5 / 6, 1], atol=1e-9)

    def test_deterministic_given_seed(self, tmp_path):
        texts = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert main(["design", "--density", "beta:4,2", "--k", "5", "--init", "random",
                         "--seed", "3", "--out", str(out), "--quiet"]) == EXIT_OK
            texts.append((out / "trace_alm_K5.csv").read_text())
        assert texts[0] == texts[1]


class TestMseCurve:
    def test_uniform_closed_form(self, tmp_path):
        assert call(tmp_path, "mse-curve", "--density", "uniform", "--k", "2", "4", "8", "16",
                    "--max-iter", "5000") == EXIT_OK
        rows = read_table(tmp_path / "mse_curve.csv")
        assert list(rows[0]) == ["K", "bits", "mse_alm", "mse_aeq", "mse_exact_lm", "mse_exact_env"]
        for r in rows:
            K = int(r["K"])
            assert float(r["bits"]) == np.log2(K)
            assert float(r["mse_alm"]) == pytest.approx(1 / (12 * K * K), rel=1e-8)
            assert float(r["mse_exact_lm"]) == pytest.approx(1 / (12 * K * K), rel=1e-10)
            assert float(r["mse_aeq"]) == pytest.approx(1 / (3 * K * K), rel=1e-10)

    def test_beta_monotone_and_ordered(self, tmp_path):
        assert call(tmp_path, "mse-curve", "--density", "beta:2,4", "--k", "2", "4", "8",
                    "--max-iter", "5000") == EXIT_OK
        rows = read_table(tmp_path / "mse_curve.csv")
        alm = [float(r["mse_alm"]) for r in rows]
        aeq = [float(r["mse_aeq"]) for r in rows]
        assert np.all(np.diff(alm) < 0) and np.all(np.diff(aeq) < 0)
        assert all(e >= a for a, e in zip(alm, aeq))


class TestConvergence:
    def test_uniform_rate_and_footer(self, tmp_path):
        assert call(tmp_path, "convergence", "--density", "uniform", "--scheme", "alm",
                    "--k", "3", "--init", "random") == EXIT_OK
        rows = read_table(tmp_path / "convergence.csv")
        assert list(rows[0]) == ["scheme", "K", "iter", "cost", "linf_change"]
        ch = np.array([float(r["linf_change"]) for r in rows])
        ch = ch[ch > 1e-12]
        assert ch[-1] / ch[-2] == pytest.approx(1 / 3, abs=0.02)
        footer = [l for l in (tmp_path / "convergence.csv").read_text().splitlines()
                  if l.startswith("#")]
        assert footer == [footer[0]] and "converged=true" in footer[0]

    def test_beta24_curves(self, tmp_path):
        assert call(tmp_path, "convergence", "--density", "beta:2,4", "--scheme", "aeq",
                    "--k", "4", "8", "--max-iter", "2000") == EXIT_OK
        rows = read_table(tmp_path / "convergence.csv")
        assert {int(r["K"]) for r in rows} == {4, 8}


class TestCompareTime:
    def test_single_repeat(self, tmp_path):
        assert call(tmp_path, "compare-time", "--density", "beta:4,2", "--k", "4",
                    "--repeats", "1") == EXIT_OK
        (row,) = read_table(tmp_path / "compare_time.csv")
        assert float(row["speedup"]) == pytest.approx(float(row["t_exact"]) / float(row["t_alm"]))

    def test_bad_repeats(self, tmp_path):
        assert call(tmp_path, "compare-time", "--density", "uniform", "--k", "2",
                    "--repeats", "0") == EXIT_INVALID


class TestSpectral:
    def test_uniform_k3(self, tmp_path):
        assert call(tmp_path, "spectral", "--density", "uniform", "--scheme", "alm",
                    "--k", "3") == EXIT_OK
        rec = json.loads((tmp_path / "spectral_alm_K3.json").read_text())
        assert all(p["pass"] for p in rec["report"]["properties"])
        assert rec["second_eigenvalue"] == pytest.approx(1 / 3, abs=1e-12)
        assert rec["product_limit"]["rank"] == 2
        assert rec["product_limit"]["column_sum_residual"] < 1e-12
        with open(tmp_path / "sweep_matrix_alm_K3.csv") as fh:
            P = UpdateMatrix.read_csv(fh)
        assert P.entries[2, 0] == pytest.approx(1 / 3)
        with open(tmp_path / "limit_matrix_alm_K3.csv") as fh:
            np.testing.assert_allclose(UpdateMatrix.read_csv(fh).entries[:, -1],
                                       rec["product_limit"]["fixed_point"])

    def test_beta_run(self, tmp_path):
        assert call(tmp_path, "spectral", "--density", "beta:2,4", "--scheme", "aeq",
                    "--k", "8", "--max-iter", "2000") == EXIT_OK
        rec = json.loads((tmp_path / "spectral_aeq_K8.json").read_text())
        assert rec["product_limit"]["converged"]

    def test_no_updatable_level(self, tmp_path):
        assert call(tmp_path, "spectral", "--density", "uniform", "--scheme", "aeq",
                    "--k", "1") == EXIT_INVALID


class TestEncode:
    def test_file_input(self, tmp_path):
        cbf = tmp_path / "cb.json"
        cbf.write_text(Codebook(codec.Scheme.AEQ, [0, 0.25, 0.5, 0.75, 1], 4).to_json())
        inp = tmp_path / "x.txt"
        inp.write_text("0.26\n0.25\n\n1.0\n")
        assert call(tmp_path, "encode", "--codebook", str(cbf), "--input", str(inp)) == EXIT_OK
        with open(tmp_path / "encoded.csv") as fh:
            x, idx, level = codec.read_encoded_csv(fh)
        np.testing.assert_array_equal(idx, [2, 1, 4])
        np.testing.assert_array_equal(level, [0.5, 0.25, 1.0])

    def test_sampled_input(self, tmp_path):
        cbf = tmp_path / "cb.json"
        cbf.write_text(Codebook(codec.Scheme.ALM, [0, 1 / 6, 1 / 2, 5 / 6, 1], 3).to_json())
        assert call(tmp_path, "encode", "--codebook", str(cbf), "--density", "beta:2,2",
                    "--samples", "100") == EXIT_OK
        assert len((tmp_path / "encoded.csv").read_text().splitlines()) == 101

    def test_out_of_domain(self, tmp_path):
        cbf = tmp_path / "cb.json"
        cbf.write_text(Codebook(codec.Scheme.ALM, [0, 0.5, 1], 1).to_json())
        inp = tmp_path / "x.txt"
        inp.write_text("1.5\n")
        assert call(tmp_path, "encode", "--codebook", str(cbf), "--input", str(inp)) == EXIT_INVALID

    def test_missing_codebook(self, tmp_path):
        assert call(tmp_path, "encode") == EXIT_INVALID


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "scalarquant", "design", "--density", "uniform",
                          "--scheme", "aeq", "--k", "4", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == EXIT_OK
    assert "aeq_K4" in res.stdout + res.stderr
