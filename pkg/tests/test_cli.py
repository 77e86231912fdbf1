import json

import numpy as np
import pytest

import gmfkit as gk
from gmfkit import io as gio
from gmfkit.cli import main


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = run(["simulate", "--preset", "small", "--n", 80, "--m", 20,
                "--d-true", 2, "--seed", 3, "--out", out])
    assert code == 0
    return out


class TestSimulateCommand:
    def test_outputs_exist(self, sim_dir):
        for name in ("y.csv", "x.csv", "z.csv", "truth_U.csv", "manifest.json"):
            assert (sim_dir / name).exists()

    def test_preset_dims(self, tmp_path):
        assert run(["simulate", "--preset", "small", "--seed", 0,
                    "--out", tmp_path / "a"]) == 0
        y, _, _ = gio.read_dense_csv(tmp_path / "a" / "y.csv")
        assert y.shape == (200, 50)

    def test_bad_simplex_rejected(self, tmp_path):
        code = run(["simulate", "--group-probs", "0.5,0.2", "--out", tmp_path])
        assert code == 1

    def test_seed_echoed_in_manifest(self, sim_dir):
        man = json.load(open(sim_dir / "manifest.json"))
        assert man["seed"] == 3

    def test_matrix_market_format(self, tmp_path):
        assert run(["simulate", "--n", 30, "--m", 10, "--format", "mm",
                    "--seed", 1, "--out", tmp_path]) == 0
        y = gio.read_matrix_market(tmp_path / "y.mtx")
        assert y.shape == (30, 10)


class TestFitCommand:
    @pytest.mark.parametrize("algorithm", ["asgd", "newton", "airwls"])
    def test_all_algorithms_same_schema(self, sim_dir, tmp_path, algorithm):
        out = tmp_path / algorithm
        code = run(["fit", "--y", sim_dir / "y.csv", "--x", sim_dir / "x.csv",
                    "--z", sim_dir / "z.csv", "--rank", 2, "--family", "poisson",
                    "--algorithm", algorithm, "--max-epochs", 30,
                    "--seed", 1, "--out", out])
        assert code in (0, 3)
        u, _, fnames = gio.read_dense_csv(out / "U.csv")
        v, _, _ = gio.read_dense_csv(out / "V.csv")
        b, _, _ = gio.read_dense_csv(out / "B.csv")
        g, _, _ = gio.read_dense_csv(out / "Gamma.csv")
        assert u.shape == (80, 2) and v.shape == (20, 2)
        assert b.shape == (20, 3) and g.shape == (80, 1)
        assert fnames == ["f1", "f2"]
        rep = json.load(open(out / "fit_report.json"))
        assert set(rep) >= {"final_objective", "objective_trace", "converged",
                            "epochs_run", "phi_trace", "nb_shape_trace"}

    def test_exit_zero_on_convergence(self, sim_dir, tmp_path):
        code = run(["fit", "--y", sim_dir / "y.csv", "--x", sim_dir / "x.csv",
                    "--z", sim_dir / "z.csv", "--rank", 2, "--family", "poisson",
                    "--algorithm", "newton", "--max-epochs", 4000,
                    "--tol", "1e-5", "--seed", 1, "--out", tmp_path / "conv"])
        assert code == 0

    def test_rerun_byte_identical(self, sim_dir, tmp_path):
        argv = ["fit", "--y", sim_dir / "y.csv", "--x", sim_dir / "x.csv",
                "--z", sim_dir / "z.csv", "--rank", 2, "--family", "poisson",
                "--algorithm", "asgd", "--max-epochs", 25, "--seed", 9]
        run(argv + ["--out", tmp_path / "r1"])
        run(argv + ["--out", tmp_path / "r2"])
        for name in ("U.csv", "V.csv", "B.csv", "Gamma.csv", "fit_report.json"):
            b1 = (tmp_path / "r1" / name).read_bytes()
            b2 = (tmp_path / "r2" / name).read_bytes()
            assert b1 == b2, name

    def test_identify_modes_accepted(self, sim_dir, tmp_path):
        for mode in ("B1", "B2", "B3"):
            code = run(["fit", "--y", sim_dir / "y.csv", "--rank", 1,
                        "--family", "poisson", "--max-epochs", 10,
                        "--identify", mode, "--seed", 0,
                        "--out", tmp_path / mode])
            assert code in (0, 3)

    def test_missing_input_is_config_error(self, tmp_path):
        code = run(["fit", "--y", tmp_path / "nope.csv", "--rank", 1,
                    "--out", tmp_path])
        assert code == 1

    def test_malformed_csv_diagnostics(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text(",a,b\nr1,1.0,xx\n")
        code = run(["fit", "--y", bad, "--rank", 1, "--out", tmp_path])
        assert code == 1
        err = capsys.readouterr().err
        assert "line 2" in err and "column" in err

    def test_config_file_with_flag_override(self, sim_dir, tmp_path):
        cfgfile = tmp_path / "run.toml"
        cfgfile.write_text(
            'rank = 1\nfamily = "poisson"\nalgorithm = "newton"\n'
            "max_epochs = 15\nseed = 4\n"
        )
        out = tmp_path / "cfg"
        code = run(["fit", "--y", sim_dir / "y.csv", "--config", cfgfile,
                    "--max-epochs", 5, "--out", out])
        assert code in (0, 3)
        rep = json.load(open(out / "fit_report.json"))
        assert rep["epochs_run"] <= 5   # flag overrides the file
        man = json.load(open(out / "manifest.json"))
        assert man["config"]["rank"] == 1

    def test_unknown_config_key_rejected(self, sim_dir, tmp_path):
        cfgfile = tmp_path / "bad.toml"
        cfgfile.write_text("rank = 1\nbogus_key = 2\n")
        assert run(["fit", "--y", sim_dir / "y.csv", "--config", cfgfile,
                    "--out", tmp_path]) == 1

    def test_mtx_input_with_mask(self, tmp_path, rng):
        vals = rng.poisson(4.0, (25, 8)).astype(float)
        mask = rng.uniform(size=(25, 8)) > 0.15
        gio.write_matrix_market(tmp_path / "y.mtx", vals, mask)
        gio.write_mask_file(tmp_path / "y_mask.txt", mask)
        code = run(["fit", "--y", tmp_path / "y.mtx", "--mask",
                    tmp_path / "y_mask.txt", "--rank", 1, "--family", "poisson",
                    "--max-epochs", 10, "--seed", 0, "--out", tmp_path / "fit"])
        assert code in (0, 3)


class TestCvCommand:
    def test_grid_written(self, sim_dir, tmp_path):
        out = tmp_path / "cv"
        code = run(["cv", "--y", sim_dir / "y.csv", "--x", sim_dir / "x.csv",
                    "--z", sim_dir / "z.csv", "--ranks", "0:2", "--folds", 2,
                    "--family", "poisson", "--algorithm", "newton",
                    "--max-epochs", 40, "--stepsize", "0.4", "--seed", 0,
                    "--out", out])
        assert code == 0
        rep = json.load(open(out / "rank_report.json"))
        assert rep["ranks"] == [0, 1, 2]
        assert len(rep["cv_deviance"]) == 3
        assert all(len(cell) == 2 for cell in rep["cv_deviance"])
        assert set(rep["chosen"]) == {"cv", "aic", "bic", "scree"}
        assert (out / "scree.csv").exists()

    def test_scree_only_runs_without_fitting(self, sim_dir, tmp_path):
        out = tmp_path / "scree"
        code = run(["cv", "--y", sim_dir / "y.csv", "--criterion", "scree",
                    "--ranks", "1:6", "--out", out])
        assert code == 0
        rep = json.load(open(out / "rank_report.json"))
        assert "scree" in rep["chosen"]
        assert "cv_deviance" not in rep


class TestEvalCommand:
    def test_baseline_and_perfect(self, tmp_path, rng):
        # strictly positive counts keep the perfect predictor inside the
        # Poisson mean domain
        y = rng.poisson(5.0, (12, 6)).astype(float) + 1.0
        test = np.zeros((12, 6), dtype=bool)
        test[rng.uniform(size=(12, 6)) < 0.3] = True
        gio.write_dense_csv(tmp_path / "y.csv", y)
        gio.write_mask_file(tmp_path / "test.txt", ~test)
        ybar = float(y[~test].mean())
        gio.write_dense_csv(tmp_path / "mu_base.csv", np.full_like(y, ybar))
        code = run(["eval", "--y", tmp_path / "y.csv", "--mu",
                    tmp_path / "mu_base.csv", "--test", tmp_path / "test.txt",
                    "--family", "poisson", "--out", tmp_path / "base"])
        assert code == 0
        rep = json.load(open(tmp_path / "base" / "metrics.json"))
        assert rep["rel_deviance"] == pytest.approx(1.0)
        assert rep["rel_log_rmse"] == pytest.approx(1.0)

        gio.write_dense_csv(tmp_path / "mu_true.csv", y)
        run(["eval", "--y", tmp_path / "y.csv", "--mu", tmp_path / "mu_true.csv",
             "--test", tmp_path / "test.txt", "--family", "poisson",
             "--out", tmp_path / "perfect"])
        rep = json.load(open(tmp_path / "perfect" / "metrics.json"))
        assert rep["rel_deviance"] == 0.0
        assert rep["rel_log_rmse"] == 0.0

    def test_shape_mismatch_exits_one(self, tmp_path, rng):
        gio.write_dense_csv(tmp_path / "y.csv", np.ones((3, 3)))
        gio.write_dense_csv(tmp_path / "mu.csv", np.ones((2, 3)))
        gio.write_mask_file(tmp_path / "t.txt", np.zeros((3, 3), bool))
        assert run(["eval", "--y", tmp_path / "y.csv", "--mu", tmp_path / "mu.csv",
                    "--test", tmp_path / "t.txt", "--out", tmp_path]) == 1
