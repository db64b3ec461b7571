"""End-to-end command line behavior, run in process through main(argv)."""

import csv
import json

import numpy as np
import pytest

from mpsgen.cli import main
from mpsgen.datasets import load_dataset_csv
from mpsgen.mps import init_ensemble, load_model, save_model
from mpsgen.rng import RngStream
from mpsgen.embeddings import make_embedding


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared artifacts: a small dataset and a trained model."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "moons.csv"
    assert main(
        ["gen-data", "--dataset", "moons", "--n", "120", "--noise", "0.1",
         "--out", str(data), "--seed", "3"]
    ) == 0
    model = root / "model.mps"
    history = root / "history.jsonl"
    assert main(
        ["train", "--data", str(data), "--embedding", "fourier", "--d", "3",
         "--bond-dim", "2", "--epochs", "4", "--batch-size", "32",
         "--out-model", str(model), "--history", str(history), "--seed", "0"]
    ) == 0
    return {"root": root, "data": data, "model": model, "history": history}


class TestGenData:
    def test_spiral_rows(self, tmp_path):
        out = tmp_path / "sp.csv"
        assert main(["gen-data", "--dataset", "spiral", "--n", "25", "--out", str(out)]) == 0
        rows = _read_csv(out)
        assert rows[0] == ["x0", "x1", "label"]
        assert len(rows) == 51

    def test_iris_rows(self, tmp_path):
        out = tmp_path / "iris.csv"
        assert main(["gen-data", "--dataset", "iris", "--out", str(out)]) == 0
        assert len(_read_csv(out)) == 151

    def test_seed_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            main(["gen-data", "--dataset", "moons", "--n", "40", "--out", str(p), "--seed", "9"])
        assert a.read_text() == b.read_text()


class TestTrain:
    def test_artifacts(self, workdir):
        m = load_model(workdir["model"])
        assert m.n_sites == 2 and m.embedding.kind == "fourier"
        lines = workdir["history"].read_text().splitlines()
        assert len(lines) == 4
        row = json.loads(lines[0])
        assert set(row) == {
            "epoch", "train_loss", "train_accuracy",
            "val_loss", "val_accuracy", "learning_rate",
        }

    def test_summary_json_on_stdout(self, workdir, capsys, tmp_path):
        out = tmp_path / "m.mps"
        assert main(
            ["train", "--data", str(workdir["data"]), "--embedding", "fourier",
             "--d", "2", "--epochs", "1", "--out-model", str(out)]
        ) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["epochs_run"] == 1
        assert 0.0 <= summary["val_accuracy"] <= 1.0

    def test_sincos_rejects_d(self, workdir, tmp_path):
        code = main(
            ["train", "--data", str(workdir["data"]), "--embedding", "sincos",
             "--d", "5", "--epochs", "1", "--out-model", str(tmp_path / "x.mps")]
        )
        assert code == 1

    def test_missing_data_file_is_io_error(self, tmp_path):
        code = main(
            ["train", "--data", str(tmp_path / "nope.csv"), "--embedding", "fourier",
             "--d", "2", "--out-model", str(tmp_path / "x.mps")]
        )
        assert code == 3


class TestSample:
    def test_count_and_label_column(self, workdir, tmp_path):
        out = tmp_path / "s.csv"
        assert main(
            ["sample", "--model", str(workdir["model"]), "--class", "1",
             "--count", "7", "--bins", "64", "--out", str(out)]
        ) == 0
        rows = _read_csv(out)
        assert len(rows) == 8
        assert all(r[-1] == "1" for r in rows[1:])
        feats = load_dataset_csv(out).features
        assert feats.min() >= 0.0 and feats.max() <= 1.0

    def test_uniform_model_reproduces_latents(self, tmp_path):
        """A flat density makes the sampler the identity map on latents."""
        model = init_ensemble(2, 2, 2, make_embedding("fourier", 1), sigma=0.0)
        mp = tmp_path / "flat.mps"
        save_model(model, mp)
        nu = np.array([[0.1, 0.9], [0.25, 0.5], [0.77, 0.01]])
        nf = tmp_path / "nu.csv"
        np.savetxt(nf, nu, delimiter=",")
        out = tmp_path / "s.csv"
        assert main(
            ["sample", "--model", str(mp), "--class", "0", "--nu-file", str(nf),
             "--bins", "100", "--out", str(out)]
        ) == 0
        got = load_dataset_csv(out).features
        np.testing.assert_allclose(got, nu, atol=1e-9)

    def test_nu_width_mismatch(self, workdir, tmp_path):
        nf = tmp_path / "nu.csv"
        np.savetxt(nf, np.full((2, 3), 0.5), delimiter=",")
        code = main(
            ["sample", "--model", str(workdir["model"]), "--class", "0",
             "--nu-file", str(nf), "--out", str(tmp_path / "s.csv")]
        )
        assert code == 1

    def test_corrupt_model_is_io_error(self, tmp_path):
        bad = tmp_path / "bad.mps"
        bad.write_bytes(b"not a model at all")
        code = main(["sample", "--model", str(bad), "--class", "0",
                     "--out", str(tmp_path / "s.csv")])
        assert code == 3


class TestEval:
    def test_report_file(self, workdir, tmp_path):
        out = tmp_path / "rep.json"
        assert main(
            ["eval", "--model", str(workdir["model"]), "--data", str(workdir["data"]),
             "--out-json", str(out)]
        ) == 0
        rep = json.loads(out.read_text())
        assert rep["n_eval"] == 120
        assert 0.0 <= rep["accuracy"] <= 1.0
        assert rep["fid_like"] is None

    def test_with_samples_prints_full_report(self, workdir, tmp_path, capsys):
        samples = tmp_path / "s.csv"
        main(["sample", "--model", str(workdir["model"]), "--class", "0",
              "--count", "50", "--bins", "64", "--out", str(samples)])
        capsys.readouterr()
        assert main(
            ["eval", "--model", str(workdir["model"]), "--data", str(workdir["data"]),
             "--samples", str(samples)]
        ) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["n_samples"] == 50
        assert rep["fid_like"] >= 0.0
        assert 0.0 <= rep["outlier_rate"] <= 1.0


class TestTrainGan:
    def test_tiny_run(self, workdir, tmp_path):
        out = tmp_path / "gan.mps"
        hist = tmp_path / "gan.jsonl"
        assert main(
            ["train-gan", "--model", str(workdir["model"]), "--data", str(workdir["data"]),
             "--epochs", "1", "--steps-per-epoch", "1", "--batch-size", "8",
             "--disc-pretrain", "0", "--disc-hidden", "8", "--bins", "32",
             "--acc-floor", "0.0", "--out-model", str(out), "--history", str(hist)]
        ) == 0
        row = json.loads(hist.read_text().splitlines()[0])
        assert set(row) == {"epoch", "disc_loss", "gen_loss", "val_accuracy", "recovery_epochs"}
        load_model(out)

    def test_impossible_floor_is_numeric_error(self, workdir, tmp_path):
        code = main(
            ["train-gan", "--model", str(workdir["model"]), "--data", str(workdir["data"]),
             "--epochs", "1", "--steps-per-epoch", "1", "--batch-size", "8",
             "--disc-pretrain", "0", "--disc-hidden", "8", "--bins", "32",
             "--acc-floor", "1.0", "--retrain-budget", "1",
             "--out-model", str(tmp_path / "gan.mps")]
        )
        assert code == 2


class TestReferenceRuns:
    def test_legendre_moons_accuracy(self, workdir, tmp_path, capsys):
        data = tmp_path / "moons2k.csv"
        main(["gen-data", "--dataset", "moons", "--n", "2000", "--out", str(data)])
        capsys.readouterr()
        assert main(
            ["train", "--data", str(data), "--embedding", "legendre", "--d", "10",
             "--bond-dim", "4", "--epochs", "60", "--out-model", str(tmp_path / "m.mps")]
        ) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["val_accuracy"] >= 0.95

    def test_eval_on_training_set_as_samples(self, workdir, tmp_path, capsys):
        """Feeding the training set back as 'samples' is the degenerate
        best case: first two moments coincide and nothing is an outlier."""
        capsys.readouterr()
        assert main(
            ["eval", "--model", str(workdir["model"]), "--data", str(workdir["data"]),
             "--samples", str(workdir["data"])]
        ) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["fid_like"] < 1e-8
        assert rep["outlier_rate"] == 0.0


class TestExperiments:
    def test_bond_dim_table(self, tmp_path):
        out = tmp_path / "bd.csv"
        assert main(
            ["experiment", "--kind", "bond-dim", "--bond-dims", "1,2", "--seeds", "0",
             "--n", "50", "--d", "3", "--epochs", "2", "--out-csv", str(out)]
        ) == 0
        rows = _read_csv(out)
        assert rows[0] == ["bond_dim", "seed", "val_accuracy"]
        assert [r[0] for r in rows[1:]] == ["1", "2"]

    def test_robustness_sigma_zero_equals_clean_accuracy(self, workdir, tmp_path):
        out = tmp_path / "rob.csv"
        assert main(
            ["experiment", "--kind", "robustness", "--data", str(workdir["data"]),
             "--embeddings", "fourier", "--seeds", "0", "--sigmas", "0",
             "--mode", "eval", "--d", "3", "--bond-dim", "2", "--epochs", "4",
             "--out-csv", str(out)]
        ) == 0
        rows = _read_csv(out)
        assert len(rows) == 2
        # reproduce the experiment's training run and compare exactly
        from mpsgen.datasets import to_support
        from mpsgen.metrics import accuracy
        from mpsgen.training import TrainConfig, train_classifier

        ds = load_dataset_csv(workdir["data"])
        e = make_embedding("fourier", 3)
        feats = to_support(e, ds.features)
        model, _ = train_classifier(feats, ds.labels, e, 2, TrainConfig(epochs=4, seed=0))
        assert float(rows[1][-1]) == accuracy(model, feats, ds.labels)

    def test_binning_error_decreases(self, tmp_path):
        out = tmp_path / "bin.csv"
        assert main(
            ["experiment", "--kind", "binning", "--bins-list", "8,64,512",
             "--reps", "2", "--out-csv", str(out)]
        ) == 0
        rows = _read_csv(out)
        assert rows[0] == ["bins", "squared_error", "median_seconds"]
        errs = [float(r[1]) for r in rows[1:]]
        assert errs[0] > errs[1] > errs[2]

    def test_latent_path(self, workdir, tmp_path):
        out = tmp_path / "lat.csv"
        assert main(
            ["experiment", "--kind", "latent", "--model", str(workdir["model"]),
             "--class", "0", "--steps", "5", "--bins", "64", "--out-csv", str(out)]
        ) == 0
        rows = _read_csv(out)
        assert rows[0] == ["class", "step", "t", "x0", "x1"]
        assert len(rows) == 6
        assert float(rows[1][2]) == 0.0 and float(rows[-1][2]) == 1.0


class TestConfigAndEnv:
    def test_config_defaults_with_flag_override(self, workdir, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs = 2\nlr = 0.25  # overridden below\n")
        out = tmp_path / "m.mps"
        hist = tmp_path / "h.jsonl"
        assert main(
            ["train", "--data", str(workdir["data"]), "--embedding", "fourier",
             "--d", "2", "--config", str(cfg), "--lr", "0.125",
             "--out-model", str(out), "--history", str(hist)]
        ) == 0
        lines = hist.read_text().splitlines()
        assert len(lines) == 2  # from the config file
        assert json.loads(lines[0])["learning_rate"] == 0.125  # flag wins

    def test_unknown_config_key(self, workdir, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("frobnicate=1\n")
        code = main(
            ["train", "--data", str(workdir["data"]), "--embedding", "fourier",
             "--d", "2", "--config", str(cfg), "--out-model", str(tmp_path / "m.mps")]
        )
        assert code == 1

    def test_out_dir_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MPSGEN_OUT_DIR", str(tmp_path))
        assert main(["gen-data", "--dataset", "moons", "--n", "10", "--out", "rel.csv"]) == 0
        assert (tmp_path / "rel.csv").exists()

    def test_out_dir_env_keeps_absolute(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MPSGEN_OUT_DIR", str(tmp_path / "sub"))
        target = tmp_path / "abs.csv"
        assert main(["gen-data", "--dataset", "moons", "--n", "10", "--out", str(target)]) == 0
        assert target.exists()


class TestPipeline:
    def test_refined_moons_samples_stay_on_manifold(self, tmp_path, capsys):
        """gen-data -> train -> train-gan -> sample -> eval, checking that
        adversarial refinement pulls the sample cloud onto the data."""
        data = tmp_path / "moons.csv"
        assert main(["gen-data", "--dataset", "moons", "--n", "2000",
                     "--noise", "0.1", "--out", str(data)]) == 0
        pre = tmp_path / "pre.mps"
        assert main(["train", "--data", str(data), "--embedding", "fourier",
                     "--d", "10", "--bond-dim", "4", "--epochs", "80",
                     "--out-model", str(pre)]) == 0
        post = tmp_path / "post.mps"
        assert main(["train-gan", "--model", str(pre), "--data", str(data),
                     "--out-model", str(post)]) == 0
        merged = tmp_path / "samples.csv"
        parts = []
        for c in (0, 1):
            piece = tmp_path / f"s{c}.csv"
            assert main(["sample", "--model", str(post), "--class", str(c),
                         "--count", "1000", "--seed", str(c), "--out", str(piece)]) == 0
            lines = piece.read_text().splitlines()
            parts.append(lines[1:] if parts else lines)
        merged.write_text("\n".join(parts[0] + parts[1]) + "\n")
        capsys.readouterr()
        assert main(["eval", "--model", str(post), "--data", str(data),
                     "--samples", str(merged)]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["outlier_rate"] < 0.2
        assert rep["accuracy"] >= 0.95
        assert rep["n_samples"] == 2000


class TestUsageErrors:
    def test_unknown_flag(self, tmp_path):
        assert main(["gen-data", "--dataset", "moons", "--out",
                     str(tmp_path / "x.csv"), "--bogus"]) == 1

    def test_missing_required(self):
        assert main(["train"]) == 1

    def test_bad_numeric(self, tmp_path):
        assert main(["gen-data", "--dataset", "moons", "--n", "abc",
                     "--out", str(tmp_path / "x.csv")]) == 1

    def test_version_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_bad_count(self, workdir, tmp_path):
        assert main(["sample", "--model", str(workdir["model"]), "--class", "0",
                     "--count", "0", "--out", str(tmp_path / "s.csv")]) == 1
