import json

import numpy as np
import pytest

from specbias.cli import EXIT_CODES, main


@pytest.fixture
def run(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")

    def call(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err
    return call


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def error_of(err):
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) == {"error", "exit", "message"}
    return doc


@pytest.fixture
def corpus_dir(run, tmp_path):
    cfg = write(tmp_path / "corpus.json", {"corpus": {"trials_per_cell": 10}, "seed": 1})
    out = tmp_path / "corpus"
    assert run("synth", "--config", cfg, "--out-dir", out)[0] == 0
    assert run("embed", "--epochs", out / "corpus.epochs.f32", "--embedder", "logpsd", "--out-dir", out)[0] == 0
    return out


def test_subject_task_pipeline(run, corpus_dir):
    d = corpus_dir
    common = ["--epochs", d / "corpus.epochs.f32", "--emb", d / "embeddings.emb.f32", "--out-dir", d]
    probe_cfg = write(d / "probe.json", {"n_seeds": 1, "batch": 16})
    assert run("probe", *common, "--split", d / "split.csv", "--label", "subject", "--config", probe_cfg)[0] == 0
    rep = json.loads((d / "probe_subject.json").read_text())
    assert rep["kind"] == "subject" and len(rep["per_run_kappa"]) == 1
    assert (d / "confusion_subject.csv").read_text().startswith("truth\\pred,S1")
    assert run("battery", *common, "--split", d / "split.csv", "--config", probe_cfg)[0] == 0
    assert "kappa_gap_subject_minus_task" in json.loads((d / "battery.json").read_text())
    assert run("geometry", *common)[0] == 0
    geo = json.loads((d / "geometry.json").read_text())
    assert geo["d_cs"] > 0 and geo["d_ct"] > 0
    assert len((d / "pca.csv").read_text().splitlines()) == 101
    code, out, _ = run("verify", d / "corpus.epochs.f32", d / "embeddings.emb.f32", d / "battery.json")
    assert code == 0 and out.count("ok ") == 3


def test_sweep_embed_decode(run, tmp_path):
    cfg = write(tmp_path / "sweep.json", {"param_name": "beta", "theta_min": 1.0, "theta_max": 2.0,
                                          "n_samples": 60})
    code, out, _ = run("sweep", "--config", cfg, "--out-dir", tmp_path)
    assert code == 0 and out.strip().endswith("sweep.epochs.f32")
    ep = tmp_path / "sweep.epochs.f32"
    assert run("embed", "--epochs", ep, "--embedder", "bandpower", "--out-dir", tmp_path)[0] == 0
    assert run("decode", "--emb", tmp_path / "embeddings.emb.f32", "--epochs", ep, "--out-dir", tmp_path)[0] == 0
    rep = json.loads((tmp_path / "decode.json").read_text())
    assert rep["r2_pooled"] > 0.5 and rep["target_name"] == "theta"
    assert (tmp_path / "decode.csv").read_text().startswith("y,y_hat\n")


def test_bundled_config_and_seed_override(run, tmp_path):
    assert run("synth", "--config", "synth_default", "--seed", "3", "--out-dir", tmp_path)[0] == 0
    manifest = json.loads((tmp_path / "synth.epochs.json").read_text())
    assert manifest["n"] == 100 and manifest["meta"][0]["seed_used"] == 3


def test_forward_writes_covariance(run, tmp_path):
    cfg = write(tmp_path / "fwd.json", {
        "leadfield": [[1.0], [0.5]], "noise_cov": [[0.01, 0.0], [0.0, 0.01]], "n_trials": 5,
        "sources": [{"kind": "aperiodic", "params": {"beta": 1.5, "ap_offset": 1.0, "peaks": []}}]})
    code, _, err = run("forward", "--config", cfg, "--out-dir", tmp_path)
    assert code == 0, err
    rep = json.loads((tmp_path / "covariance.json").read_text())
    assert rep["n_pooled"] == 5000 and rep["ratio_ap_osc"] is None


def test_train_ae_and_embed(run, tmp_path):
    syn = write(tmp_path / "syn.json", {"n_epochs": 40})
    run("synth", "--config", syn, "--out-dir", tmp_path)
    cfg = write(tmp_path / "ae.json", {"arch": {"hidden": 8, "latent": 3},
                                       "train": {"epochs": 1, "batch": 4}})
    ep = tmp_path / "synth.epochs.f32"
    assert run("train-ae", "--config", cfg, "--epochs", ep, "--out-dir", tmp_path)[0] == 0
    assert json.loads((tmp_path / "train_report.json").read_text())["arch"]["latent"] == 3
    assert run("embed", "--epochs", ep, "--embedder", "masked_ae", "--model", tmp_path / "model.npz",
               "--out-dir", tmp_path)[0] == 0
    assert json.loads((tmp_path / "embeddings.emb.json").read_text())["shape"] == [40, 3]


def test_import_numpy_embeddings(run, tmp_path):
    np.save(tmp_path / "x.npy", np.random.default_rng(0).normal(size=(5, 3)))
    assert run("import-emb", "--input", tmp_path / "x.npy", "--embedder-id", "mine", "--out-dir", tmp_path)[0] == 0
    assert json.loads((tmp_path / "imported.emb.json").read_text())["embedder_id"] == "mine"


def test_small_recipe_is_reproducible(run, tmp_path):
    cfg = write(tmp_path / "r.json", {"recipe": "sweep_decode", "sweeps": [
        {"name": "b", "param_name": "beta", "theta_min": 1.0, "theta_max": 2.0, "n_samples": 50}]})
    run("recipe", "--config", cfg, "--out-dir", tmp_path / "a")
    run("recipe", "--config", cfg, "--out-dir", tmp_path / "b")
    a, b = (tmp_path / "a" / "report.json").read_bytes(), (tmp_path / "b" / "report.json").read_bytes()
    assert a == b and json.loads(a)["decodability"]["b"]["r2_pooled"] > 0.9


def test_usage_error(run):
    code, _, err = run("synth", "--no-such-flag")
    assert code == EXIT_CODES["usage"] == 2 and error_of(err)["error"] == "usage"


def test_missing_config(run, tmp_path):
    code, _, err = run("synth", "--config", tmp_path / "nope.json")
    assert code == EXIT_CODES["missing_input"] and "not found" in error_of(err)["message"]


def test_bad_config_value(run, tmp_path):
    cfg = write(tmp_path / "s.json", {"param_name": "gamma", "theta_min": 0, "theta_max": 1})
    code, _, err = run("sweep", "--config", cfg, "--out-dir", tmp_path)
    assert code == EXIT_CODES["config"] and error_of(err)["exit"] == code


def test_invalid_json(run, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("synth", "--config", bad)[0] == EXIT_CODES["config"]


def test_corrupted_artifact(run, corpus_dir):
    payload = corpus_dir / "embeddings.emb.f32"
    raw = bytearray(payload.read_bytes())
    raw[5] ^= 0xFF
    payload.write_bytes(bytes(raw))
    code, _, err = run("verify", payload)
    assert code == EXIT_CODES["artifact"] and "digest mismatch" in error_of(err)["message"]


def test_constant_targets_are_a_data_error(run, corpus_dir, tmp_path):
    targets = tmp_path / "y.csv"
    targets.write_text("\n".join(["1.0"] * 100))
    code, _, err = run("decode", "--emb", corpus_dir / "embeddings.emb.f32", "--targets", targets,
                       "--out-dir", tmp_path)
    assert code == EXIT_CODES["data"] and "constant" in error_of(err)["message"]


def test_divergence_exit_code(run, tmp_path):
    run("synth", "--config", write(tmp_path / "syn.json", {"n_epochs": 20}), "--out-dir", tmp_path)
    cfg = write(tmp_path / "ae.json", {"arch": {"hidden": 4, "latent": 2},
                                       "train": {"epochs": 3, "batch": 2, "lr": 1e300}})
    with np.errstate(all="ignore"):
        code, _, err = run("train-ae", "--config", cfg, "--epochs", tmp_path / "synth.epochs.f32",
                           "--out-dir", tmp_path)
    assert code == EXIT_CODES["diverged"] and error_of(err)["error"] == "diverged"


def test_no_command_prints_help(run):
    code, out, _ = run()
    assert code == EXIT_CODES["usage"] and "COMMAND" in out


def test_bundled_beta_sweep(run, tmp_path):
    assert run("sweep", "--config", "table1_beta.json", "--out-dir", tmp_path)[0] == 0
    manifest = json.loads((tmp_path / "sweep.epochs.json").read_text())
    theta = [m["theta"] for m in manifest["meta"]]
    assert manifest["n"] == 1000 and theta[0] == 1.0 and theta[-1] == 2.0


@pytest.mark.parametrize("param", ["beta", "ap_offset", "f_osc", "a_osc"])
def test_bundled_sweeps_match_standard_ranges(param):
    from importlib import resources

    from specbias.spectrum import SWEEP_RANGES
    cfg = json.loads((resources.files("specbias.configs") / f"table1_{param}.json").read_text())
    assert (cfg["param_name"], cfg["theta_min"], cfg["theta_max"]) == (param, *SWEEP_RANGES[param])
    assert cfg["n_samples"] == 1000
