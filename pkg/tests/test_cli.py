import json
import subprocess
import sys

import pytest

from covdetect import cli, synth
from covdetect.detector import load_model
from covdetect.evaluation import preprocess
from covdetect.signal_io import load_epochs, save_epochs, save_recording
from covdetect.spd_core import ConvergenceError


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    spec = synth.preset("null", 5, duration_s=300.0)
    for cond, lab in (("ref", "SV"), ("alt", "LD")):
        rec = synth.generate(spec, cond)
        save_recording(rec, d / f"{cond}.rec")
        save_epochs(preprocess(rec, (8, 24), condition=lab), d / f"{cond}.ep")
    return d


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_usage_errors(capsys):
    assert run() == 1
    assert run("train", "--bogus") == 1
    assert "usage" in capsys.readouterr().err
    assert run("frobnicate") == 1
    assert run("train", "--epochs", "x", "--out", "y", "--metric", "manhattan") == 1


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "sweep-band" in capsys.readouterr().out


def test_data_errors(tmp_path, capsys):
    assert run("train", "--epochs", tmp_path / "missing.ep", "--out", tmp_path / "m.json") == 2
    (tmp_path / "bad.ep").write_text("not a header\n")
    assert run("train", "--epochs", tmp_path / "bad.ep", "--out", tmp_path / "m.json") == 2
    assert "error" in capsys.readouterr().err


def test_convergence_exit_code(monkeypatch):
    def boom(opts):
        raise ConvergenceError("no")

    monkeypatch.setitem(cli.COMMANDS, "train", boom)
    assert run("train", "--epochs", "a", "--out", "b") == 3


def test_train_default_configuration(data, tmp_path):
    assert run("train", "--epochs", data / "ref.ep", "--metric", "log-euclidean", "--K", 3, "--L", 25,
               "--out", tmp_path / "m.json") == 0
    m = load_model(tmp_path / "m.json")
    assert (m.K, m.L, m.metric.value) == (3, 25, "log_euclidean")
    assert m.training_meta["channels"] == list(load_epochs(data / "ref.ep").channel_labels)


def test_train_rejects_too_short_period(data, tmp_path):
    assert run("train", "--epochs", data / "ref.ep", "--start", 110, "--out", tmp_path / "m.json") == 2


def test_evaluate_null(data, tmp_path):
    out = tmp_path / "e.csv"
    assert run("evaluate", "--reference", data / "ref.ep", "--altered", data / "alt.ep",
               "--out", out, "--summary", tmp_path / "s.json") == 0
    mean_auc = float(out.read_text().splitlines()[1].split(",")[5])
    assert 0.45 <= mean_auc <= 0.55
    assert json.loads((tmp_path / "s.json").read_text())["n_folds"] == 10


@pytest.mark.parametrize("method", ["ocsvm-cov", "csp-lda"])
def test_evaluate_baselines(data, tmp_path, method):
    assert run("evaluate", "--method", method, "--reference", data / "ref.ep",
               "--altered", data / "alt.ep", "--V", 3, "--out", tmp_path / "e.csv") == 0
    assert (tmp_path / "e.csv").read_text().splitlines()[1].startswith(method)


def test_evaluate_airflow(tmp_path):
    spec = synth.preset("separable", 0, duration_s=150.0)
    for cond, lab in (("ref", "SV"), ("alt", "SN")):
        rec = synth.generate_airflow(spec, cond)
        from covdetect.signal_io import epoch_windows
        save_epochs(epoch_windows(rec, 5.0, 0.5, lab), tmp_path / f"{cond}.ep")
    assert run("evaluate", "--method", "ocsvm-airflow", "--reference", tmp_path / "ref.ep",
               "--altered", tmp_path / "alt.ep", "--V", 3, "--out", tmp_path / "e.csv") == 0


def test_config_precedence(data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"K": 2, "L": 20, "metric": "euclidean"}))
    assert run("--config", cfg, "train", "--epochs", data / "ref.ep", "--K", 4,
               "--out", tmp_path / "m.json") == 0
    m = load_model(tmp_path / "m.json")
    assert (m.K, m.L, m.metric.value) == (4, 20, "euclidean")
    cfg.write_text("[1, 2]")
    assert run("--config", cfg, "train", "--epochs", data / "ref.ep", "--out", tmp_path / "m.json") == 2


def test_seed_after_subcommand(data, tmp_path):
    assert run("train", "--seed", 3, "--epochs", data / "ref.ep", "--out", tmp_path / "a.json") == 0
    assert run("--seed", 3, "train", "--epochs", data / "ref.ep", "--out", tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_data_dir_env(data, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.DATA_DIR_ENV, str(data))
    assert run("train", "--epochs", "ref.ep", "--out", tmp_path / "m.json") == 0


def test_pipeline_and_inputs_untouched(data, tmp_path):
    before = (data / "ref.ep").read_bytes()
    ep = tmp_path / "ref.ep"
    assert run("preprocess", "--input", data / "ref.rec", "--band", 8, 24, "--condition", "SV",
               "--reject", 1e6, "--out", ep) == 0
    assert run("train", "--epochs", ep, "--out", tmp_path / "m.json") == 0
    assert run("calibrate", "--model", tmp_path / "m.json", "--epochs", ep,
               "--out", tmp_path / "c.json") == 0
    assert run("score", "--model", tmp_path / "c.json", "--epochs", data / "alt.ep",
               "--out", tmp_path / "s.csv") == 0
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "epoch_index,start_s,condition,delta,class"
    assert rows[1].split(",")[4] in ("0", "1")
    assert (data / "ref.ep").read_bytes() == before


def test_synth_spec_output(tmp_path):
    assert run("synth", "--preset", "channels", "--duration-s", 10, "--condition", "alt",
               "--out", tmp_path / "a.rec", "--write-spec", tmp_path / "s.json") == 0
    assert run("synth", "--spec", tmp_path / "s.json", "--condition", "alt",
               "--out", tmp_path / "b.rec") == 0
    assert (tmp_path / "a.rec").read_bytes() == (tmp_path / "b.rec").read_bytes()
    assert run("synth", "--airflow", "--duration-s", 10, "--out", tmp_path / "f.rec") == 0
    assert "modality=airflow" in (tmp_path / "f.rec").read_text().splitlines()[0]


def test_selection_and_curve(data, tmp_path):
    assert run("select-channels", "--method", "chorra", "--reference", data / "ref.ep",
               "--altered", data / "alt.ep", "--out", tmp_path / "r.csv") == 0
    assert run("select-channels", "--method", "csp", "--V", 3, "--reference", data / "ref.ep",
               "--altered", data / "alt.ep", "--out", tmp_path / "c.csv") == 0
    assert run("electrode-curve", "--ranking", tmp_path / "r.csv", "--V", 3, "--reference", data / "ref.ep",
               "--altered", data / "alt.ep", "--out", tmp_path / "k.csv") == 0
    assert len((tmp_path / "k.csv").read_text().splitlines()) == 1 + 7


def test_sweep_kl_and_jobs(data, tmp_path):
    args = ["sweep-kl", "--reference", data / "ref.ep", "--altered", data / "alt.ep",
            "--K-range", "1,2", "--L-range", "20-21", "--V", 3]
    assert run(*args, "--out", tmp_path / "a.csv") == 0
    assert run("--jobs", 2, *args, "--out", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "covdetect.cli", "train", "--nope"],
                       capture_output=True, text=True)
    assert r.returncode == 1 and "usage" in r.stderr


def test_airflow_feature_search_cli(tmp_path):
    from covdetect.signal_io import epoch_windows
    spec = synth.preset("separable", 0, duration_s=150.0)
    for cond, lab in (("ref", "SV"), ("alt", "SN")):
        save_epochs(epoch_windows(synth.generate_airflow(spec, cond), 5.0, 0.5, lab), tmp_path / f"{cond}.ep")
    args = ["evaluate", "--reference", tmp_path / "ref.ep", "--altered", tmp_path / "alt.ep", "--V", 3,
            "--feature-search", "--out", tmp_path / "s.csv"]
    assert run(*args, "--method", "ocsvm-airflow") == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 64
    assert run(*args) == 2
