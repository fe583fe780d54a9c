import hashlib
import json
import threading
import time

import numpy as np
import pytest

from ldedfusion import cli, dsp, fileio
from ldedfusion.pipeline import read_defect_map

SMALL = ["--walls", "1", "--dwell", "0", "--layers", "4", "--onset-layer", "2"]


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A one-wall dataset and a hybrid model trained on it for two epochs."""
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["simulate", "--out", str(d / "ds"), "--seed", "5"] + SMALL) == 0
    assert cli.main(["train", "--dataset", str(d / "ds"), "--model", "hybrid", "--epochs", "2",
                     "--seed", "1", "--out", str(d / "m.ldnn")]) == 0
    return d


# --- simulate ----------------------------------------------------------------------------------

def test_simulate_default_walls_and_hash(tmp_path, capsys):
    hashes = []
    for name in ("a", "b"):
        code, out, err = run_cli(capsys, "simulate", "--out", tmp_path / name, "--seed", 7,
                                 "--layers", 11, "--onset-layer", 1)
        assert code == 0
        assert "seed = 7" in err
        hashes.append(sha(tmp_path / name / "manifest.json"))
    report = json.loads(out)
    assert [w["spec"]["dwell_s"] for w in report["walls"]] == [0, 5, 10]
    assert hashes[0] == hashes[1]


def test_simulate_single_wall(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "simulate", "--out", tmp_path / "d", "--walls", 1, "--dwell", 5,
                           "--layers", 6, "--onset-layer", 1)
    assert code == 0
    walls = json.loads(out)["walls"]
    assert len(walls) == 1 and walls[0]["spec"]["dwell_s"] == 5


@pytest.mark.parametrize("argv", [
    ["simulate"],  # missing --out
    ["simulate", "--out", "x", "--walls", "0"],
    ["simulate", "--out", "x", "--dwell", "3"],
    ["simulate", "--out", "x", "--walls", "2", "--dwell", "5"],
    ["simulate", "--out", "x", "--layers", "10"],  # onset 20 beyond 10 layers
    ["train", "--dataset", "d", "--out", "m", "--epochs", "0"],
    ["eval", "--dataset", "d", "--runs", "1"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(tmp_path, monkeypatch, argv, capsys):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 2


def test_simulate_unwritable_exit_3(tmp_path, capsys):
    (tmp_path / "full").mkdir()
    (tmp_path / "full" / "x").write_text("")
    assert cli.main(["simulate", "--out", str(tmp_path / "full")] + SMALL) == 3


# --- config resolution ----------------------------------------------------------------------------

def resolve(argv, environ=None):
    return cli.resolve(cli.build_parser(), argv, environ or {})


def test_precedence_flags_over_file_over_env(tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("# comment\nseed = 11\nlayers = 9   # trailing\n")
    base = ["simulate", "--out", "o", "--config", str(cfg)]
    assert resolve(base, {"LDED_SEED": "3"}).seed == 11
    assert resolve(base + ["--seed", "12"], {"LDED_SEED": "3"}).seed == 12
    assert resolve(base).layers == 9
    assert resolve(["simulate", "--out", "o"], {"LDED_SEED": "3"}).seed == 3
    assert resolve(["simulate", "--out", "o"]).seed == 0


def test_config_can_supply_required(tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("out = from_file\n")
    assert resolve(["simulate", "--config", str(cfg)]).out == "from_file"


@pytest.mark.parametrize("text", ["colour = blue\n", "seed = abc\n", "no equals sign\n"])
def test_bad_config_exit_2(tmp_path, text):
    cfg = tmp_path / "c.conf"
    cfg.write_text(text)
    assert cli.main(["simulate", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2


def test_bad_env_seed_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("LDED_SEED", "seven")
    assert cli.main(["simulate", "--out", str(tmp_path / "o")] + SMALL) == 2


def test_env_seed_reaches_output(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LDED_SEED", "42")
    code, out, _ = run_cli(capsys, "simulate", "--out", tmp_path / "o", *SMALL)
    assert code == 0 and json.loads(out)["seed"] == 42


# --- train / eval / run ----------------------------------------------------------------------------

def test_train_reproducible(trained, capsys):
    code, out, err = run_cli(capsys, "train", "--dataset", trained / "ds", "--model", "hybrid", "--epochs", 2,
                             "--seed", 1, "--out", trained / "m2.ldnn")
    assert code == 0
    assert sha(trained / "m.ldnn") == sha(trained / "m2.ldnn")
    report = json.loads(out)
    assert len(report["history"]["loss"]) == 2 and "epoch   2" in err
    assert 0 <= report["test_accuracy"] <= 1


def test_eval_report(trained, capsys):
    code, out, _ = run_cli(capsys, "eval", "--dataset", trained / "ds", "--model-arch", "mfcc-cnn",
                           "--runs", 2, "--epochs", 1)
    assert code == 0
    r = json.loads(out)["models"]["mfcc-cnn"]
    accs = [run["accuracy"] for run in r["runs"]]
    assert [run["seed"] for run in r["runs"]] == [0, 1]
    assert min(accs) <= r["mean"] <= max(accs)
    assert np.array(r["confusion"]["counts"]).shape == (3, 3)


def test_run_twice_identical_maps(trained, capsys):
    hashes = []
    for name in ("a.jsonl", "b.jsonl"):
        code, out, _ = run_cli(capsys, "run", "--model", trained / "m.ldnn", "--replay", trained / "ds",
                               "--map", trained / name, "--speed", 0)
        assert code == 0
        hashes.append(sha(trained / name))
    rep = json.loads(out)
    assert hashes[0] == hashes[1]
    assert rep["predicted"] == rep["fused"] == rep["records"] > 0 and rep["unregistered"] == 0


def test_run_csv_map(trained, capsys):
    code, _, _ = run_cli(capsys, "run", "--model", trained / "m.ldnn", "--replay", trained / "ds",
                         "--map", trained / "m.csv")
    assert code == 0
    assert read_defect_map(trained / "m.csv") == read_defect_map(trained / "a.jsonl")


def test_run_missing_model_exit_2(trained, capsys):
    code, _, err = run_cli(capsys, "run", "--model", trained / "nope.ldnn", "--replay", trained / "ds",
                           "--map", trained / "x.jsonl")
    assert code == 2 and "not found" in err


def test_run_source_flags_exclusive(trained):
    assert cli.main(["run", "--model", str(trained / "m.ldnn"), "--map", str(trained / "x.jsonl")]) == 2


def test_run_corrupt_model_exit_3(trained):
    bad = trained / "bad.ldnn"
    bad.write_bytes(b"LDNN\x01")
    assert cli.main(["run", "--model", str(bad), "--replay", str(trained / "ds"),
                     "--map", str(trained / "x.jsonl")]) == 3


def test_listen_matches_replay(trained, capsys):
    run_cli(capsys, "run", "--model", trained / "m.ldnn", "--replay", trained / "ds", "--map", trained / "r.jsonl")
    import socket

    with socket.socket() as s:  # pick a free port
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    server = threading.Thread(target=cli.main, args=(["serve", "--dataset", str(trained / "ds"),
                                                      "--listen", f"127.0.0.1:{port}"],))
    server.start()
    code = cli.main(["run", "--model", str(trained / "m.ldnn"), "--listen", f"127.0.0.1:{port}",
                     "--map", str(trained / "l.jsonl")])
    server.join(30)
    assert code == 0
    assert sha(trained / "l.jsonl") == sha(trained / "r.jsonl")


def test_listen_nothing_there_exit_5(trained):
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    t0 = time.monotonic()
    code = cli.main(["run", "--model", str(trained / "m.ldnn"), "--listen", f"127.0.0.1:{port}",
                     "--map", str(trained / "x.jsonl")])
    assert code == 5 and time.monotonic() - t0 < 30


# --- inspect ---------------------------------------------------------------------------------------------

def test_inspect_silent_is_uniform(tmp_path, capsys):
    fileio.write_wav(tmp_path / "s.wav", np.zeros(44100, np.float32), 44100)
    code, out, _ = run_cli(capsys, "inspect", "--wav", tmp_path / "s.wav", "--chunk-index", 3,
                           "--out", tmp_path / "s")
    assert code == 0
    img = fileio.read_pgm(tmp_path / "s_logmel.pgm")
    assert img.shape == (64, 31) and np.all(img == img.flat[0])
    assert json.loads(out)["t_start_us"] == 300_000


def test_inspect_tone_brightest_row_and_csv(tmp_path, capsys):
    x = 0.5 * np.sin(2 * np.pi * 1000 * np.arange(44100) / 44100)
    fileio.write_wav(tmp_path / "t.wav", x.astype(np.float32), 44100)
    assert run_cli(capsys, "inspect", "--wav", tmp_path / "t.wav", "--out", tmp_path / "t")[0] == 0
    _, rows = fileio.read_csv(tmp_path / "t_logmel.csv")
    m = np.array(rows, dtype=np.float64)
    fb = dsp.mel_filterbank(dsp.MelConfig(), 44100)
    assert np.argmax(m.mean(axis=1)) == np.argmax(fb[:, round(1000 * 512 / 44100)])
    chunk = dsp.frame_signal(fileio.read_wav(tmp_path / "t.wav")[0], 44100)[0]
    assert np.array_equal(m, dsp.mel_spectrogram(chunk).values)
    img = fileio.read_pgm(tmp_path / "t_logmel.pgm")
    assert np.argmax(img.mean(axis=1)) == np.argmax(m.mean(axis=1))


def test_inspect_index_out_of_range(tmp_path):
    fileio.write_wav(tmp_path / "s.wav", np.zeros(8820, np.float32), 44100)
    assert cli.main(["inspect", "--wav", str(tmp_path / "s.wav"), "--chunk-index", "2",
                     "--out", str(tmp_path / "s")]) == 2


def test_inspect_missing_wav_exit_3(tmp_path):
    assert cli.main(["inspect", "--wav", str(tmp_path / "none.wav"), "--out", str(tmp_path / "s")]) == 3
