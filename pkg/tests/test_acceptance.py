"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as the tests run (visible with ``-s``) and repeated in
the terminal summary by ``conftest.pytest_terminal_summary``.
"""

import functools
import hashlib
import importlib.util
import itertools
import math
import os
import socket
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from ldedfusion import cli, dsp, sim
from ldedfusion.dataset import load_dataset
from ldedfusion.evalkit import ConfusionMatrix, accuracy, binary_accuracy, confusion, stratified_split
from ldedfusion.models import build_model
from ldedfusion.nn import functional as F
from ldedfusion.nn.gradcheck import check_model_gradients, numerical_gradient, rel_error
from ldedfusion.nn.layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from ldedfusion.nn.serialize import load_model
from ldedfusion.pipeline import Synchronizer, offline_defect_map, read_defect_map, run_pipeline, wall_messages
from ldedfusion.pipeline.wire import paced

from oracles import direct_dft_magnitude, hann, htk_mel_edges_bins, naive_conv2d, naive_dense, naive_maxpool, \
    triangle_filterbank
from test_nn import _f64, _layer_gradcheck, _toy_inputs, toy_hybrid

RESULTS = []  # (number, passed, detail), read by conftest
ROOT = Path(__file__).resolve().parents[1]


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as exc:
                line = f"criterion {number} ({title}): FAIL [{time.perf_counter() - t0:.1f} s] {exc}".splitlines()[0]
                RESULTS.append((number, False, line))
                print(line)
                raise
            line = f"criterion {number} ({title}): PASS [{time.perf_counter() - t0:.1f} s] {detail}"
            RESULTS.append((number, True, line))
            print(line)
        return run
    return wrap


def sha_tree(path):
    """Content hash of a file, or of a directory's relative paths and file contents."""
    path = Path(path)
    if path.is_file():
        return hashlib.sha256(path.read_bytes()).hexdigest()
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(path)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


# --- 1 ----------------------------------------------------------------------------------------

@criterion(1, "gradient fidelity")
def test_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    errs = {}
    errs["conv2d"] = max(_layer_gradcheck(_f64(Conv2D(2, 3, 3, s, p), rng), rng.normal(size=(2, 5, 6, 2)))
                         for s, p in ((1, 1), (2, 0)))
    x = np.random.default_rng(6).permutation(100).reshape(2, 5, 5, 2).astype(np.float64) * 0.1
    errs["maxpool2d"] = _layer_gradcheck(MaxPool2D(2, 2, True), x)
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 0.01] = 0.5
    errs["relu"] = _layer_gradcheck(ReLU(), x)
    errs["flatten"] = _layer_gradcheck(Flatten(), rng.normal(size=(2, 3, 2, 2)))
    errs["dense"] = _layer_gradcheck(_f64(Dense(6, 3), rng), rng.normal(size=(4, 6)))
    logits, labels = rng.normal(size=(3, 4)), np.array([0, 3, 1])
    _, g, _ = F.softmax_cross_entropy(logits, labels)
    ce = rel_error(g, numerical_gradient(lambda: F.softmax_cross_entropy(logits, labels)[0], logits, 1e-3))
    toy = check_model_gradients(toy_hybrid(0), _toy_inputs(), [0, 2], eps=1e-3)
    errs["toy_hybrid"] = max(toy.values())
    elapsed = time.perf_counter() - t0
    assert max(errs.values()) < 1e-3, errs
    assert ce < 1e-6, ce
    assert len(toy) == 2 * (8 + 4 + 1)
    assert elapsed < 60
    return f"max rel err {max(errs.values()):.2e}, softmax-CE {ce:.1e}, {elapsed:.1f} s"


# --- 2 ----------------------------------------------------------------------------------------

@criterion(2, "kernel oracles")
def test_kernel_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        x, w, b = rng.normal(size=(2, 7, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        worst = max(worst, np.abs(F.conv2d_forward(x, w, b, stride, pad) - naive_conv2d(x, w, b, stride, pad)).max())
    for h, wd in ((5, 5), (6, 7), (1, 3)):
        x = rng.normal(size=(2, h, wd))
        worst = max(worst, np.abs(F.maxpool2d_forward(x, 2, 2, True)[0] - naive_maxpool(x, 2, 2)).max())
    x, w, b = rng.normal(size=9), rng.normal(size=(4, 9)), rng.normal(size=4)
    worst = max(worst, np.abs(F.dense_forward(x, w, b) - naive_dense(x, w, b)).max())
    assert worst <= 1e-10, worst

    sr, cfg = 44100, dsp.MelConfig()
    sig = rng.uniform(-1, 1, 512 + 2 * 128)
    chunk = dsp.AudioChunk(sig, sr, 0)
    spec = dsp.stft_magnitude(chunk).values
    edges = htk_mel_edges_bins(cfg.fmin_hz, sr / 2, cfg.n_mels, cfg.fft_size, sr)
    fb = triangle_filterbank(edges, cfg.fft_size // 2 + 1)
    n_mels = cfg.n_mels
    dct = np.array([[(math.sqrt(1 / n_mels) if k == 0 else math.sqrt(2 / n_mels))
                     * math.cos(math.pi * k * (m + 0.5) / n_mels) for m in range(n_mels)] for k in range(cfg.n_mfcc)])
    logmel, mfcc = dsp.mel_spectrogram(chunk).values, dsp.mfcc(chunk)
    rel = 0.0
    for j in range(spec.shape[1]):
        mag = direct_dft_magnitude(sig[j * 128:j * 128 + 512] * hann(512))
        lm = np.log(fb @ mag ** 2 + cfg.log_floor)
        rel = max(rel, np.max(np.abs(spec[:, j] - mag)) / mag.max(),
                  np.max(np.abs(logmel[:, j] - lm) / np.abs(lm)),
                  np.max(np.abs(mfcc[:, j] - dct @ lm)) / np.abs(dct @ lm).max())
    assert np.array_equal(dsp.mel_filterbank(cfg, sr), fb)
    assert rel < 1e-6, rel
    elapsed = time.perf_counter() - t0
    assert elapsed < 60
    return f"layer kernels {worst:.1e} abs, STFT/Mel/MFCC {rel:.1e} rel, {elapsed:.1f} s"


# --- 3 ----------------------------------------------------------------------------------------

def _load_experiment():
    spec = importlib.util.spec_from_file_location("run_acceptance_experiment",
                                                  ROOT / "scripts" / "run_acceptance_experiment.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@criterion(3, "hybrid beats single-modal models")
def test_relative_performance():
    exp = _load_experiment()
    res = exp.run(jobs=os.cpu_count() or 1)
    assert 4905 <= res["n_samples"] <= 5995
    m = {k: v["mean"] for k, v in res["models"].items()}
    hybrid = m["hybrid"]
    assert hybrid >= 0.95, m
    for single in ("vgg19", "mfcc-cnn"):
        assert hybrid >= m[single], m
        assert m[single] <= hybrid - 0.01, m
    return (f"hybrid {m['hybrid']:.4f}, vgg19 {m['vgg19']:.4f}, mfcc-cnn {m['mfcc-cnn']:.4f} "
            f"(seed {res['seed']}, {res['epochs']} epochs, {res['runs']} runs, {res['n_samples']} samples, "
            f"{res['seconds'] / 60:.1f} min on {os.cpu_count()} core(s))")


# --- 4 ----------------------------------------------------------------------------------------

@criterion(4, "evaluation protocol")
def test_evaluation_protocol():
    counts = (2300, 2250, 900)
    labels = np.repeat([0, 1, 2], counts)
    train, test = stratified_split(labels, 0.8, seed=0)
    assert (len(train), len(test)) == (4360, 1090)
    for c, n in enumerate(counts):
        assert abs(np.sum(labels[train] == c) - round(0.8 * n)) <= 1
        assert abs(np.sum(labels[test] == c) - (n - round(0.8 * n))) <= 1
    assert accuracy(ConfusionMatrix(np.diag([5, 7, 9]))) == 1.0
    assert accuracy(confusion(labels, labels)) == 1.0
    assert binary_accuracy(TP=1, TN=1, FP=1, FN=1) == 0.5
    assert binary_accuracy(TP=5, TN=5, FP=0, FN=0) == 1.0
    assert binary_accuracy(TP=0, TN=0, FP=2, FN=2) == 0.0
    cm = ConfusionMatrix(np.array([[3, 1], [2, 4]]), ("neg", "pos"))
    assert accuracy(cm) == binary_accuracy(**cm.one_vs_rest(1)) == 0.7
    return "4360/1090, per-class within 1, diagonal 1.0, binary cases exact"


# --- 5 ----------------------------------------------------------------------------------------

@criterion(5, "synchronization invariants")
def test_sync_invariants():
    t0 = time.perf_counter()
    spec = sim.WallSpec(n_layers=19)
    wall = sim.simulate_wall(spec, seed=3, onset=sim.DefectOnsetModel(10, 0.0), windows=[(0, 60_000_000)])
    assert len(wall.frame_times) == 600
    sync = Synchronizer(frame_transform=lambda f: f)
    fused = []
    for m in wall_messages(wall):
        if m.topic == "audio":
            fused += sync.push_audio(m.payload)
        elif m.topic == "frame":
            fused += sync.push_frame(m.t_us, m.payload)
    fused += sync.finish()
    audio = wall.audio[0][1]
    for s in fused:
        assert len(s.audio.samples) == 4410
        assert s.audio.t_start_us + 100_000 == s.t_us
        end = s.t_us * 44100 // 1_000_000
        assert np.array_equal(s.audio.samples, audio[end - 4410:end])

    records = []
    model = build_model("hybrid", seed=0)
    report = run_pipeline(wall_messages(wall), model, records.append)
    assert abs(report.fused - report.frames) <= 1 and report.frames == 600 and report.dropped <= 1
    assert report.unregistered == 0 and report.predicted == report.fused == len(fused)
    err = max(float(np.linalg.norm(np.array([r.x_mm, r.y_mm, r.z_mm]) - sim.position_at(spec, r.t_us)))
              for r in records)
    assert err < 0.12
    elapsed = time.perf_counter() - t0
    assert elapsed < 30
    return f"{report.fused}/{report.frames} fused, 0 unregistered, pose err {err:.2e} mm, {elapsed:.1f} s"


# --- 6 and 7 share a small on-disk workflow -------------------------------------------------------

WORKFLOW = ["--walls", "2", "--dwell", "0,5", "--layers", "8", "--onset-layer", "2"]


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    d = tmp_path_factory.mktemp("accept")
    assert cli.main(["simulate", "--out", str(d / "ds"), "--seed", "0"] + WORKFLOW) == 0
    assert cli.main(["train", "--dataset", str(d / "ds"), "--model", "hybrid", "--epochs", "2", "--seed", "0",
                     "--out", str(d / "hybrid.ldnn")]) == 0
    return d


@criterion(6, "online/offline equivalence")
def test_online_offline_equivalence(workflow):
    d = workflow
    assert cli.main(["run", "--model", str(d / "hybrid.ldnn"), "--replay", str(d / "ds"), "--speed", "0",
                     "--map", str(d / "online.jsonl")]) == 0
    _, walls = load_dataset(d / "ds")
    offline = offline_defect_map(walls, load_model(d / "hybrid.ldnn"))
    online = read_defect_map(d / "online.jsonl")
    assert len(online) > 0 and online == offline

    port = free_port()
    server = threading.Thread(target=cli.main, args=(["serve", "--dataset", str(d / "ds"), "--listen",
                                                      f"127.0.0.1:{port}"],))
    server.start()
    code = cli.main(["run", "--model", str(d / "hybrid.ldnn"), "--listen", f"127.0.0.1:{port}",
                     "--map", str(d / "socket.jsonl")])
    server.join(60)
    assert code == 0
    assert (d / "socket.jsonl").read_bytes() == (d / "online.jsonl").read_bytes()
    return f"{len(online)} records identical offline, file replay and socket replay"


@criterion(7, "determinism")
def test_determinism(workflow, tmp_path):
    d = workflow
    assert cli.main(["simulate", "--out", str(tmp_path / "ds"), "--seed", "0"] + WORKFLOW) == 0
    assert sha_tree(tmp_path / "ds") == sha_tree(d / "ds")
    assert cli.main(["train", "--dataset", str(tmp_path / "ds"), "--model", "hybrid", "--epochs", "2",
                     "--seed", "0", "--out", str(tmp_path / "hybrid.ldnn")]) == 0
    assert sha_tree(tmp_path / "hybrid.ldnn") == sha_tree(d / "hybrid.ldnn")
    maps = []
    for name in ("a.jsonl", "b.jsonl"):
        assert cli.main(["run", "--model", str(tmp_path / "hybrid.ldnn"), "--replay", str(tmp_path / "ds"),
                         "--map", str(tmp_path / name)]) == 0
        maps.append(sha_tree(tmp_path / name))
    assert maps[0] == maps[1]
    return "dataset, model and map hashes repeat"


# --- 8 ----------------------------------------------------------------------------------------

@criterion(8, "real-time budget")
def test_realtime_budget():
    horizon = 8_000_000
    wall = sim.simulate_wall(sim.WallSpec(n_layers=3), seed=1, onset=sim.DefectOnsetModel(1, 0.0),
                             windows=[(0, horizon)])
    source = itertools.takewhile(lambda m: m.t_us <= horizon, wall_messages(wall))
    model = build_model("hybrid", seed=0)
    records = []
    report = run_pipeline(paced(source, 1.0), model, records.append, scheduler="threaded")
    p = report.latency_percentiles()
    assert report.predicted == report.fused == 80 and report.unregistered == 0
    assert report.queue_drops == 0
    assert p["p50"] < 100, p
    return f"p50 {p['p50']:.1f} ms, p99 {p['p99']:.1f} ms, {report.predicted} records, 0 queue drops at speed 1.0"
