import csv

import numpy as np
import pytest

from autovocoder import bench
from autovocoder.audio import Waveform, read_wav, write_wav
from autovocoder.cli import (DISTANCE_HEADER, METRICS_HEADER, TRAIN_LOG_HEADER, build_config, build_parser, main,
                             read_grid_csv, read_pgm, write_grid_csv, write_pgm)
from autovocoder.config import Config
from autovocoder.gradsuite import format_report, run_grad_suite

TINY_TEXT = """sample_rate = 8000
window_size = 64
hop = 16
n_mels = 8
representation_size = 8
segment_len = 640
lr_g = 1e-3
lambda_adv = 0.0
lambda_fm = 0.0
checkpoint_interval = 0
"""


class FakeClock:
    """Advances by a fixed amount on every second call (start/stop pairs)."""

    def __init__(self, per_job):
        self.t, self.calls, self.per_job = 0.0, 0, per_job

    def __call__(self):
        self.calls += 1
        if self.calls % 2 == 0:
            self.t += self.per_job
        return self.t


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_TEXT)
    assert main(["make-toy-corpus", "--config", str(cfg), "--out", str(root / "corpus"),
                 "--n-files", "5", "--duration", "0.4"]) == 0
    assert main(["train", "--config", str(cfg), "--corpus", str(root / "corpus" / "manifest.tsv"),
                 "--out", str(root / "run"), "--steps", "3", "--log-every", "1"]) == 0
    return root, cfg


def test_rtf_with_fake_clock():
    rows = bench.time_system("x", [lambda: None] * 2, [4.0, 6.0], repeats=1, runs=2, clock=FakeClock(0.05))
    assert [r.run for r in rows] == ["1", "2", "mean", "median"]
    assert all(r.rtf == pytest.approx(100.0) for r in rows)
    assert rows[0].wall_s == pytest.approx(0.1) and rows[0].audio_s == 10.0


def test_time_system_validation():
    with pytest.raises(ValueError):
        bench.time_system("x", [], [])
    with pytest.raises(ValueError):
        bench.time_system("x", [lambda: None], [1.0, 2.0])
    with pytest.raises(ValueError):
        bench.time_system("x", [lambda: None], [1.0], repeats=0)


def test_report_round_trip(tmp_path):
    rows = bench.time_system("a", [lambda: None], [2.0], 1, 3, FakeClock(0.5)) + bench.reference_rows()
    bench.write_report(tmp_path / "r.csv", rows)
    back = bench.read_report(tmp_path / "r.csv")
    assert [(r.system, r.run) for r in back] == [(r.system, r.run) for r in rows]
    assert bench.mean_rtf(back, "a") == pytest.approx(4.0)
    assert {r.system: r.rtf for r in back if r.run == "reference"}["griffin-lim"] == 18.43
    assert _rows(tmp_path / "r.csv")[0] == list(bench.CSV_HEADER)


def test_config_precedence(tmp_path, monkeypatch):
    (tmp_path / "c.cfg").write_text("seed = 3\nhead = polar\nhop = 128\n")
    parse = build_parser().parse_args
    monkeypatch.setenv("AV_SEED", "9")
    assert build_config(parse(["gradcheck"])).seed == 9
    args = parse(["gradcheck", "--config", str(tmp_path / "c.cfg"), "--param", "head=mean4", "--seed", "5"])
    cfg = build_config(args)
    assert (cfg.seed, cfg.head, cfg.hop) == (5, "mean4", 128)


def test_bad_arguments_exit_2(tmp_path):
    assert main(["griffin-lim", "--in", str(tmp_path / "missing.wav"), "--out", str(tmp_path)]) == 2
    assert main(["gradcheck", "--param", "nonsense=1"]) == 2


def test_train_outputs(workspace):
    root, _ = workspace
    log = _rows(root / "run" / "train_log.csv")
    assert log[0] == list(TRAIN_LOG_HEADER) and len(log) == 4
    assert (root / "run" / "checkpoint.avck").exists()


def test_train_resume(workspace):
    root, cfg = workspace
    run = root / "run"
    assert main(["train", "--config", str(cfg), "--corpus", str(root / "corpus" / "manifest.tsv"),
                 "--out", str(run), "--steps", "5", "--resume", str(run / "checkpoint.avck")]) == 0
    assert len(_rows(run / "train_log.csv")) == 6


def test_copy_synth_lengths_and_rerun(workspace, tmp_path):
    root, _ = workspace
    ckpt = str(root / "run" / "checkpoint.avck")
    for out in ("a", "b"):
        assert main(["copy-synth", "--ckpt", ckpt, "--in", str(root / "corpus"), "--out", str(tmp_path / out)]) == 0
    for src in sorted((root / "corpus").glob("*.wav")):
        assert len(read_wav(tmp_path / "a" / src.name, 8000)) == len(read_wav(src, 8000))
        assert (tmp_path / "a" / src.name).read_bytes() == (tmp_path / "b" / src.name).read_bytes()
    rows = _rows(tmp_path / "a" / "metrics.csv")
    assert rows[0] == list(METRICS_HEADER) and len(rows) == 6


def test_griffin_lim_command(workspace, tmp_path):
    root, cfg = workspace
    src = sorted((root / "corpus").glob("*.wav"))[0]
    assert main(["griffin-lim", "--config", str(cfg), "--in", str(src), "--out", str(tmp_path / "g"),
                 "--iters", "8"]) == 0
    rows = _rows(tmp_path / "g" / "distances.csv")
    assert rows[0] == list(DISTANCE_HEADER)
    d = [float(r[2]) for r in rows[1:]]
    assert len(d) == 8 and all(b <= a * (1 + 1e-7) for a, b in zip(d, d[1:]))
    assert len(read_wav(tmp_path / "g" / src.name, 8000)) == len(read_wav(src, 8000))
    assert main(["griffin-lim", "--config", str(cfg), "--in", str(src), "--out", str(tmp_path / "z"),
                 "--iters", "0", "--from-mel"]) == 0
    assert len(_rows(tmp_path / "z" / "distances.csv")) == 1


def test_bench_command(workspace, tmp_path):
    root, _ = workspace
    out = tmp_path / "bench.csv"
    assert main(["bench", "--ckpt", str(root / "run" / "checkpoint.avck"), "--set", str(root / "corpus"),
                 "--repeats", "1", "--runs", "2", "--gl-iters", "4", "--out", str(out), "--reference"]) == 0
    rows = bench.read_report(out)
    assert {r.system for r in rows} >= {"autovocoder-8", "griffin-lim-4"}
    assert sum(r.system == "autovocoder-8" for r in rows) == 4
    assert all(r.rtf > 0 for r in rows)


def test_dump_spectrogram(workspace, tmp_path):
    root, cfg = workspace
    silent = tmp_path / "zero.wav"
    write_wav(silent, Waveform(np.zeros(800), 8000))
    assert main(["dump-spectrogram", "--config", str(cfg), "--in", str(silent), "--out", str(tmp_path / "z"),
                 "--kind", "mag"]) == 0
    img = read_pgm(tmp_path / "z.pgm")
    assert img.shape == (33, 51) and len(np.unique(img)) == 1
    src = sorted((root / "corpus").glob("*.wav"))[0]
    assert main(["dump-spectrogram", "--config", str(cfg), "--in", str(src), "--out", str(tmp_path / "m")]) == 0
    assert read_pgm(tmp_path / "m.pgm").shape == (8, 201)
    assert main(["dump-spectrogram", "--in", str(src), "--out", str(tmp_path / "l"), "--kind", "latent",
                 "--ckpt", str(root / "run" / "checkpoint.avck")]) == 0
    assert read_grid_csv(tmp_path / "l.csv").shape == (8, 201)


def test_pgm_and_grid_csv_round_trip(tmp_path):
    grid = np.random.default_rng(0).standard_normal((4, 7))
    write_grid_csv(tmp_path / "g.csv", grid)
    np.testing.assert_array_equal(read_grid_csv(tmp_path / "g.csv"), grid)
    write_pgm(tmp_path / "g.pgm", grid)
    img = read_pgm(tmp_path / "g.pgm")
    assert img.min() == 0 and img.max() == 255
    # bin 0 is the bottom row of the image
    assert img[-1, np.argmax(grid[0])] == img[-1].max()
    assert img[-1, np.argmin(grid[0])] == img[-1].min()


def test_grad_suite_passes_and_detects_fault():
    results = run_grad_suite(heads=("cartesian",), max_checks=2)
    assert all(r.passed for r in results), format_report([r for r in results if not r.passed])
    assert format_report(results).strip().endswith(f"{len(results)}/{len(results)} checks passed")
    bad = run_grad_suite(fault="conv2d", heads=("cartesian",), max_checks=2)
    assert not all(r.passed for r in bad)


def test_gradcheck_command_fault_exit_code(capsys):
    assert main(["gradcheck", "--max-checks", "1", "--inject-fault", "matmul"]) == 1
    assert "checks passed" in capsys.readouterr().out


def test_default_config_is_valid():
    assert Config().stft.window_size == 1024
