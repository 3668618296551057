"""``autovocoder`` command line.

Every subcommand reads an optional ``--config`` file (``key = value`` lines);
``--param KEY=VALUE`` and the dedicated flags override it. ``--seed`` falls back
to ``AV_SEED`` and then to 0.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import bench, dsp
from .audio import Waveform, load_corpus, make_toy_corpus, read_wav, write_wav
from .config import SCHEMA, Config, ConfigError, default_seed, parse_value
from .gradsuite import format_report, run_grad_suite
from .losses import mel_loss, time_domain_loss
from .trainer import Trainer, TrainingAborted, load_model

METRICS_HEADER = ("file", "mel_l1", "time_mse")
DISTANCE_HEADER = ("file", "iteration", "distance")
TRAIN_LOG_HEADER = ("step", "loss_g", "mel", "time", "d_loss", "grad_norm_g", "lr_g")


# -------------------------------------------------------------------- helpers
def build_config(args) -> Config:
    """Precedence: --seed, then --param, then the --config file, then AV_SEED / defaults."""
    base = Config(seed=default_seed())
    cfg = Config.from_text(Path(args.config).read_text(), base) if args.config else base
    overrides = {}
    for item in args.param or []:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        overrides[key] = parse_value(key, value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides)


def wav_inputs(path) -> list[Path]:
    path = Path(path)
    files = sorted(path.glob("*.wav")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no .wav files under {path}")
    return files


def reconstruction_metrics(y: np.ndarray, x: np.ndarray, cfg: Config) -> tuple[float, float]:
    fb = dsp.mel_filterbank(cfg.sample_rate, cfg.window_size, cfg.n_mels)
    return (mel_loss(y, x, fb, cfg.stft).item(), time_domain_loss(y, x).item())


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_pgm(path, grid: np.ndarray) -> None:
    """8-bit P5 image of a (bins, frames) grid, min-max scaled, bin 0 at the bottom."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("need a non-empty 2-D grid")
    lo, hi = grid.min(), grid.max()
    scaled = np.zeros_like(grid) if hi <= lo else (grid - lo) / (hi - lo) * 255.0
    pix = np.round(scaled).astype(np.uint8)[::-1]
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a P5 graymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit graymaps are supported")
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def write_grid_csv(path, grid: np.ndarray) -> None:
    _write_csv(path, [f"t{j}" for j in range(grid.shape[1])],
               ([repr(float(v)) for v in row] for row in np.asarray(grid)))


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r] for r in rows])


# ---------------------------------------------------------------- subcommands
def cmd_make_toy_corpus(args) -> int:
    cfg = build_config(args)
    entries = make_toy_corpus(args.out, args.n_files, args.duration, cfg.sample_rate, cfg.seed)
    print(f"wrote {len(entries)} files ({sum(e.duration for e in entries):.1f} s) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    corpus = [w.samples for w in load_corpus(args.corpus, "train", cfg.sample_rate)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.avck"
    if args.resume:
        overrides = {"steps": args.steps} if args.steps is not None else None
        trainer = Trainer.from_checkpoint(args.resume, corpus, out, overrides)
    else:
        trainer = Trainer(cfg, corpus, out)
    log_path = out / "train_log.csv"
    new_log = not (args.resume and log_path.exists())
    with open(log_path, "w" if new_log else "a", newline="") as fh:
        w = csv.writer(fh)
        if new_log:
            w.writerow(TRAIN_LOG_HEADER)

        def log(m):
            w.writerow([m.get(k, "") for k in TRAIN_LOG_HEADER])
            if m["step"] % args.log_every == 0:
                print(f"step {m['step']}: loss_g {m['loss_g']:.4f} mel {m['mel']:.4f} time {m['time']:.5f}")

        try:
            trainer.fit(max(0, trainer.cfg.steps - trainer.step), log, ckpt)
        except TrainingAborted as err:
            print(f"training aborted: {err}", file=sys.stderr)
            return 2
    trainer.save(ckpt)
    print(f"saved {ckpt} at step {trainer.step}")
    return 0


def cmd_copy_synth(args) -> int:
    model, cfg = load_model(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for f in wav_inputs(args.inp):
        x = read_wav(f, cfg.sample_rate).samples
        y = model.copy_synthesis(x)
        write_wav(out / f.name, Waveform(np.clip(y, -1.0, 1.0), cfg.sample_rate))
        mel, mse = reconstruction_metrics(y, x, cfg)
        rows.append([f.name, repr(mel), repr(mse)])
    _write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    print(f"copy-synthesized {len(rows)} files into {out}")
    return 0


def cmd_griffin_lim(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fb = dsp.mel_filterbank(cfg.sample_rate, cfg.window_size, cfg.n_mels) if args.from_mel else None
    dist_rows, metric_rows = [], []
    for f in wav_inputs(args.inp):
        x = read_wav(f, cfg.sample_rate).samples
        M = np.abs(dsp.stft(x, cfg.stft))
        if fb is not None:
            M = dsp.mel_reduce_and_invert(M, fb)
        dist: list[float] = []
        y = dsp.griffin_lim(M, cfg.stft, args.iters, len(x), dist)
        write_wav(out / f.name, Waveform(np.clip(y, -1.0, 1.0), cfg.sample_rate))
        dist_rows += [[f.name, i, repr(d)] for i, d in enumerate(dist, 1)]
        mel, mse = reconstruction_metrics(y, x, cfg)
        metric_rows.append([f.name, repr(mel), repr(mse)])
    _write_csv(out / "distances.csv", DISTANCE_HEADER, dist_rows)
    _write_csv(out / "metrics.csv", METRICS_HEADER, metric_rows)
    print(f"griffin-lim ({args.iters} iterations) on {len(metric_rows)} files into {out}")
    return 0


def cmd_bench(args) -> int:
    model, cfg = load_model(args.ckpt)
    files = wav_inputs(args.bench_set)
    waves = [read_wav(f, cfg.sample_rate).samples for f in files]
    rows = bench.bench_systems(model, waves, cfg.sample_rate, args.repeats, args.runs, args.gl_iters)
    if args.reference:
        rows += bench.reference_rows()
    bench.write_report(args.out, rows)
    for r in rows:
        if r.run in ("mean", "median"):
            print(f"{r.system:<18} {r.run:<6} RTF {r.rtf:.2f}")
    return 0


def cmd_dump_spectrogram(args) -> int:
    cfg = build_config(args)
    if args.kind == "latent":
        if not args.ckpt:
            raise SystemExit("--kind latent needs --ckpt")
        model, cfg = load_model(args.ckpt)
    x = read_wav(args.inp, cfg.sample_rate).samples
    if len(x) == 0:
        raise ValueError(f"{args.inp}: empty waveform")
    if args.kind == "mag":
        grid = np.abs(dsp.stft(x, cfg.stft))
    elif args.kind == "mel":
        fb = dsp.mel_filterbank(cfg.sample_rate, cfg.window_size, cfg.n_mels)
        grid = dsp.mel_spectrogram(x, cfg.stft, fb)
    else:
        grid = model.encode(x).T
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(prefix.with_suffix(".pgm"), grid)
    write_grid_csv(prefix.with_suffix(".csv"), grid)
    print(f"{args.kind} grid {grid.shape[0]} bins x {grid.shape[1]} frames -> {prefix}.pgm/.csv")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = build_config(args)
    results = run_grad_suite(fault=args.inject_fault, seed=cfg.seed, max_checks=args.max_checks)
    report = format_report(results)
    print(report, end="")
    if args.out:
        _write_csv(args.out, ("check", "max_rel_err", "threshold", "passed"),
                   ([r.name, repr(r.max_rel_err), r.threshold, int(r.passed)] for r in results))
    return 0 if all(r.passed for r in results) else 1


# --------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--param", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="random seed (default: $AV_SEED, else 0)")

    p = argparse.ArgumentParser(prog="autovocoder", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-toy-corpus", parents=[common], help="write noisy harmonic WAVs + manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--n-files", type=int, default=24)
    s.add_argument("--duration", type=float, default=3.0)
    s.set_defaults(fn=cmd_make_toy_corpus)

    s = sub.add_parser("train", parents=[common], help="train on a manifest's train split")
    s.add_argument("--corpus", required=True, help="manifest.tsv")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--steps", type=int)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--log-every", type=int, default=100)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("copy-synth", parents=[common], help="decode(encode(x)) for each input")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True, help="wav file or directory")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_copy_synth)

    s = sub.add_parser("griffin-lim", parents=[common], help="Griffin-Lim from full-resolution magnitudes")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int, default=32)
    s.add_argument("--from-mel", action="store_true",
                   help="reduce magnitudes to the mel basis and pseudo-invert first")
    s.set_defaults(fn=cmd_griffin_lim)

    s = sub.add_parser("bench", parents=[common], help="real-time factors, decoder vs griffin-lim")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--set", dest="bench_set", required=True, help="directory of test utterances")
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--runs", type=int, default=3)
    s.add_argument("--gl-iters", type=int, default=32)
    s.add_argument("--out", default="bench.csv")
    s.add_argument("--reference", action="store_true", help="append externally measured reference RTFs")
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("dump-spectrogram", parents=[common], help="P5 image + CSV of a spectrogram")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True, help="output prefix; writes .pgm and .csv")
    s.add_argument("--kind", choices=("mel", "mag", "latent"), default="mel")
    s.add_argument("--ckpt", help="needed for --kind latent")
    s.set_defaults(fn=cmd_dump_spectrogram)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--max-checks", type=int, default=6)
    s.add_argument("--out", help="optional CSV report")
    s.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
