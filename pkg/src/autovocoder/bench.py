"""Real-time-factor benchmark: decoder versus Griffin-Lim on individual utterances.

RTF is total generated audio duration divided by total wall time over every
utterance of the set times ``repeats``. Each system is timed for ``runs``
independent runs; the report holds one row per run plus a mean and a median
row. Only spectrogram-to-waveform generation is timed. Latents and Griffin-Lim
magnitudes are computed beforehand, and loading is excluded.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dsp
from .model import Autovocoder

CSV_HEADER = ("system", "run", "audio_s", "wall_s", "rtf")

# Externally measured RTFs, reported for comparison only and never re-timed here.
REFERENCE_RTF = {
    "griffin-lim": 18.43,
    "autovocoder-256": 102.01,
    "autovocoder-192": 101.34,
    "autovocoder-128": 101.08,
    "hifi-gan-v1": 6.76,
    "hifi-gan-v3": 42.18,
    "wavernn": 0.47,
    "lpcnet": 1.50,
}


@dataclass(frozen=True)
class BenchRow:
    system: str
    run: str
    audio_s: float
    wall_s: float
    rtf: float


def time_system(system: str, jobs: Sequence[Callable[[], object]], durations: Sequence[float],
                repeats: int = 10, runs: int = 3,
                clock: Callable[[], float] = time.perf_counter) -> list[BenchRow]:
    """Time each job (one utterance) sequentially; one row per run plus mean/median rows."""
    if not jobs:
        raise ValueError("benchmark set is empty")
    if len(jobs) != len(durations):
        raise ValueError("one duration per job is required")
    if repeats < 1 or runs < 1:
        raise ValueError("repeats and runs must be >= 1")
    rows = []
    for run in range(1, runs + 1):
        wall = 0.0
        for _ in range(repeats):
            for job in jobs:
                t0 = clock()
                job()
                wall += clock() - t0
        audio = float(sum(durations)) * repeats
        rows.append(BenchRow(system, str(run), audio, wall, audio / wall if wall > 0 else float("inf")))
    return rows + summary_rows(rows)


def summary_rows(rows: Sequence[BenchRow]) -> list[BenchRow]:
    out = []
    for label, agg in (("mean", statistics.fmean), ("median", statistics.median)):
        out.append(BenchRow(rows[0].system, label, agg(r.audio_s for r in rows),
                            agg(r.wall_s for r in rows), agg(r.rtf for r in rows)))
    return out


def bench_systems(model: Autovocoder, waveforms: Sequence[np.ndarray], sample_rate: int,
                  repeats: int = 10, runs: int = 3, gl_iters: int = 32,
                  clock: Callable[[], float] = time.perf_counter) -> list[BenchRow]:
    """Decoder-only and Griffin-Lim rows for the same utterances."""
    if not len(waveforms):
        raise ValueError("benchmark set is empty")
    model.eval()
    cfg = model.cfg.stft
    waves = [np.asarray(w, dtype=np.float32) for w in waveforms]
    durations = [len(w) / sample_rate for w in waves]
    latents = [model.encode(w) for w in waves]
    mags = [np.abs(dsp.stft(w, cfg)) for w in waves]

    dec_jobs = [lambda z=z, n=len(w): model.decode(z, n) for z, w in zip(latents, waves)]
    gl_jobs = [lambda m=m, n=len(w): dsp.griffin_lim(m, cfg, gl_iters, n) for m, w in zip(mags, waves)]
    rows = time_system(f"autovocoder-{model.cfg.representation_size}", dec_jobs, durations,
                       repeats, runs, clock)
    rows += time_system(f"griffin-lim-{gl_iters}", gl_jobs, durations, repeats, runs, clock)
    return rows


def reference_rows() -> list[BenchRow]:
    return [BenchRow(name, "reference", float("nan"), float("nan"), rtf) for name, rtf in REFERENCE_RTF.items()]


def mean_rtf(rows: Sequence[BenchRow], prefix: str) -> float:
    for r in rows:
        if r.system.startswith(prefix) and r.run == "mean":
            return r.rtf
    raise KeyError(prefix)


def write_report(path, rows: Sequence[BenchRow]) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.system, r.run, f"{r.audio_s:.6f}", f"{r.wall_s:.6f}", f"{r.rtf:.4f}"])


def read_report(path) -> list[BenchRow]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected bench header {header}")
        return [BenchRow(s, run, float(a), float(wa), float(rtf)) for s, run, a, wa, rtf in reader]
