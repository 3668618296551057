"""WAV (RIFF PCM16) I/O, synthetic test signals and corpus manifests."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 22050
SPLITS = ("train", "val", "test")


class AudioFormatError(ValueError):
    """Malformed header or unsupported codec."""


class SampleRateMismatch(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def pcm16_to_float(pcm: np.ndarray) -> np.ndarray:
    return pcm.astype(np.float32) / 32768.0


def float_to_pcm16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")


def read_wav(path, expected_rate: int | None = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Load a PCM16 WAV file; stereo is averaged to mono.

    ``expected_rate=None`` accepts any rate; otherwise a mismatch raises
    :class:`SampleRateMismatch` (no resampling is done).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as err:
        raise AudioFormatError(f"{path}: {err}") from err
    if width != 2:
        raise AudioFormatError(f"{path}: only 16-bit PCM is supported, got {8 * width}-bit")
    if channels not in (1, 2):
        raise AudioFormatError(f"{path}: {channels} channels; only mono or stereo is supported")
    if expected_rate is not None and rate != expected_rate:
        raise SampleRateMismatch(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, channels)
    samples = pcm16_to_float(pcm).mean(axis=1) if channels == 2 else pcm16_to_float(pcm[:, 0])
    return Waveform(samples, rate)


def write_wav(path, wav: Waveform) -> None:
    """Write a canonical 44-byte-header mono PCM16 file."""
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(wav.sample_rate)
        w.writeframes(float_to_pcm16(wav.samples).tobytes())


# ------------------------------------------------------------------ synthetic
def synth_test_signal(kind: str, f0: float, dur: float, sr: int = DEFAULT_SAMPLE_RATE,
                      snr_db: float = 20.0, seed: int = 0) -> Waveform:
    """Sine, harmonic stack (1/k amplitudes below Nyquist) or noisy harmonic stack.

    Output is peak-normalized to 0.5.
    """
    if not 0 < f0 < sr / 2:
        raise ValueError(f"f0 must be in (0, {sr / 2}) Hz, got {f0}")
    t = np.arange(int(round(dur * sr))) / sr
    if kind == "sine":
        x = np.sin(2 * np.pi * f0 * t)
    elif kind in ("harmonic_stack", "noisy_harmonic"):
        ks = np.arange(1, int(np.ceil((sr / 2) / f0)) + 1)
        ks = ks[ks * f0 < sr / 2]
        x = sum(np.sin(2 * np.pi * k * f0 * t) / k for k in ks)
        if kind == "noisy_harmonic":
            rng = np.random.default_rng(seed)
            noise = rng.standard_normal(len(t))
            p_sig = np.mean(x ** 2)
            x = x + noise * np.sqrt(p_sig / 10 ** (snr_db / 10))
    else:
        raise ValueError(f"unknown signal kind {kind!r}")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = 0.5 * x / peak
    return Waveform(x.astype(np.float32), sr)


# ------------------------------------------------------------------- manifest
@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str
    duration: float


def write_manifest(path, entries) -> None:
    lines = [f"{e.path}\t{e.split}\t{e.duration:.6f}\n" for e in entries]
    Path(path).write_text("".join(lines))


def read_manifest(path) -> list[ManifestEntry]:
    """Parse ``path<TAB>split<TAB>duration_s`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    entries = []
    seen: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        p, split, dur = parts
        if split not in SPLITS:
            raise ValueError(f"{path}:{lineno}: unknown split {split!r}")
        if p in seen and seen[p] != split:
            raise ValueError(f"{path}:{lineno}: {p} appears in splits {seen[p]} and {split}")
        seen[p] = split
        resolved = p if Path(p).is_absolute() else str(path.parent / p)
        entries.append(ManifestEntry(resolved, split, float(dur)))
    return entries


def assign_splits(n: int, seed: int = 0, val_frac: float = 0.1, test_frac: float = 0.1) -> list[str]:
    """Seeded, stable split labels for ``n`` files."""
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_frac))) if n >= 3 else 0
    n_val = max(1, int(round(n * val_frac))) if n >= 3 else 0
    labels = ["train"] * n
    for i in order[:n_test]:
        labels[i] = "test"
    for i in order[n_test:n_test + n_val]:
        labels[i] = "val"
    return labels


def make_toy_corpus(out_dir, n_files: int = 24, duration: float = 3.0, sr: int = DEFAULT_SAMPLE_RATE,
                    seed: int = 0, snr_db: float = 20.0) -> list[ManifestEntry]:
    """Noisy harmonic stacks with f0 spread over 90-300 Hz, plus ``manifest.tsv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    f0s = rng.uniform(90.0, 300.0, size=n_files)
    labels = assign_splits(n_files, seed)
    entries = []
    for i, (f0, split) in enumerate(zip(f0s, labels)):
        wav = synth_test_signal("noisy_harmonic", float(f0), duration, sr, snr_db, seed=seed * 1000 + i)
        name = f"toy_{i:03d}.wav"
        write_wav(out_dir / name, wav)
        entries.append(ManifestEntry(name, split, wav.duration))
    write_manifest(out_dir / "manifest.tsv", entries)
    return entries


def load_corpus(manifest, split: str | None = "train", expected_rate: int | None = DEFAULT_SAMPLE_RATE):
    """Waveforms of one split (all splits with ``split=None``), in manifest order."""
    return [read_wav(e.path, expected_rate) for e in read_manifest(manifest)
            if split is None or e.split == split]
