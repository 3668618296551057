"""Frame-based signal processing: windows, STFT/iSTFT, mel filterbank, Griffin-Lim.

Spectrogram layout is frequency-major, ``(..., F, T)``. Functions accept
either numpy arrays or :class:`~autovocoder.autograd.Tensor` objects:

* arrays in, arrays out; complex spectrograms are complex ndarrays;
* tensors in, tensors out, differentiable; a complex spectrogram is a real
  tensor ``(..., 2, F, T)`` holding ``[re, im]``.

DFT convention: the forward transform is unnormalized and the inverse is
scaled by ``1/N``. For one windowed frame ``v`` with spectrum ``X`` this gives
``|X_0|^2 + |X_{N/2}|^2 + 2 * sum_{0<k<N/2} |X_k|^2 = N * sum(v^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autograd import Tensor, ops

LOG_FLOOR = 1e-5
ENVELOPE_FLOOR = 1e-8


class ColaError(ValueError):
    """The window/hop pair does not overlap-add to a constant."""


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, ``0.5 * (1 - cos(2*pi*k/n))``."""
    if n < 2 or n % 2:
        raise ValueError(f"window length must be even and >= 2, got {n}")
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


_WINDOWS = {"hann": hann_window}


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 1024
    hop: int = 256
    window: str = "hann"
    center_pad: bool = True
    pad_mode: str = "reflect"

    def __post_init__(self):
        if self.window_size < 2 or self.window_size % 2:
            raise ValueError(f"window_size must be even and >= 2, got {self.window_size}")
        if not 0 < self.hop <= self.window_size:
            raise ValueError(f"hop must be in (0, window_size], got {self.hop}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")
        if self.pad_mode not in ("reflect", "zero"):
            raise ValueError(f"pad_mode must be 'reflect' or 'zero', got {self.pad_mode!r}")

    @property
    def freq_bins(self) -> int:
        return self.window_size // 2 + 1

    def window_array(self, dtype=np.float64) -> np.ndarray:
        return _window(self.window, self.window_size, np.dtype(dtype).name)

    def n_frames(self, n_samples: int) -> int:
        if self.center_pad:
            return n_samples // self.hop + 1
        return (n_samples - self.window_size) // self.hop + 1

    def default_length(self, n_frames: int) -> int:
        """Signal length implied by ``n_frames`` frames: ``(T - 1) * hop``."""
        if self.center_pad:
            return (n_frames - 1) * self.hop
        return (n_frames - 1) * self.hop + self.window_size


@lru_cache(maxsize=32)
def _window(name: str, n: int, dtype: str) -> np.ndarray:
    w = _WINDOWS[name](n).astype(dtype)
    w.flags.writeable = False
    return w


@lru_cache(maxsize=64)
def _inverse_envelope(cfg: StftConfig, n_frames: int, dtype: str) -> np.ndarray:
    w2 = cfg.window_array(np.float64) ** 2
    env = ops._overlap_add_np(np.broadcast_to(w2, (n_frames, cfg.window_size)), cfg.hop)
    inv = (1.0 / np.maximum(env, ENVELOPE_FLOOR)).astype(dtype)
    inv.flags.writeable = False
    return inv


def cola_constant(cfg: StftConfig, squared: bool = False) -> float:
    """Value of the interior overlap-add sum of the (squared) window.

    Raises :class:`ColaError` when the sum varies by more than 1e-6 relative.
    """
    w = cfg.window_array(np.float64)
    if squared:
        w = w * w
    n, hop = cfg.window_size, cfg.hop
    n_frames = 8 * n // hop + 2
    total = ops._overlap_add_np(np.broadcast_to(w, (n_frames, n)), hop)
    interior = total[n:len(total) - n]
    value = float(interior.mean())
    if value <= 0 or (interior.max() - interior.min()) > 1e-6 * abs(value):
        raise ColaError(
            f"{cfg.window} window of {n} with hop {hop} does not overlap-add to a constant "
            f"(range {interior.min():.6g}..{interior.max():.6g})")
    return value


@lru_cache(maxsize=32)
def check_nola(cfg: StftConfig) -> None:
    """Raise :class:`ColaError` unless the squared-window overlap-add stays above
    ``ENVELOPE_FLOOR`` everywhere in the interior, the condition iSTFT's envelope
    division needs.
    """
    w2 = cfg.window_array(np.float64) ** 2
    n, hop = cfg.window_size, cfg.hop
    env = ops._overlap_add_np(np.broadcast_to(w2, (4 * n // hop + 2, n)), hop)
    low = env[n:len(env) - n].min()
    if low <= ENVELOPE_FLOOR:
        raise ColaError(f"{cfg.window} window of {n} with hop {hop}: squared-window overlap-add "
                        f"reaches {low:.3g}; frames cannot be inverted")


# ----------------------------------------------------------------------- STFT
def _check_len(n: int, cfg: StftConfig) -> None:
    if n == 0:
        raise ValueError("cannot analyze an empty signal")
    if not cfg.center_pad and n < cfg.window_size:
        raise ValueError(f"signal of {n} samples is shorter than the window ({cfg.window_size})")
    if cfg.center_pad and cfg.pad_mode == "reflect" and n < 2:
        raise ValueError("reflect padding needs at least 2 samples")


def _pad_np(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    if not cfg.center_pad:
        return x
    half = cfg.window_size // 2
    width = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    return np.pad(x, width, mode="reflect" if cfg.pad_mode == "reflect" else "constant")


def _analyze(xp: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Unpadded STFT of ``xp`` -> complex (..., F, T)."""
    frames = ops._frame_np(xp, cfg.window_size, cfg.hop) * cfg.window_array(xp.dtype)
    return np.swapaxes(np.fft.rfft(frames, axis=-1), -1, -2)


def _synthesize(S: np.ndarray, cfg: StftConfig, dtype) -> np.ndarray:
    """Least-squares overlap-add of complex (..., F, T) over the padded domain."""
    frames = np.fft.irfft(np.swapaxes(S, -1, -2), n=cfg.window_size, axis=-1).astype(dtype, copy=False)
    frames *= cfg.window_array(dtype)
    y = ops._overlap_add_np(frames, cfg.hop)
    return y * _inverse_envelope(cfg, S.shape[-1], np.dtype(dtype).name)


def _trim(y, cfg: StftConfig, out_len: int):
    start = cfg.window_size // 2 if cfg.center_pad else 0
    avail = y.shape[-1] - start
    if out_len <= avail:
        return y[..., start:start + out_len]
    return None


def stft(x, cfg: StftConfig = StftConfig()):
    """Short-time Fourier transform of the last axis.

    With ``center_pad`` frame ``m`` covers ``[m*hop - N/2, m*hop + N/2)`` and
    there are ``len // hop + 1`` frames.
    """
    if isinstance(x, Tensor):
        _check_len(x.shape[-1], cfg)
        if cfg.center_pad:
            half = cfg.window_size // 2
            x = ops.pad_last(x, half, half, cfg.pad_mode)
        frames = ops.frame(x, cfg.window_size, cfg.hop)
        frames = ops.mul(frames, Tensor(cfg.window_array(x.dtype)))
        spec = ops.rdft(frames)  # (..., T, 2, F)
        nd = spec.ndim
        return ops.transpose(spec, tuple(range(nd - 3)) + (nd - 2, nd - 1, nd - 3))
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    _check_len(x.shape[-1], cfg)
    return _analyze(_pad_np(x, cfg), cfg)


def istft(S, cfg: StftConfig = StftConfig(), out_len: int | None = None):
    """Inverse STFT by windowed overlap-add divided by the squared-window envelope.

    ``out_len`` defaults to ``(T - 1) * hop``; requests beyond the samples the
    frames cover are zero-filled.
    """
    check_nola(cfg)
    F = cfg.freq_bins
    if S.shape[-2] != F:
        raise ValueError(f"spectrogram has {S.shape[-2]} bins, config expects {F}")
    T = S.shape[-1]
    if out_len is None:
        out_len = cfg.default_length(T)
    if out_len < 0:
        raise ValueError("out_len must be non-negative")
    if isinstance(S, Tensor):
        if S.shape[-3] != 2:
            raise ValueError("tensor spectrogram must be (..., 2, F, T)")
        nd = S.ndim
        spec = ops.transpose(S, tuple(range(nd - 3)) + (nd - 1, nd - 3, nd - 2))
        frames = ops.irdft(spec, cfg.window_size)
        frames = ops.mul(frames, Tensor(cfg.window_array(S.dtype)))
        y = ops.overlap_add(frames, cfg.hop)
        y = ops.mul(y, Tensor(_inverse_envelope(cfg, T, S.dtype.name)))
        out = _trim(y, cfg, out_len)
        if out is None:
            start = cfg.window_size // 2 if cfg.center_pad else 0
            y = ops.pad_last(y, 0, start + out_len - y.shape[-1])
            out = _trim(y, cfg, out_len)
        return out
    S = np.asarray(S)
    dtype = np.float32 if S.dtype == np.complex64 else np.float64
    y = _synthesize(S, cfg, dtype)
    out = _trim(y, cfg, out_len)
    if out is None:
        start = cfg.window_size // 2 if cfg.center_pad else 0
        out = np.zeros(y.shape[:-1] + (out_len,), dtype=dtype)
        out[..., :y.shape[-1] - start] = y[..., start:]
    return out


# ------------------------------------------------------ complex representations
def complex_to_stack(S):
    """Complex spectrogram -> 4 real channels [magnitude, phase, real, imaginary].

    Numpy input ``(..., F, T)`` complex gives ``(..., 4, F, T)``; tensor input
    ``(..., 2, F, T)`` gives a differentiable ``(..., 4, F, T)``. Zero-magnitude
    bins get phase 0.
    """
    if isinstance(S, Tensor):
        return ops.complex_to_stack(S)
    S = np.asarray(S)
    if not np.all(np.isfinite(S)):
        raise ValueError("spectrogram contains non-finite values")
    z = np.stack([S.real, S.imag], axis=-3)
    return ops.complex_to_stack(Tensor(z)).data


def stack_to_complex(raw, head: str = "cartesian"):
    """Decoder output channels -> complex spectrogram.

    ``cartesian`` takes (re, im), ``polar`` takes (magnitude, phase), and
    ``mean4`` takes (re, im, magnitude, phase) and averages the two complex
    values.
    """
    if isinstance(raw, Tensor):
        return ops.stack_to_complex(raw, head)
    raw = np.asarray(raw)
    out = ops.stack_to_complex(Tensor(raw), head).data
    return out[..., 0, :, :] + 1j * out[..., 1, :, :]


# ------------------------------------------------------------------------- mel
def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    lin = f / f_sp
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    n_mels: int
    weights: np.ndarray  # (n_mels, F)
    f_min: float
    f_max: float
    sample_rate: int

    @property
    def centers_mel(self) -> np.ndarray:
        pts = np.linspace(hz_to_mel(self.f_min), hz_to_mel(self.f_max), self.n_mels + 2)
        return pts[1:-1]


def mel_filterbank(sample_rate: int = 22050, n_fft: int = 1024, n_mels: int = 80,
                   f_min: float = 0.0, f_max: float | None = None) -> MelFilterbank:
    """Triangular filters equally spaced in mel, each with unit area in Hz."""
    if f_max is None:
        f_max = sample_rate / 2
    if not 0 <= f_min < f_max <= sample_rate / 2:
        raise ValueError(f"need 0 <= f_min < f_max <= nyquist, got {f_min}, {f_max}")
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (bins - lo) / (mid - lo)
    fall = (hi - bins) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rise, fall)) * (2.0 / (hi - lo))
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filters {empty.tolist()} cover no FFT bin; use fewer mels or a longer FFT")
    return MelFilterbank(n_mels, weights, float(f_min), float(f_max), sample_rate)


def mel_spectrogram(x, cfg: StftConfig, fb: MelFilterbank):
    """``log(max(fb @ |stft(x)|, 1e-5))`` with layout (..., n_mels, T)."""
    if fb.weights.shape[1] != cfg.freq_bins:
        raise ValueError(f"filterbank has {fb.weights.shape[1]} columns, config has {cfg.freq_bins} bins")
    if isinstance(x, Tensor):
        mag = ops.magnitude(stft(x, cfg))
        return ops.log(ops.clamp_min(ops.project(fb.weights, mag), LOG_FLOOR))
    mag = np.abs(stft(x, cfg))
    mel = np.matmul(fb.weights.astype(mag.dtype), mag)
    return np.log(np.maximum(mel, LOG_FLOOR))


def mel_reduce_and_invert(M: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Project linear magnitudes (..., F, T) onto the mel basis and back.

    The way back is the Moore-Penrose pseudo-inverse of the filterbank,
    clipped at 0 so the result is a valid magnitude.
    """
    W = fb.weights
    back = np.linalg.pinv(W) @ (W @ np.asarray(M, dtype=np.float64))
    return np.maximum(back, 0.0).astype(np.asarray(M).dtype, copy=False)


# ----------------------------------------------------------------- Griffin-Lim
def two_sided_weights(n_fft: int) -> np.ndarray:
    """Multiplicity of each one-sided bin in the full ``n_fft``-point spectrum."""
    w = np.full(n_fft // 2 + 1, 2.0)
    w[0] = 1.0
    if n_fft % 2 == 0:
        w[-1] = 1.0
    return w


def griffin_lim(M: np.ndarray, cfg: StftConfig = StftConfig(), iters: int = 32,
                out_len: int | None = None, distances: list | None = None) -> np.ndarray:
    """Recover a waveform from an STFT magnitude ``M`` of shape (F, T).

    Starts from zero phase and alternates least-squares overlap-add synthesis
    with re-analysis, keeping the phase and restoring ``M``. The estimate lives
    on the full frame-covered signal (padding included), which keeps every
    synthesis an exact least-squares projection, so the distance
    ``||abs(stft(x_k)) - M||_2`` appended to ``distances`` per iteration never
    increases. The norm is taken over the two-sided spectrum (interior bins
    counted twice), the one the synthesis step minimizes. ``iters=0`` returns
    the zero-phase reconstruction.
    """
    M = np.asarray(M)
    if M.ndim < 2 or M.shape[-2] != cfg.freq_bins:
        raise ValueError(f"magnitude must be (..., {cfg.freq_bins}, T), got {M.shape}")
    if np.any(M < 0):
        raise ValueError("magnitudes must be non-negative")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    check_nola(cfg)
    dtype = np.float32 if M.dtype == np.float32 else np.float64
    cdtype = np.complex64 if dtype == np.float32 else np.complex128
    M = M.astype(dtype, copy=False)
    S = M.astype(cdtype)
    mult = two_sided_weights(cfg.window_size)[:, None]
    for _ in range(iters):
        y = _synthesize(S, cfg, dtype)
        X = _analyze(y, cfg)
        mag = np.abs(X)
        if distances is not None:
            distances.append(float(np.sqrt(np.sum(mult * (mag - M) ** 2))))
        unit = np.ones_like(X)
        nz = mag > 0
        unit[nz] = X[nz] / mag[nz]
        S = M * unit
    y = _synthesize(S, cfg, dtype)
    if out_len is None:
        out_len = cfg.default_length(M.shape[-1])
    out = _trim(y, cfg, out_len)
    if out is None:
        start = cfg.window_size // 2 if cfg.center_pad else 0
        out = np.zeros(y.shape[:-1] + (out_len,), dtype=dtype)
        out[..., :y.shape[-1] - start] = y[..., start:]
    return np.ascontiguousarray(out)
