"""Differentiable operations on :class:`Tensor`.

Every op computes its forward result with numpy and registers a closure that
maps the output gradient to one gradient per input (``None`` where an input
does not need one).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return a, b


# ------------------------------------------------------------------ elementwise
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = a.dtype.type(b)
        return make_result(a.data * s, (a,), lambda g: (g * s,))
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def scale(x: Tensor, s: float) -> Tensor:
    return mul(x, float(s))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    xd = x.data
    return make_result(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); the gradient is zero wherever the floor is active."""
    xd = x.data
    keep = xd > floor
    return make_result(np.maximum(xd, xd.dtype.type(floor)), (x,), lambda g: (g * keep,))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.maximum(xd, xd.dtype.type(0)), (x,), lambda g: (g * (xd > 0),))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    xd = x.data
    factor = np.where(xd > 0, xd.dtype.type(1.0), xd.dtype.type(slope))
    return make_result(xd * factor, (x,), lambda g: (g * factor,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p == 0.0:
        return x
    if p >= 1.0:
        zeros = np.zeros_like(x.data)
        return make_result(zeros, (x,), lambda g: (np.zeros_like(g),))
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


# -------------------------------------------------------------------- reductions
def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


# ------------------------------------------------------------------- shape ops
def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                       lambda g: (g.transpose(inv),))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis
               for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype
    basic = _is_basic(idx)

    def back(g):
        gx = np.zeros(shape, dtype=dtype)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_result(np.array(x.data[idx]), (x,), back)


def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return make_result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                       lambda g: tuple(np.split(g, cuts, axis=axis)))


def pad_last(x: Tensor, left: int, right: int, mode: str = "zero") -> Tensor:
    """Pad the last axis by ``left``/``right`` samples ("zero" or "reflect")."""
    n = x.shape[-1]
    if mode == "zero":
        width = [(0, 0)] * (x.ndim - 1) + [(left, right)]
        out = np.pad(x.data, width)
        return make_result(out, (x,), lambda g: (g[..., left:left + n],))
    if mode != "reflect":
        raise ValueError(f"unknown pad mode {mode!r}")
    if n < 2:
        raise ValueError("reflect padding needs at least 2 samples")
    idx = np.pad(np.arange(n), (left, right), mode="reflect")
    return gather_last(x, idx)


def gather_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[..., idx]`` for a 1-D integer index; the adjoint scatter-adds."""
    n = x.shape[-1]
    lead = x.shape[:-1]

    def back(g):
        flat = g.reshape(-1, g.shape[-1])
        gx = np.empty((flat.shape[0], n), dtype=g.dtype)
        for r in range(flat.shape[0]):
            gx[r] = np.bincount(idx, weights=flat[r], minlength=n)
        return (gx.reshape(lead + (n,)),)

    return make_result(x.data[..., idx], (x,), back)


# ---------------------------------------------------------------- framing / DFT
def _overlap_add_np(frames: np.ndarray, hop: int) -> np.ndarray:
    *lead, T, N = frames.shape
    L = (T - 1) * hop + N
    out = np.zeros(tuple(lead) + (L,), dtype=frames.dtype)
    if N % hop == 0:
        r = N // hop
        for j in range(r):
            chunk = frames[..., j * hop:(j + 1) * hop].reshape(tuple(lead) + (T * hop,))
            out[..., j * hop:j * hop + T * hop] += chunk
    else:
        for t in range(T):
            out[..., t * hop:t * hop + N] += frames[..., t, :]
    return out


def _frame_np(x: np.ndarray, size: int, hop: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, size, axis=-1)
    return np.ascontiguousarray(view[..., ::hop, :])


def frame(x: Tensor, size: int, hop: int) -> Tensor:
    """Split the last axis into overlapping frames: (..., L) -> (..., T, size)."""
    L = x.shape[-1]
    if L < size:
        raise ValueError(f"signal of length {L} is shorter than one frame ({size})")
    out = _frame_np(x.data, size, hop)
    T = out.shape[-2]
    used = (T - 1) * hop + size

    def back(g):
        ola = _overlap_add_np(g, hop)
        if used == L:
            return (ola,)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., :used] = ola
        return (gx,)

    return make_result(out, (x,), back)


def overlap_add(frames: Tensor, hop: int) -> Tensor:
    """Sum overlapping frames: (..., T, N) -> (..., (T-1)*hop + N)."""
    N = frames.shape[-1]
    return make_result(_overlap_add_np(frames.data, hop), (frames,),
                       lambda g: (_frame_np(g, N, hop),))


def rdft(x: Tensor) -> Tensor:
    """Unnormalized real DFT of the last axis: (..., N) -> (..., 2, N//2+1) [re, im]."""
    N = x.shape[-1]
    spec = np.fft.rfft(x.data, axis=-1)
    out = np.stack([spec.real, spec.imag], axis=-2).astype(x.dtype, copy=False)

    def back(g):
        G = g[..., 0, :] + 1j * g[..., 1, :]
        G[..., 1:(N + 1) // 2] *= 0.5
        return (np.fft.irfft(G, n=N, axis=-1).real.astype(x.dtype, copy=False) * N,)

    return make_result(out, (x,), back)


def irdft(z: Tensor, n: int) -> Tensor:
    """Inverse real DFT with 1/n scaling: (..., 2, n//2+1) -> (..., n).

    The imaginary parts of the DC and (for even n) Nyquist bins do not
    influence the output, so their gradient is zero.
    """
    if z.shape[-1] != n // 2 + 1 or z.shape[-2] != 2:
        raise ValueError(f"irdft expects (..., 2, {n // 2 + 1}), got {z.shape}")
    spec = z.data[..., 0, :] + 1j * z.data[..., 1, :]
    out = np.fft.irfft(spec, n=n, axis=-1).astype(z.dtype, copy=False)
    weight = np.full(n // 2 + 1, 2.0 / n)
    weight[0] = 1.0 / n
    if n % 2 == 0:
        weight[-1] = 1.0 / n

    def back(g):
        G = np.fft.rfft(g, axis=-1) * weight
        G.imag[..., 0] = 0.0
        if n % 2 == 0:
            G.imag[..., -1] = 0.0
        return (np.stack([G.real, G.imag], axis=-2).astype(z.dtype, copy=False),)

    return make_result(out, (z,), back)


# ----------------------------------------------------------------- layers
def matmul(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w`` with ``w`` 2-D, broadcasting over the leading axes of ``x``."""
    x, w = _pair(x, w)
    xd, wd = x.data, w.data

    def back(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return make_result(xd @ wd, (x, w), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-position affine map over the last axis; ``weight`` is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, lambda g: back(g)[:len(parents)])


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(1, 1)) -> Tensor:
    """2D cross-correlation over NCHW input with zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    ph, pw = padding
    B, C, H, W = x.shape
    if ph or pw:
        xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=x.dtype)
        xp[:, :, ph:ph + H, pw:pw + W] = x.data
    else:
        xp = x.data
    out = kernels.conv2d(xp, weight.data, stride)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1).astype(out.dtype, copy=False)

    def back(g):
        gxp, gw = kernels.conv2d_backward(g, xp, weight.data, stride)
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, lambda g: back(g)[:len(parents)])


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the running statistics are updated in place (unbiased
    variance, exponential ``momentum``); in eval mode they are used as-is.
    """
    xd = x.data
    dt = xd.dtype
    C = xd.shape[1]
    shape = (1, C, 1, 1)
    if training:
        n = xd.size // C
        mu = xd.mean(axis=(0, 2, 3), dtype=np.float64)
        var = xd.var(axis=(0, 2, 3), dtype=np.float64)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    scale_ = gamma.data.astype(np.float64) * inv
    shift = beta.data.astype(np.float64) - mu * scale_
    out = xd * scale_.astype(dt).reshape(shape)
    out += shift.astype(dt).reshape(shape)
    mu_, inv_ = mu.astype(dt).reshape(shape), inv.astype(dt).reshape(shape)
    g_ = gamma.data.reshape(shape)

    def back(g):
        xhat = (xd - mu_) * inv_
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * g_
        if training:
            m_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            m_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = (gxhat - m_g - xhat * m_gx) * inv_
        else:
            gx = gxhat * inv_
        return gx, ggamma.astype(dt, copy=False), gbeta

    return make_result(out, (x, gamma, beta), back)


def avg_pool1d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Average pooling over the last axis, zeros counted in the average."""
    xp = np.pad(x.data, [(0, 0)] * (x.ndim - 1) + [(padding, padding)])
    L = x.shape[-1]
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=-1)[..., ::stride, :]
    out = win.mean(axis=-1)
    T = out.shape[-1]

    def back(g):
        gp = np.zeros(xp.shape, dtype=g.dtype)
        share = g / kernel
        for k in range(kernel):
            gp[..., k:k + (T - 1) * stride + 1:stride] += share
        return (gp[..., padding:padding + L],)

    return make_result(out, (x,), back)


# ----------------------------------------------------------- complex helpers
def complex_to_stack(z: Tensor) -> Tensor:
    """(..., 2, F, T) [re, im] -> (..., 4, F, T) [magnitude, phase, re, im].

    Where the magnitude is exactly zero the phase is 0 and both the magnitude
    and phase gradients are taken as 0. The phase is wrapped to (-pi, pi].
    """
    re, im = z.data[..., 0, :, :], z.data[..., 1, :, :]
    mag = np.hypot(re, im)
    # Bins that are real up to FFT rounding (DC, Nyquist, and every bin of a
    # mirror-symmetric frame such as the first reflect-padded one) get phase 0
    # or pi exactly instead of flipping between +pi and -pi on noise.
    tol = 64 * np.finfo(mag.dtype).eps * mag.max(axis=-2, keepdims=True)
    phase = np.arctan2(np.where(np.abs(im) <= tol, 0.0, im), re)
    zero = mag == 0
    phase[zero] = 0.0
    safe = np.where(zero, 1.0, mag)
    out = np.stack([mag, phase, re, im], axis=-3)

    def back(g):
        gm, gp, gr, gi = (g[..., k, :, :] for k in range(4))
        inv = np.where(zero, 0.0, 1.0 / safe)
        inv2 = inv * inv
        g_re = gm * re * inv - gp * im * inv2 + gr
        g_im = gm * im * inv + gp * re * inv2 + gi
        return (np.stack([g_re, g_im], axis=-3).astype(z.dtype, copy=False),)

    return make_result(out.astype(z.dtype, copy=False), (z,), back)


HEAD_CHANNELS = {"cartesian": 2, "polar": 2, "mean4": 4}


def stack_to_complex(raw: Tensor, head: str) -> Tensor:
    """Decoder output channels -> (..., 2, F, T) [re, im].

    cartesian: (re, im); polar: (mag, phase); mean4: (re, im, mag, phase),
    averaged as complex numbers.
    """
    if head not in HEAD_CHANNELS:
        raise ValueError(f"unknown head {head!r}")
    if raw.shape[-3] != HEAD_CHANNELS[head]:
        raise ValueError(f"head {head!r} needs {HEAD_CHANNELS[head]} channels, got {raw.shape[-3]}")
    d = raw.data
    if head == "cartesian":
        return make_result(d.copy(), (raw,), lambda g: (g,))
    if head == "polar":
        m, p = d[..., 0, :, :], d[..., 1, :, :]
        c, s = np.cos(p), np.sin(p)
        out = np.stack([m * c, m * s], axis=-3)

        def back(g):
            gr, gi = g[..., 0, :, :], g[..., 1, :, :]
            return (np.stack([gr * c + gi * s, m * (gi * c - gr * s)], axis=-3),)

        return make_result(out, (raw,), back)
    m, p = d[..., 2, :, :], d[..., 3, :, :]
    c, s = np.cos(p), np.sin(p)
    out = 0.5 * np.stack([d[..., 0, :, :] + m * c, d[..., 1, :, :] + m * s], axis=-3)

    def back4(g):
        gr, gi = 0.5 * g[..., 0, :, :], 0.5 * g[..., 1, :, :]
        return (np.stack([gr, gi, gr * c + gi * s, m * (gi * c - gr * s)], axis=-3),)

    return make_result(out.astype(d.dtype, copy=False), (raw,), back4)


def magnitude(z: Tensor) -> Tensor:
    """|re + i·im| over the complex axis (-3) with zero gradient at the origin."""
    re, im = z.data[..., 0, :, :], z.data[..., 1, :, :]
    mag = np.hypot(re, im)
    zero = mag == 0
    inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, mag)).astype(z.dtype)

    def back(g):
        return (np.stack([g * re * inv, g * im * inv], axis=-3),)

    return make_result(mag, (z,), back)


def project(w: np.ndarray, x: Tensor) -> Tensor:
    """Constant left product ``w @ x`` over the last two axes of ``x``."""
    w = np.asarray(w, dtype=x.dtype)
    return make_result(np.matmul(w, x.data), (x,), lambda g: (np.matmul(w.T, g),))
