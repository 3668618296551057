"""2D cross-correlation (NCHW, pre-padded input, no dilation).

Two implementations with identical semantics. Compiled loops handle the
generator's few-channel 3x3 convolutions, where their innermost loop runs
along the last (contiguous) axis; callers should lay out the long axis last.
Wide convolutions (many channels or long kernels) go through an im2col view
and a BLAS matrix product instead.
"""

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view

# weights with at least this many elements use the matrix-product path
GEMM_MIN_WEIGHT = 256


@njit(cache=True, fastmath=False)
def conv2d_forward(xp, w, sh, sw, out):
    B, C, _, _ = xp.shape
    O, _, KH, KW = w.shape
    H = out.shape[2]
    W = out.shape[3]
    for b in range(B):
        for o in range(O):
            for h in range(H):
                row = out[b, o, h]
                for j in range(W):
                    row[j] = 0.0
                for c in range(C):
                    for dy in range(KH):
                        src = xp[b, c, h * sh + dy]
                        for dx in range(KW):
                            wv = w[o, c, dy, dx]
                            if sw == 1:
                                for j in range(W):
                                    row[j] += wv * src[j + dx]
                            else:
                                for j in range(W):
                                    row[j] += wv * src[j * sw + dx]
    return out


@njit(cache=True, fastmath=False)
def conv2d_grad_input(gout, w, sh, sw, gxp):
    B, O, H, W = gout.shape
    _, C, KH, KW = w.shape
    for b in range(B):
        for c in range(C):
            for r in range(gxp.shape[2]):
                gxp[b, c, r, :] = 0.0
        for o in range(O):
            for h in range(H):
                g = gout[b, o, h]
                for c in range(C):
                    for dy in range(KH):
                        dst = gxp[b, c, h * sh + dy]
                        for dx in range(KW):
                            wv = w[o, c, dy, dx]
                            if sw == 1:
                                for j in range(W):
                                    dst[j + dx] += wv * g[j]
                            else:
                                for j in range(W):
                                    dst[j * sw + dx] += wv * g[j]
    return gxp


@njit(cache=True, fastmath=False)
def conv2d_grad_weight(gout, xp, sh, sw, gw):
    B, O, H, W = gout.shape
    _, C, KH, KW = gw.shape
    # per-lane partial sums keep the inner loop elementwise (vectorizable)
    acc = np.zeros((O, C, KH, KW, W), dtype=gw.dtype)
    for b in range(B):
        for o in range(O):
            for h in range(H):
                g = gout[b, o, h]
                for c in range(C):
                    for dy in range(KH):
                        src = xp[b, c, h * sh + dy]
                        for dx in range(KW):
                            lane = acc[o, c, dy, dx]
                            if sw == 1:
                                for j in range(W):
                                    lane[j] += g[j] * src[j + dx]
                            else:
                                for j in range(W):
                                    lane[j] += g[j] * src[j * sw + dx]
    for o in range(O):
        for c in range(C):
            for dy in range(KH):
                for dx in range(KW):
                    gw[o, c, dy, dx] = acc[o, c, dy, dx].sum()
    return gw


def _use_gemm(w: np.ndarray) -> bool:
    return w.size >= GEMM_MIN_WEIGHT


def _out_hw(xp_shape, w_shape, sh, sw):
    return (xp_shape[2] - w_shape[2]) // sh + 1, (xp_shape[3] - w_shape[3]) // sw + 1


def _columns(xp, w_shape, sh, sw):
    """(B, C, H, W, KH, KW) strided view of every receptive field."""
    H, W = _out_hw(xp.shape, w_shape, sh, sw)
    win = sliding_window_view(xp, w_shape[2:], axis=(2, 3))
    return win[:, :, :(H - 1) * sh + 1:sh, :(W - 1) * sw + 1:sw]


def conv2d(xp: np.ndarray, w: np.ndarray, stride=(1, 1)) -> np.ndarray:
    sh, sw = stride
    w = np.ascontiguousarray(w, dtype=xp.dtype)
    H, W = _out_hw(xp.shape, w.shape, sh, sw)
    if _use_gemm(w):
        out = np.tensordot(_columns(xp, w.shape, sh, sw), w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out = np.empty((xp.shape[0], w.shape[0], H, W), dtype=xp.dtype)
    return conv2d_forward(np.ascontiguousarray(xp), w, sh, sw, out)


def conv2d_backward(gout, xp, w, stride=(1, 1)):
    sh, sw = stride
    gout = np.ascontiguousarray(gout, dtype=xp.dtype)
    w = np.ascontiguousarray(w, dtype=xp.dtype)
    if _use_gemm(w):
        H, W = gout.shape[2:]
        gw = np.tensordot(gout, _columns(xp, w.shape, sh, sw), axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(gout, w, axes=([1], [0]))  # (B, H, W, C, KH, KW)
        gxp = np.zeros_like(xp)
        for dy in range(w.shape[2]):
            for dx in range(w.shape[3]):
                gxp[:, :, dy:dy + (H - 1) * sh + 1:sh, dx:dx + (W - 1) * sw + 1:sw] += \
                    gcols[..., dy, dx].transpose(0, 3, 1, 2)
        return gxp, np.ascontiguousarray(gw)
    gxp = np.empty_like(xp)
    conv2d_grad_input(gout, w, sh, sw, gxp)
    gw = np.empty_like(w)
    conv2d_grad_weight(gout, np.ascontiguousarray(xp), sh, sw, gw)
    return gxp, gw
