"""Autovocoder encoder/decoder built from residual convolutional basic blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .autograd import BatchNorm2d, Conv2d, Dropout, Linear, Module, Tensor, no_grad, ops
from .autograd.ops import HEAD_CHANNELS

ENCODER_PLAN = ((4, 4),) * 5 + ((4, 1),) + ((1, 1),) * 5
DECODER_PLAN = ((1, 1),) * 5 + ((1, 4),) + ((4, 4),) * 5


@dataclass(frozen=True)
class ModelConfig:
    stft: dsp.StftConfig = field(default_factory=dsp.StftConfig)
    representation_size: int = 128
    head: str = "cartesian"
    embedding_dropout: float = 0.1
    seed: int = 0
    encoder_plan: tuple = ENCODER_PLAN
    decoder_plan: tuple = DECODER_PLAN

    def __post_init__(self):
        if self.representation_size <= 0:
            raise ValueError("representation_size must be positive")
        if self.head not in HEAD_CHANNELS:
            raise ValueError(f"head must be one of {sorted(HEAD_CHANNELS)}, got {self.head!r}")
        if not 0.0 <= self.embedding_dropout <= 1.0:
            raise ValueError("embedding_dropout must be in [0, 1]")
        for name, plan, first, last in (("encoder", self.encoder_plan, 4, 1),
                                        ("decoder", self.decoder_plan, 1, None)):
            if len(plan) != 11:
                raise ValueError(f"{name} plan must have 11 blocks, got {len(plan)}")
            if plan[0][0] != first or (last is not None and plan[-1][1] != last):
                raise ValueError(f"{name} plan has wrong input/output channel counts")
            for (_, a), (b, _) in zip(plan, plan[1:]):
                if a != b:
                    raise ValueError(f"{name} plan is not chained: {plan}")


class BasicBlock(Module):
    """conv3x3 -> BN -> ReLU -> conv3x3 -> BN -> ReLU, plus the input when channels match.

    The convs carry no bias: batchnorm's mean subtraction would cancel it.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.conv1 = Conv2d(c_in, c_out, (3, 3), rng, bias=False)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, (3, 3), rng, bias=False)
        self.bn2 = BatchNorm2d(c_out)

    @property
    def residual(self) -> bool:
        return self.c_in == self.c_out

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3] != self.c_in:
            raise ValueError(f"block expects {self.c_in} channels, got {x.shape[-3]}")
        h = ops.relu(self.bn1(self.conv1(x)))
        h = ops.relu(self.bn2(self.conv2(h)))
        return ops.add(h, x) if self.residual else h


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dropout_rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.blocks = [BasicBlock(a, b, rng) for a, b in cfg.encoder_plan]
        self.proj = Linear(cfg.stft.freq_bins, cfg.representation_size, rng)
        self.dropout = Dropout(cfg.embedding_dropout, dropout_rng)

    def forward(self, x: Tensor) -> Tensor:
        """(B, L) waveform -> (B, T, d) latent."""
        h = dsp.complex_to_stack(dsp.stft(x, self.cfg.stft))  # (B, 4, F, T)
        for block in self.blocks:
            h = block(h)
        h = ops.transpose(ops.reshape(h, (h.shape[0],) + h.shape[2:]), (0, 2, 1))  # (B, T, F)
        return self.dropout(self.proj(h))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.proj = Linear(cfg.representation_size, cfg.stft.freq_bins, rng)
        self.blocks = [BasicBlock(a, b, rng) for a, b in cfg.decoder_plan]
        self.out = Conv2d(cfg.decoder_plan[-1][1], HEAD_CHANNELS[cfg.head], (1, 1), rng,
                          padding=(0, 0), gain=1.0)

    def head_channels(self, z: Tensor) -> Tensor:
        """(B, T, d) latent -> (B, head channels, F, T) raw output."""
        if z.shape[-1] != self.cfg.representation_size:
            raise ValueError(f"latent dim {z.shape[-1]} != representation size {self.cfg.representation_size}")
        h = ops.transpose(self.proj(z), (0, 2, 1))  # (B, F, T)
        h = ops.reshape(h, (h.shape[0], 1) + h.shape[1:])
        for block in self.blocks:
            h = block(h)
        return self.out(h)

    def forward(self, z: Tensor, out_len: int | None = None) -> Tensor:
        spec = dsp.stack_to_complex(self.head_channels(z), self.cfg.head)
        return dsp.istft(spec, self.cfg.stft, out_len)


class Autovocoder(Module):
    """Waveform autoencoder.

    ``encode``/``decode`` accept numpy arrays (returned as arrays, no graph)
    or tensors (differentiable). Inputs may be unbatched ``(L,)`` / ``(T, d)``
    or batched ``(B, L)`` / ``(B, T, d)``.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.dropout_rng = np.random.default_rng([cfg.seed, 1])
        self.encoder = Encoder(cfg, rng, self.dropout_rng)
        self.decoder = Decoder(cfg, rng)

    def _run(self, fn, x, batched_ndim: int):
        as_array = not isinstance(x, Tensor)
        t = Tensor(np.asarray(x, dtype=self.dtype)) if as_array else x
        squeeze = t.ndim == batched_ndim - 1
        if squeeze:
            t = ops.reshape(t, (1,) + t.shape)
        if as_array:
            with no_grad():
                out = fn(t)
        else:
            out = fn(t)
        if squeeze:
            out = ops.reshape(out, out.shape[1:])
        return out.data if as_array else out

    @property
    def dtype(self):
        return self.decoder.proj.weight.dtype

    def encode(self, x):
        return self._run(self.encoder, x, 2)

    def decode(self, z, out_len: int | None = None):
        return self._run(lambda t: self.decoder(t, out_len), z, 3)

    def copy_synthesis(self, x):
        """decode(encode(x)) trimmed to the input length."""
        n = np.shape(x)[-1] if not isinstance(x, Tensor) else x.shape[-1]
        return self.decode(self.encode(x), n)

    def forward(self, x, out_len: int | None = None):
        return self.decode(self.encode(x), out_len)


def head_ratio_from_raw(raw: np.ndarray, floor: float = 1e-6) -> dict:
    """Mean/std of |polar magnitude| / |cartesian value| over (..., 4, F, T) mean4 outputs."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-3] != 4:
        raise ValueError("need the four mean4 channels (re, im, magnitude, phase)")
    cart = np.hypot(raw[..., 0, :, :], raw[..., 1, :, :])
    polar = np.abs(raw[..., 2, :, :])
    keep = cart > floor
    ratios = polar[keep] / cart[keep]
    if ratios.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "count": 0}
    return {"mean": float(ratios.mean()), "std": float(ratios.std()), "count": int(ratios.size)}


def head_ratio_stats(model: Autovocoder, corpus) -> dict:
    """Ratio of polar to cartesian output magnitudes over a set of waveforms."""
    if model.cfg.head != "mean4":
        raise ValueError("head_ratio_stats needs a model trained with the mean4 head")
    was = model.training
    model.eval()
    raws = []
    try:
        with no_grad():
            for x in corpus:
                z = model.encode(np.asarray(x)[None])
                raws.append(model.decoder.head_channels(Tensor(z)).data.reshape(4, -1))
    finally:
        model.train(was)
    flat = np.concatenate(raws, axis=1)
    return head_ratio_from_raw(flat[:, :, None])
