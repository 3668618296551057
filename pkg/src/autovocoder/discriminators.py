"""Multi-period and multi-scale waveform discriminators (width-reduced).

All convolutions run over an NCHW layout whose last axis is the long time
axis: a period-``p`` view is ``(B, 1, p, ceil(L/p))`` and a scale view is
``(B, 1, 1, L)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Conv2d, Module, Tensor, ops


@dataclass(frozen=True)
class DiscriminatorConfig:
    mpd_periods: tuple = (2, 3, 5, 7, 11)
    msd_scales: int = 3
    mpd_channels: tuple = (8, 16, 32, 32)
    msd_channels: tuple = (16, 32, 64, 64)
    seed: int = 1

    def __post_init__(self):
        periods = tuple(self.mpd_periods)
        if len(set(periods)) != len(periods) or any(p < 2 for p in periods):
            raise ValueError(f"periods must be distinct and >= 2, got {periods}")
        if self.msd_scales < 1:
            raise ValueError("msd_scales must be >= 1")


def period_view(x: Tensor, period: int) -> Tensor:
    """(B, L) -> (B, 1, period, ceil(L/period)); zero-pads the tail."""
    B, L = x.shape
    rem = (-L) % period
    if rem:
        x = ops.pad_last(x, 0, rem)
    cols = x.shape[-1] // period
    h = ops.reshape(x, (B, cols, period))
    return ops.reshape(ops.transpose(h, (0, 2, 1)), (B, 1, period, cols))


class PeriodDiscriminator(Module):
    def __init__(self, period: int, channels, rng: np.random.Generator):
        super().__init__()
        self.period = period
        widths = (1,) + tuple(channels)
        layers = [Conv2d(a, b, (1, 5), rng, stride=(1, 3), padding=(0, 2), gain=1.0)
                  for a, b in zip(widths[:-2], widths[1:-1])]
        layers.append(Conv2d(widths[-2], widths[-1], (1, 5), rng, padding=(0, 2), gain=1.0))
        self.convs = layers
        self.post = Conv2d(widths[-1], 1, (1, 3), rng, padding=(0, 1), gain=1.0)

    def forward(self, x: Tensor):
        h = period_view(x, self.period)
        feats = []
        for conv in self.convs:
            h = ops.leaky_relu(conv(h), 0.1)
            feats.append(h)
        h = self.post(h)
        feats.append(h)
        return ops.reshape(h, (h.shape[0], -1)), feats


class ScaleDiscriminator(Module):
    def __init__(self, channels, rng: np.random.Generator):
        super().__init__()
        c = tuple(channels)
        specs = [(1, c[0], 15, 1), (c[0], c[1], 41, 2), (c[1], c[2], 41, 4), (c[2], c[3], 5, 1)]
        self.convs = [Conv2d(a, b, (1, k), rng, stride=(1, s), padding=(0, k // 2), gain=1.0)
                      for a, b, k, s in specs]
        self.post = Conv2d(c[3], 1, (1, 3), rng, padding=(0, 1), gain=1.0)

    def forward(self, x: Tensor):
        h = ops.reshape(x, (x.shape[0], 1, 1, x.shape[-1]))
        feats = []
        for conv in self.convs:
            h = ops.leaky_relu(conv(h), 0.1)
            feats.append(h)
        h = self.post(h)
        feats.append(h)
        return ops.reshape(h, (h.shape[0], -1)), feats


class Discriminators(Module):
    """All sub-discriminators; ``forward`` returns one ``(score, features)`` per critic."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.mpd = [PeriodDiscriminator(p, cfg.mpd_channels, rng) for p in cfg.mpd_periods]
        self.msd = [ScaleDiscriminator(cfg.msd_channels, rng) for _ in range(cfg.msd_scales)]

    def forward(self, x: Tensor):
        outs = [d(x) for d in self.mpd]
        h = x
        for i, d in enumerate(self.msd):
            if i:
                h = ops.avg_pool1d(h, 4, 2, 2)
            outs.append(d(h))
        return outs
