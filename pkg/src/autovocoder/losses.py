"""Training objective: log-mel L1, per-sample squared error and LSGAN terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .autograd import Tensor, ops


@dataclass(frozen=True)
class LossWeights:
    mel: float = 45.0
    time: float = 100.0
    fm: float = 2.0
    adv: float = 1.0

    def __post_init__(self):
        for name in ("mel", "time", "fm", "adv"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    @property
    def adversarial(self) -> bool:
        return self.adv > 0 or self.fm > 0


def _as_pair(x, y):
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x))
    if not isinstance(y, Tensor):
        y = Tensor(np.asarray(y, dtype=x.dtype))
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return x, y


def time_domain_loss(x, y) -> Tensor:
    """Mean per-sample squared error."""
    x, y = _as_pair(x, y)
    return ops.mean(ops.square(ops.sub(x, y)))


def mel_loss(x, y, fb: dsp.MelFilterbank, cfg: dsp.StftConfig) -> Tensor:
    """Mean absolute difference of log-mel spectrograms."""
    x, y = _as_pair(x, y)
    return ops.mean(ops.abs(ops.sub(dsp.mel_spectrogram(x, cfg, fb), dsp.mel_spectrogram(y, cfg, fb))))


def discriminator_loss(real_scores, fake_scores) -> Tensor:
    """sum_k mean((D_k(real) - 1)^2) + mean(D_k(fake)^2)."""
    total = None
    for r, f in zip(real_scores, fake_scores):
        r = r if isinstance(r, Tensor) else Tensor(np.asarray(r))
        f = f if isinstance(f, Tensor) else Tensor(np.asarray(f))
        term = ops.add(ops.mean(ops.square(ops.sub(r, 1.0))), ops.mean(ops.square(f)))
        total = term if total is None else ops.add(total, term)
    return total


def generator_adv_loss(fake_scores) -> Tensor:
    """sum_k mean((D_k(fake) - 1)^2)."""
    total = None
    for f in fake_scores:
        f = f if isinstance(f, Tensor) else Tensor(np.asarray(f))
        term = ops.mean(ops.square(ops.sub(f, 1.0)))
        total = term if total is None else ops.add(total, term)
    return total


def feature_matching_loss(real_feats, fake_feats) -> Tensor:
    """Sum over critics and layers of mean |real - fake| (real side detached)."""
    total = None
    for rf, ff in zip(real_feats, fake_feats):
        for r, f in zip(rf, ff):
            term = ops.mean(ops.abs(ops.sub(f, r.detach())))
            total = term if total is None else ops.add(total, term)
    return total


def adversarial_losses(real: Tensor, fake: Tensor, D) -> dict:
    """LSGAN losses over every sub-discriminator of ``D``.

    ``d_loss`` sees a detached ``fake``; ``g_adv`` and ``g_fm`` stay attached
    to it. Real features come from the same forward pass used for ``d_loss``.
    """
    real, fake = _as_pair(real, fake)
    real_out = D(real.detach())
    fake_det = D(fake.detach())
    d_loss = discriminator_loss([s for s, _ in real_out], [s for s, _ in fake_det])
    fake_out = D(fake)
    g_adv = generator_adv_loss([s for s, _ in fake_out])
    g_fm = feature_matching_loss([f for _, f in real_out], [f for _, f in fake_out])
    return {"d_loss": d_loss, "g_adv": g_adv, "g_fm": g_fm,
            "real_features": [f for _, f in real_out], "fake_features": [f for _, f in fake_out]}


def generator_loss(x, x_hat, weights: LossWeights, fb: dsp.MelFilterbank, cfg: dsp.StftConfig,
                   D=None) -> tuple[Tensor, dict]:
    """Weighted sum of mel, time-domain, adversarial and feature-matching terms.

    Terms with zero weight are skipped entirely; the adversarial ones need ``D``.
    Returns the total and a dict of the individual (unweighted) terms.
    """
    x, x_hat = _as_pair(x, x_hat)
    parts: dict[str, Tensor] = {}
    total = None

    def add(name, value, w):
        nonlocal total
        parts[name] = value
        term = ops.mul(value, float(w))
        total = term if total is None else ops.add(total, term)

    if weights.mel > 0:
        add("mel", mel_loss(x_hat, x, fb, cfg), weights.mel)
    if weights.time > 0:
        add("time", time_domain_loss(x_hat, x), weights.time)
    if weights.adversarial:
        if D is None:
            raise ValueError("adversarial weights are nonzero but no discriminators were given")
        real_out = D(x.detach())
        fake_out = D(x_hat)
        if weights.adv > 0:
            add("g_adv", generator_adv_loss([s for s, _ in fake_out]), weights.adv)
        if weights.fm > 0:
            add("g_fm", feature_matching_loss([f for _, f in real_out], [f for _, f in fake_out]),
                weights.fm)
    if total is None:
        total = ops.mul(ops.sum(x_hat), 0.0)
    return total, parts
