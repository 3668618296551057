"""Denoising-autoencoder training with Adam and alternating D/G updates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ck
from .autograd import Module, Parameter, Tensor, no_grad
from .config import Config
from .discriminators import Discriminators
from .dsp import mel_filterbank
from .losses import discriminator_loss, generator_loss, mel_loss, time_domain_loss
from .model import Autovocoder

log = logging.getLogger(__name__)


class OptimizerStateError(RuntimeError):
    pass


class TrainingAborted(RuntimeError):
    """A loss went non-finite; ``batch_index`` names the first offending segment."""

    def __init__(self, message: str, batch_index: int | None, dump_path: Path | None):
        super().__init__(message)
        self.batch_index = batch_index
        self.dump_path = dump_path


# ------------------------------------------------------------------------ Adam
@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, p: Parameter) -> "AdamState":
        return cls(np.zeros_like(p.data), np.zeros_like(p.data), 0)


def adam_update(p: Parameter, state: AdamState, lr: float, b1: float, b2: float,
                eps: float = 1e-8) -> None:
    """One bias-corrected Adam step on ``p``; clears ``p.grad`` afterwards."""
    if p.grad is None:
        raise OptimizerStateError("parameter has no gradient; run backward() first")
    g = p.grad
    dt = p.dtype.type
    state.t += 1
    state.m *= dt(b1)
    state.m += dt(1.0 - b1) * g
    state.v *= dt(b2)
    state.v += dt(1.0 - b2) * (g * g)
    mhat = state.m / dt(1.0 - b1 ** state.t)
    vhat = state.v / dt(1.0 - b2 ** state.t)
    p.data -= dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))
    p.grad = None


class Adam:
    def __init__(self, module: Module, b1: float = 0.8, b2: float = 0.99, eps: float = 1e-8):
        self.params = dict(module.named_parameters())
        self.state = {name: AdamState.zeros_like(p) for name, p in self.params.items()}
        self.b1, self.b2, self.eps = b1, b2, eps

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            adam_update(p, self.state[name], lr, self.b1, self.b2, self.eps)

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name, s in self.state.items():
            out[f"{prefix}.m.{name}"] = s.m
            out[f"{prefix}.v.{name}"] = s.v
            out[f"{prefix}.t.{name}"] = np.array(s.t, dtype=np.uint64)
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        for name, s in self.state.items():
            try:
                s.m = arrays[f"{prefix}.m.{name}"].astype(s.m.dtype)
                s.v = arrays[f"{prefix}.v.{name}"].astype(s.v.dtype)
                s.t = int(arrays[f"{prefix}.t.{name}"])
            except KeyError as err:
                raise ck.CheckpointError(f"optimizer state missing {err.args[0]}") from None


# --------------------------------------------------------------------- Trainer
def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


class Trainer:
    """Owns the generator, discriminators, both optimizers and all RNG streams.

    With ``lambda_adv == lambda_fm == 0`` the discriminators are never run
    or updated and the objective is pure reconstruction.
    """

    def __init__(self, cfg: Config, corpus: Sequence[np.ndarray], work_dir=None):
        if not corpus:
            raise ValueError("training corpus is empty")
        self.cfg = cfg
        self.corpus = [np.asarray(x, dtype=np.float32) for x in corpus]
        self.work_dir = Path(work_dir) if work_dir is not None else None
        self.model = Autovocoder(cfg.model)
        self.disc = Discriminators(cfg.discriminators)
        self.fb = mel_filterbank(cfg.sample_rate, cfg.window_size, cfg.n_mels)
        self.weights = cfg.loss_weights
        self.opt_g = Adam(self.model, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps)
        self.opt_d = Adam(self.disc, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps)
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.step = 0

    @property
    def steps_per_epoch(self) -> int:
        if self.cfg.steps_per_epoch > 0:
            return self.cfg.steps_per_epoch
        return max(1, len(self.corpus) // self.cfg.batch_size)

    def lr(self, base: float) -> float:
        return base * self.cfg.lr_decay ** (self.step // self.steps_per_epoch)

    # ------------------------------------------------------------------ data
    def crop(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        seg, hop = self.cfg.segment_len, self.cfg.hop
        if len(x) <= seg:
            out = np.zeros(seg, dtype=np.float32)
            out[:len(x)] = x
            return out
        n_offsets = (len(x) - seg) // hop + 1
        off = int(rng.integers(n_offsets)) * hop
        return x[off:off + seg]

    def sample_batch(self) -> np.ndarray:
        idx = self.rng.integers(len(self.corpus), size=self.cfg.batch_size)
        return np.stack([self.crop(self.corpus[i], self.rng) for i in idx])

    # ------------------------------------------------------------------ step
    def train_step(self, batch: np.ndarray | None = None) -> dict:
        """One discriminator update (when adversarial) then one generator update."""
        if batch is None:
            batch = self.sample_batch()
        batch = np.asarray(batch, dtype=np.float32)
        if batch.ndim != 2 or batch.shape[1] != self.cfg.segment_len:
            raise ValueError(f"batch must be (B, {self.cfg.segment_len}), got {batch.shape}")
        stft = self.cfg.stft
        self.model.train()
        self.disc.train()
        x = Tensor(batch)
        x_hat = self.model.decoder(self.model.encoder(x), batch.shape[1])
        metrics: dict[str, float] = {"step": self.step + 1}
        lr_g, lr_d = self.lr(self.cfg.lr_g), self.lr(self.cfg.lr_d)

        if self.weights.adversarial:
            real_s = [s for s, _ in self.disc(x)]
            fake_s = [s for s, _ in self.disc(x_hat.detach())]
            d_loss = discriminator_loss(real_s, fake_s)
            self._check_finite("d_loss", d_loss, batch, x_hat)
            d_loss.backward()
            metrics["d_loss"] = d_loss.item()
            metrics["grad_norm_d"] = self.opt_d.grad_norm()
            self.opt_d.step(lr_d)

        total, parts = generator_loss(x, x_hat, self.weights, self.fb, stft,
                                      self.disc if self.weights.adversarial else None)
        self._check_finite("generator loss", total, batch, x_hat)
        total.backward()
        self.disc.zero_grad()
        metrics["grad_norm_g"] = self.opt_g.grad_norm()
        self.opt_g.step(lr_g)
        self.step += 1

        metrics["loss_g"] = total.item()
        for name, value in parts.items():
            metrics[name] = value.item()
        with no_grad():
            if "mel" not in metrics:
                metrics["mel"] = mel_loss(x_hat.detach(), x, self.fb, stft).item()
            if "time" not in metrics:
                metrics["time"] = time_domain_loss(x_hat.detach(), x).item()
        metrics["lr_g"] = lr_g
        for k, v in metrics.items():
            if not math.isfinite(v):
                raise TrainingAborted(f"metric {k} is not finite at step {self.step}", None, None)
        return metrics

    def _check_finite(self, what: str, loss: Tensor, batch: np.ndarray, x_hat: Tensor) -> None:
        if np.isfinite(loss.data).all():
            return
        # batch norm spreads a bad input row to every output row, so inputs come first
        bad = [i for i in range(batch.shape[0]) if not np.isfinite(batch[i]).all()]
        bad = bad or [i for i in range(batch.shape[0]) if not np.isfinite(x_hat.data[i]).all()]
        index = bad[0] if bad else None
        dump = None
        if self.work_dir is not None:
            self.work_dir.mkdir(parents=True, exist_ok=True)
            dump = self.work_dir / f"nan_step{self.step + 1}.npz"
            np.savez(dump, batch=batch, output=x_hat.data)
        raise TrainingAborted(
            f"{what} is not finite at step {self.step + 1} (batch index {index}); "
            f"offending batch dumped to {dump}", index, dump)

    def fit(self, steps: int, callback: Callable[[dict], None] | None = None,
            checkpoint_path=None) -> list[dict]:
        history = []
        for _ in range(steps):
            m = self.train_step()
            history.append(m)
            if callback is not None:
                callback(m)
            interval = self.cfg.checkpoint_interval
            if checkpoint_path is not None and interval > 0 and self.step % interval == 0:
                self.save(checkpoint_path)
        return history

    def evaluate(self, batch: np.ndarray) -> dict:
        """Eval-mode reconstruction metrics on a fixed batch."""
        was = self.model.training
        self.model.eval()
        try:
            with no_grad():
                x = Tensor(np.asarray(batch, dtype=np.float32))
                x_hat = self.model.decoder(self.model.encoder(x), x.shape[-1])
                return {"mel": mel_loss(x_hat, x, self.fb, self.cfg.stft).item(),
                        "time": time_domain_loss(x_hat, x).item()}
        finally:
            self.model.train(was)

    # ------------------------------------------------------------ persistence
    def to_checkpoint(self) -> ck.Checkpoint:
        tensors = {f"gen.{k}": v for k, v in self.model.state_dict().items()}
        tensors.update({f"disc.{k}": v for k, v in self.disc.state_dict().items()})
        optimizer = self.opt_g.state_arrays("gen")
        optimizer.update(self.opt_d.state_arrays("disc"))
        rng = {"trainer": _rng_state(self.rng), "dropout": _rng_state(self.model.dropout_rng)}
        return ck.Checkpoint(self.step, tensors, optimizer, self.cfg.to_text(), rng)

    def save(self, path) -> None:
        ck.save_checkpoint(path, self.to_checkpoint())

    def restore(self, c: ck.Checkpoint) -> None:
        gen = {k[4:]: v for k, v in c.tensors.items() if k.startswith("gen.")}
        disc = {k[5:]: v for k, v in c.tensors.items() if k.startswith("disc.")}
        stray = [k for k in c.tensors if not k.startswith(("gen.", "disc."))]
        for target, state, prefix in ((self.model, gen, "gen."), (self.disc, disc, "disc.")):
            known = set(target.state_dict())
            unknown = sorted(set(state) - known)
            if unknown or stray:
                raise ck.UnknownParameterError(f"unknown parameter names: {[prefix + u for u in unknown] + stray}")
            missing = sorted(known - set(state))
            if missing:
                raise ck.CheckpointError(f"checkpoint lacks {[prefix + m for m in missing]}")
            target.load_state_dict(state)
        self.opt_g.load_arrays(c.optimizer, "gen")
        self.opt_d.load_arrays(c.optimizer, "disc")
        self.rng.bit_generator.state = c.rng["trainer"]
        self.model.dropout_rng.bit_generator.state = c.rng["dropout"]
        self.step = c.step

    @classmethod
    def from_checkpoint(cls, path, corpus, work_dir=None, overrides: dict | None = None) -> "Trainer":
        c = ck.load_checkpoint(path)
        cfg = Config.from_text(c.config_text)
        if overrides:
            cfg = cfg.replace(**overrides)
        t = cls(cfg, corpus, work_dir)
        t.restore(c)
        return t


def load_model(path) -> tuple[Autovocoder, Config]:
    """Eval-mode generator and its config from a checkpoint file."""
    c = ck.load_checkpoint(path)
    cfg = Config.from_text(c.config_text)
    model = Autovocoder(cfg.model)
    state = {k[4:]: v for k, v in c.tensors.items() if k.startswith("gen.")}
    unknown = sorted(set(state) - set(model.state_dict()))
    if unknown:
        raise ck.UnknownParameterError(f"unknown parameter names: {unknown}")
    model.load_state_dict(state)
    model.eval()
    return model, cfg
