"""Float64 finite-difference suite over every differentiable op and the full pipeline.

Used by ``autovocoder gradcheck``. Each check maps to one scalar function of
one tensor; the reported number is the worst relative error from
:func:`grad_check`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import dsp
from .autograd import BatchNorm2d, Conv2d, Linear, Tensor, grad_check, ops
from .losses import mel_loss, time_domain_loss
from .model import Autovocoder, ModelConfig

OP_THRESHOLD = 1e-4
PIPELINE_THRESHOLD = 1e-3
EPS = 1e-6
# Gradients much smaller than this are dominated by rounding noise (~1e-9) in
# the full model and are judged on absolute error. Larger steps than EPS start
# crossing relu/abs kinks.
MODEL_FLOOR = 1e-5
# Even EPS can straddle a kink; a failing coordinate is retried at EPS/10, EPS/100.
REFINE = 2


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err)) and self.max_rel_err < self.threshold


@contextlib.contextmanager
def corrupt_backward(op_name: str, factor: float = 1.5) -> Iterator[None]:
    """Test hook: scale every gradient produced by ``ops.<op_name>``."""
    orig = getattr(ops, op_name)

    def wrapped(*args, **kwargs):
        out = orig(*args, **kwargs)
        if out._ctx is not None:
            parents, fn = out._ctx
            out._ctx = (parents, lambda g: tuple(None if p is None else p * factor for p in fn(g)))
        return out

    setattr(ops, op_name, wrapped)
    try:
        yield
    finally:
        setattr(ops, op_name, orig)


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _const(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[Tensor], Tensor], Tensor]]:
    def r(*shape):
        x = rng.standard_normal(shape)
        return x + 0.1 * np.sign(x)  # keep clear of the kinks at 0

    proj = {}

    def p(key, *shape):
        if key not in proj:
            proj[key] = _const(rng.standard_normal(shape))
        return proj[key]

    cases = [
        ("add", lambda t: ops.sum(ops.square(ops.add(t, p("add", 1, 4)))), _t(r(3, 4))),
        ("sub", lambda t: ops.sum(ops.square(ops.sub(p("sub", 3, 4), t))), _t(r(3, 4))),
        ("mul", lambda t: ops.sum(ops.mul(ops.mul(t, t), p("mul", 4))), _t(r(3, 4))),
        ("scale", lambda t: ops.sum(ops.square(ops.scale(t, -2.5))), _t(r(3, 4))),
        ("square", lambda t: ops.sum(ops.mul(ops.square(t), p("sq", 3, 4))), _t(r(3, 4))),
        ("abs", lambda t: ops.sum(ops.mul(ops.abs(t), p("abs", 3, 4))), _t(r(3, 4))),
        ("log", lambda t: ops.sum(ops.log(ops.add(ops.square(t), 0.5))), _t(r(3, 4))),
        ("clamp_min", lambda t: ops.sum(ops.mul(ops.clamp_min(t, 0.05), p("cl", 3, 4))), _t(r(3, 4))),
        ("relu", lambda t: ops.sum(ops.mul(ops.relu(t), p("relu", 3, 4))), _t(r(3, 4))),
        ("leaky_relu", lambda t: ops.sum(ops.mul(ops.leaky_relu(t, 0.1), p("lrelu", 3, 4))), _t(r(3, 4))),
        ("sum", lambda t: ops.sum(ops.square(ops.sum(t, axis=0))), _t(r(3, 4))),
        ("mean", lambda t: ops.sum(ops.square(ops.mean(t, axis=1))), _t(r(3, 4))),
        ("reshape", lambda t: ops.sum(ops.mul(ops.reshape(t, (4, 3)), p("rs", 4, 3))), _t(r(3, 4))),
        ("transpose", lambda t: ops.sum(ops.mul(ops.transpose(t, (1, 0)), p("tr", 4, 3))), _t(r(3, 4))),
        ("getitem", lambda t: ops.sum(ops.square(ops.getitem(t, (slice(1, None), slice(None, None, 2))))),
         _t(r(3, 4))),
        ("concat", lambda t: ops.sum(ops.mul(ops.concat([t, ops.square(t)], axis=1), p("cat", 3, 8))),
         _t(r(3, 4))),
        ("pad_last", lambda t: ops.sum(ops.mul(ops.pad_last(t, 3, 2, "reflect"), p("pad", 2, 12))),
         _t(r(2, 7))),
        ("gather_last", lambda t: ops.sum(ops.square(ops.gather_last(t, np.array([0, 2, 2, 5, 1])))),
         _t(r(2, 6))),
        ("frame", lambda t: ops.sum(ops.mul(ops.frame(t, 4, 2), p("fr", 2, 4, 4))), _t(r(2, 10))),
        ("overlap_add", lambda t: ops.sum(ops.square(ops.overlap_add(t, 3))), _t(r(2, 5, 8))),
        ("rdft", lambda t: ops.sum(ops.mul(ops.rdft(t), p("rdft", 3, 2, 5))), _t(r(3, 8))),
        ("irdft", lambda t: ops.sum(ops.mul(ops.irdft(t, 8), p("irdft", 3, 8))), _t(r(3, 2, 5))),
        ("matmul", lambda t: ops.sum(ops.square(ops.matmul(t, p("mm", 4, 2)))), _t(r(3, 4))),
        ("project", lambda t: ops.sum(ops.square(ops.project(p("pj", 2, 3).data, t))), _t(r(3, 5))),
        ("avg_pool1d", lambda t: ops.sum(ops.square(ops.avg_pool1d(t, 4, 2, 2))), _t(r(2, 13))),
        ("dropout", lambda t: ops.sum(ops.square(ops.dropout(t, 0.3, np.random.default_rng(9), True))),
         _t(r(3, 4))),
        ("complex_to_stack", lambda t: ops.sum(ops.mul(ops.complex_to_stack(t), p("c2s", 4, 3, 5))),
         _t(r(2, 3, 5))),
        ("stack_to_complex:cartesian",
         lambda t: ops.sum(ops.mul(ops.stack_to_complex(t, "cartesian"), p("s2c", 2, 3, 5))), _t(r(2, 3, 5))),
        ("stack_to_complex:polar",
         lambda t: ops.sum(ops.mul(ops.stack_to_complex(t, "polar"), p("s2c", 2, 3, 5))), _t(r(2, 3, 5))),
        ("stack_to_complex:mean4",
         lambda t: ops.sum(ops.mul(ops.stack_to_complex(t, "mean4"), p("s2c", 2, 3, 5))), _t(r(4, 3, 5))),
        ("magnitude", lambda t: ops.sum(ops.mul(ops.magnitude(t), p("mag", 3, 5))), _t(r(2, 3, 5))),
    ]

    lin = Linear(4, 3, rng).astype(np.float64)
    x_lin = _t(r(2, 4))
    f_lin = lambda _: ops.sum(ops.mul(lin(x_lin), p("lin", 2, 3)))  # noqa: E731
    cases += [("linear:x", f_lin, x_lin), ("linear:weight", f_lin, lin.weight), ("linear:bias", f_lin, lin.bias)]

    for stride in ((1, 1), (2, 3)):
        conv = Conv2d(2, 3, (3, 3), rng, stride=stride).astype(np.float64)
        conv.bias.data = rng.standard_normal(3)
        x_conv = _t(r(2, 2, 5, 7))
        shape = conv(x_conv).shape
        pc = _const(rng.standard_normal(shape))
        f_conv = lambda _, c=conv, x=x_conv, q=pc: ops.sum(ops.mul(c(x), q))  # noqa: E731
        tag = f"conv2d{stride[0]}x{stride[1]}"
        cases += [(f"{tag}:x", f_conv, x_conv), (f"{tag}:weight", f_conv, conv.weight),
                  (f"{tag}:bias", f_conv, conv.bias)]

    for training in (True, False):
        bn = BatchNorm2d(2).astype(np.float64)
        bn.gamma.data = rng.standard_normal(2) + 1.0
        bn.beta.data = rng.standard_normal(2)
        bn.running_mean[:] = rng.standard_normal(2)
        bn.running_var[:] = rng.uniform(0.5, 2.0, 2)
        bn.train(training)
        x_bn = _t(r(2, 2, 3, 4))
        pb = _const(rng.standard_normal((2, 2, 3, 4)))
        f_bn = lambda _, b=bn, x=x_bn, q=pb: ops.sum(ops.mul(b(x), q))  # noqa: E731
        tag = "batchnorm2d:" + ("train" if training else "eval")
        cases += [(f"{tag}:x", f_bn, x_bn), (f"{tag}:gamma", f_bn, bn.gamma), (f"{tag}:beta", f_bn, bn.beta)]
    return cases


def small_config(head: str = "cartesian") -> ModelConfig:
    return ModelConfig(stft=dsp.StftConfig(window_size=32, hop=8), representation_size=8,
                       head=head, embedding_dropout=0.0, seed=0)


def pipeline_checks(head: str = "cartesian", n_frames: int = 4, max_checks: int = 6,
                    seed: int = 0) -> list[CheckResult]:
    """Time + mel loss through encode and decode, differenced w.r.t. sampled coordinates.

    Every parameter tensor gets ``max_checks`` seeded coordinates, plus the
    input waveform itself.
    """
    cfg = small_config(head)
    model = Autovocoder(cfg).astype(np.float64)
    model.train()
    rng = np.random.default_rng(seed)
    length = cfg.stft.default_length(n_frames)
    x = _t(0.5 * rng.standard_normal((2, length)))
    target = _const(0.5 * rng.standard_normal((2, length)))
    fb = dsp.mel_filterbank(sample_rate=8000, n_fft=cfg.stft.window_size, n_mels=6)

    def f(_):
        y = model(x, length)
        return ops.add(time_domain_loss(y, target), mel_loss(y, target, fb, cfg.stft))

    out = [CheckResult(f"pipeline[{head}]:input", grad_check(f, x, EPS, max_checks, seed, MODEL_FLOOR, REFINE, PIPELINE_THRESHOLD), PIPELINE_THRESHOLD)]
    for name, prm in model.named_parameters():
        err = grad_check(f, prm, EPS, max_checks, seed, MODEL_FLOOR, REFINE, PIPELINE_THRESHOLD)
        out.append(CheckResult(f"pipeline[{head}]:{name}", err, PIPELINE_THRESHOLD))
    return out


def decoder_check(n_frames: int = 4, max_checks: int = 6, seed: int = 0) -> list[CheckResult]:
    """Time-domain loss w.r.t. decoder parameters for a ``n_frames`` latent."""
    cfg = small_config()
    model = Autovocoder(cfg).astype(np.float64)
    model.train()
    rng = np.random.default_rng(seed + 1)
    z = _const(rng.standard_normal((1, n_frames, cfg.representation_size)))
    length = cfg.stft.default_length(n_frames)
    target = _const(0.5 * rng.standard_normal((1, length)))
    f = lambda _: time_domain_loss(model.decoder(z, length), target)  # noqa: E731
    return [CheckResult(f"decoder:{name}", grad_check(f, prm, EPS, max_checks, seed, MODEL_FLOOR, REFINE, PIPELINE_THRESHOLD), PIPELINE_THRESHOLD)
            for name, prm in model.decoder.named_parameters()]


def run_grad_suite(fault: str | None = None, seed: int = 0, heads=("cartesian", "polar", "mean4"),
                   max_checks: int = 6) -> list[CheckResult]:
    """All per-op checks, then the decoder and pipeline checks.

    ``fault`` names an op in :mod:`autovocoder.autograd.ops` whose backward is
    corrupted for the duration of the run.
    """
    ctx = corrupt_backward(fault) if fault else contextlib.nullcontext()
    with ctx:
        rng = np.random.default_rng(seed)
        results = [CheckResult(name, grad_check(f, x, EPS), OP_THRESHOLD)
                   for name, f, x in _op_cases(rng)]
        results += decoder_check(max_checks=max_checks, seed=seed)
        for head in heads:
            results += pipeline_checks(head, max_checks=max_checks, seed=seed)
    return results


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {r.max_rel_err:.3e}  < {r.threshold:.0e}  {'ok' if r.passed else 'FAIL'}"
             for r in results]
    n_bad = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_bad}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"
