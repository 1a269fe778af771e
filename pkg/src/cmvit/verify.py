"""Finite-difference gradient verification of every layer and every full model (float64)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import functional as F
from . import nn
from .functional import cross_entropy
from .models import ARCHS, build_model, gradcheck_config
from .spectral import fft2_magnitude
from .tensor import Tensor, bmm, concat, grad_check, grad_check_params, pad2d, precision, reduce

LAYER_STEP = 1e-3
LAYER_TOL = 1e-5
MODEL_STEP = 1e-5
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: rel err {self.error:.2e} (tol {self.tolerance:.0e}, {self.seconds:.1f}s)"


def _projected(fn: Callable[[Tensor], Tensor], shape, rng) -> Callable[[Tensor], Tensor]:
    """Scalarize ``fn`` by a fixed random projection so every output coordinate matters."""
    weights = Tensor(rng.normal(size=shape))
    return lambda t: (fn(t) * weights).sum()


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def layer_cases(seed: int) -> Iterator[tuple[str, Callable[[], float]]]:
    """(name, thunk) pairs; each thunk returns the worst relative error for that layer.

    Inputs to curved kernels (norms, attention, |FFT|) are scaled so the
    central-difference truncation error at step 1e-3 stays well under tolerance.
    """
    rng = np.random.default_rng(seed)

    def check_module(module, x, out_shape):
        fn = _projected(module, out_shape, rng)
        err_x = grad_check(fn, x, LAYER_STEP)
        err_p = grad_check_params(lambda: fn(x), module.parameters(), LAYER_STEP) if module.parameters() else 0.0
        return max(err_x, err_p)

    def t(shape, scale=1.0):
        return Tensor(scale * rng.normal(size=shape))

    a, b = t((3, 4)), t((4, 2))
    yield "matmul", lambda: max(
        grad_check(_projected(lambda u: u @ b, (3, 2), rng), a, LAYER_STEP),
        grad_check(_projected(lambda u: a @ u, (3, 2), rng), b, LAYER_STEP),
    )
    q, k = t((2, 3, 4, 5)), t((2, 3, 5, 4))
    yield "bmm", lambda: grad_check(_projected(lambda u: bmm(u, k), (2, 3, 4, 4), rng), q, LAYER_STEP)
    e1, e2, bias = t((3, 4)), t((3, 4)), t((4,))
    yield "elementwise", lambda: max(
        grad_check(_projected(lambda u: u * e2 + u - e1, (3, 4), rng), e1, LAYER_STEP),
        grad_check(_projected(lambda u: e1 * u + e2, (3, 4), rng), bias, LAYER_STEP),
    )
    r = t((3, 4, 5))
    yield "reduce", lambda: max(
        grad_check(_projected(lambda u: reduce("mean", u, 1), (3, 5), rng), r, LAYER_STEP),
        grad_check(lambda u: reduce("sum", u, "all") * 0.5, r, LAYER_STEP),
    )
    yield "shape ops", lambda: grad_check(
        _projected(lambda u: concat([pad2d(u, 1, 0, 0, 2), pad2d(u, 0, 1, 2, 0)], 1).transpose(0, 2, 1, 3).reshape(3, -1), (3, 5 * 4 * 7), rng),
        t((3, 2, 4, 5)), LAYER_STEP,
    )
    rl = Tensor(_away_from_zero(rng, (4, 6)))
    yield "relu", lambda: grad_check(_projected(nn.relu, (4, 6), rng), rl, LAYER_STEP)
    sm = t((3, 5))
    yield "softmax", lambda: max(
        grad_check(_projected(lambda u: F.softmax(u, -1), (3, 5), rng), sm, LAYER_STEP),
        grad_check(_projected(lambda u: F.log_softmax(u, 0), (3, 5), rng), sm, LAYER_STEP),
    )
    labels = rng.integers(0, 5, size=3)
    yield "cross_entropy", lambda: grad_check(lambda u: cross_entropy(u, labels), sm, LAYER_STEP)

    yield "linear", lambda: check_module(nn.Linear(5, 3, rng=rng), t((4, 5)), (4, 3))
    yield "conv2d", lambda: check_module(nn.Conv2d(3, 4, 3, padding=1, rng=rng), t((2, 3, 5, 5)), (2, 4, 5, 5))
    yield "conv2d strided", lambda: check_module(nn.Conv2d(2, 3, 3, stride=2, rng=rng), t((2, 2, 7, 7)), (2, 3, 3, 3))
    yield "conv2d grouped", lambda: check_module(nn.Conv2d(4, 6, 3, padding=1, groups=2, rng=rng), t((2, 4, 4, 4)), (2, 6, 4, 4))
    yield "depthwise separable", lambda: check_module(nn.DepthwiseSeparableConv(3, 5, rng=rng), t((2, 3, 4, 4)), (2, 5, 4, 4))
    yield "layer norm", lambda: check_module(nn.LayerNorm(8), t((3, 8), 3.0), (3, 8))
    yield "channel layer norm", lambda: check_module(nn.ChannelLayerNorm(8), t((2, 8, 3, 3), 3.0), (2, 8, 3, 3))

    def bn_check(training):
        bn = nn.BatchNorm(3)
        bn.running_mean[:] = rng.normal(size=3)
        bn.running_var[:] = rng.uniform(0.5, 2.0, size=3)
        bn.train(training)
        return check_module(bn, t((4, 3, 3, 3)), (4, 3, 3, 3))

    yield "batch norm (train)", lambda: bn_check(True)
    yield "batch norm (eval)", lambda: bn_check(False)
    yield "attention", lambda: check_module(nn.MultiHeadAttention(8, 2, rng=rng), t((2, 4, 8), 0.5), (2, 4, 8))

    def ffn_check():
        ffn = nn.FeedForward(4, 8, rng=rng)
        x = t((3, 4))
        # resample until no hidden pre-activation sits within reach of the ReLU kink
        while np.abs(x.data @ ffn.fc1.weight.data.T).min() < 0.05:
            x = t((3, 4))
        return check_module(ffn, x, (3, 4))

    yield "ffn", ffn_check
    yield "patch embed", lambda: check_module(nn.PatchEmbed(3, 6, 4, rng=rng), t((2, 3, 8, 8)), (2, 4, 6))

    def positional():
        pe = nn.PositionalEncoding(4, 6)
        pe.table.data[...] = rng.normal(size=(4, 6))
        return check_module(pe, t((2, 4, 6)), (2, 4, 6))

    yield "positional", positional
    yield "avg pool", lambda: grad_check(_projected(lambda u: F.avg_pool(u, (2, 1)), (2, 3, 2, 1), rng), t((2, 3, 4, 6)), LAYER_STEP)
    yield "fft magnitude", lambda: grad_check(_projected(fft2_magnitude, (2, 4, 4), rng), t((2, 4, 4), 3.0), LAYER_STEP)
    yield "fft magnitude padded", lambda: grad_check(_projected(fft2_magnitude, (3, 5), rng), t((3, 5), 3.0), LAYER_STEP)


def model_case(arch: str, seed: int = 0, max_coords: int = 6) -> float:
    """Worst relative error over input and (sampled) parameter coordinates of the full loss."""
    with precision("float64"):
        cfg = gradcheck_config(arch)
        model = build_model(cfg, seed)
        rng = np.random.default_rng(seed + 100)
        # 8-bit quantized pixels keep the LBP branch constant under the perturbation
        x = Tensor(rng.integers(0, 256, size=(2, 3, cfg.image_size, cfg.image_size)) / 255.0)
        labels = np.array([0, 1])
        err_x = grad_check(lambda u: cross_entropy(model.logits(u), labels), x, MODEL_STEP)
        err_p = grad_check_params(
            lambda: cross_entropy(model.logits(x), labels), model.parameters(), MODEL_STEP,
            max_coords=max_coords, seed=seed,
        )
    return max(err_x, err_p)


def run_suite(seeds=(0,), include_models: bool = True) -> list[CheckResult]:
    results = []
    with precision("float64"):
        for seed in seeds:
            for name, thunk in layer_cases(seed):
                t0 = time.perf_counter()
                err = thunk()
                results.append(CheckResult(f"{name} [seed {seed}]", err, LAYER_TOL, time.perf_counter() - t0))
        if include_models:
            for arch in ARCHS:
                t0 = time.perf_counter()
                err = model_case(arch)
                results.append(CheckResult(f"model {arch}", err, MODEL_TOL, time.perf_counter() - t0))
    return results
