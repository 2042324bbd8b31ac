"""Finite-difference verification of reverse-mode gradients.

Central differences with step 1e-5 at double precision. A check passes
when every element satisfies

    |analytic - numeric| <= rtol * max(|analytic|, |numeric|, floor)

with rtol 1e-4 and floor 1e-3 (an absolute floor of 1e-7) for single
operations, and rtol 1e-3 for end-to-end composites.

Loss callables are evaluated without an active tape during the numeric
pass, so nothing is recorded; the analytic pass opens its own tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tape, backward

DEFAULT_STEP = 1e-5
DEFAULT_RTOL = 1e-4
COMPOSITE_RTOL = 1e-3
ERROR_FLOOR = 1e-3


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:<34} {self.max_error:12.3e} {self.tolerance:9.1e} {status}"


def scaled_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case |a-n| relative to max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(ERROR_FLOOR, np.maximum(np.abs(a), np.abs(n)))
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradients(
    loss_fn: Callable[[], float],
    params: Sequence[Parameter],
    step: float = DEFAULT_STEP,
) -> list[np.ndarray]:
    """Central-difference gradients of ``loss_fn`` w.r.t. each parameter.

    ``loss_fn`` takes no arguments and must recompute the loss (a float or
    a scalar Tensor) from the current parameter values each call.
    Parameter data is perturbed in place and restored exactly.
    """

    def value():
        out = loss_fn()
        return float(out.data) if hasattr(out, "data") else float(out)

    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = value()
            flat[i] = orig - step
            lo = value()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def check_gradients(
    name: str,
    loss_fn: Callable[[], "object"],
    params: Sequence[Parameter],
    fd_loss_fn: Callable[[], "object"] | None = None,
    tolerance: float = DEFAULT_RTOL,
    step: float = DEFAULT_STEP,
) -> CheckResult:
    """Compare tape gradients of ``loss_fn`` against finite differences.

    ``loss_fn`` returns a scalar Tensor. ``fd_loss_fn``, when given, is the
    function differenced numerically instead (used for straight-through
    paths, where the numeric target is a surrogate with the quantization
    jump frozen at its forward value).
    """
    for p in params:
        p.zero_grad()
    with Tape():
        root = loss_fn()
    backward(root)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        for p in params
    ]
    for p in params:
        p.zero_grad()

    target = fd_loss_fn if fd_loss_fn is not None else loss_fn
    numeric = numeric_gradients(lambda: float(target().data), params, step)

    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, scaled_error(a, n))
    return CheckResult(name=name, max_error=worst, tolerance=tolerance)


def run_suite(scale: str = "tiny", seed: int = 0) -> list[CheckResult]:
    """Finite-difference suite over every differentiable operation.

    ``tiny`` uses the smallest shapes that still exercise every code path;
    ``small`` enlarges them a notch. Deterministic for a fixed seed.
    """
    from . import tensor as T
    from .model import AibModel, ModelConfig
    from .quantizer import init_anchors, quantization_loss, quantize, straight_through
    from .training import loss_terms
    from .variational import DiagonalGaussian, NoiseSource, kl_to_standard_normal, reparam_sample

    if scale not in ("tiny", "small"):
        raise ValueError(f"unknown gradcheck scale {scale!r}")
    big = scale == "small"
    rng = np.random.default_rng(seed)
    results = []

    def p(name, *shape, scale_=0.5):
        return Parameter(rng.uniform(-scale_, scale_, shape), name=name)

    # conv2d
    x = p("x", 2, 3, 6 if big else 5, 6 if big else 5)
    w = p("w", 4, 3, 3, 3)
    b = p("b", 4)
    results.append(
        check_gradients(
            "conv2d",
            lambda: T.sum_all(T.conv2d(x, w, b, stride=1, padding=1)),
            [x, w, b],
        )
    )
    results.append(
        check_gradients(
            "conv2d/stride2",
            lambda: T.sum_all(T.square(T.conv2d(x, w, b, stride=2, padding=0))),
            [x, w, b],
        )
    )

    # linear
    xl = p("xl", 3, 5)
    wl = p("wl", 5, 4)
    bl = p("bl", 4)
    results.append(
        check_gradients(
            "linear",
            lambda: T.mean_all(T.square(T.linear(xl, wl, bl))),
            [xl, wl, bl],
        )
    )

    # activations; relu input shifted off 0 so the kink never meets the step
    xa = Parameter(rng.uniform(-2, 2, (4, 7)) + 0.3, name="xa")
    results.append(
        check_gradients("relu", lambda: T.sum_all(T.square(T.relu(xa))), [xa])
    )
    results.append(
        check_gradients("sigmoid", lambda: T.sum_all(T.square(T.sigmoid(xa))), [xa])
    )
    results.append(
        check_gradients("softplus", lambda: T.sum_all(T.square(T.softplus(xa))), [xa])
    )
    xp = Parameter(rng.uniform(0.5, 2.0, (3, 3)), name="xp")
    results.append(check_gradients("log", lambda: T.sum_all(T.log(xp)), [xp]))
    results.append(check_gradients("exp", lambda: T.sum_all(T.exp(xa)), [xa]))

    # reductions and composition
    results.append(
        check_gradients(
            "add-mul-mean",
            lambda: T.mean_all(T.mul(T.add(xa, 0.5), T.sub(xa, 1.5))),
            [xa],
        )
    )
    results.append(
        check_gradients(
            "reshape-sum",
            lambda: T.sum_all(T.square(T.reshape(xa, (7, 4)))),
            [xa],
        )
    )
    xm = Parameter(rng.uniform(-1, 1, (2, 2, 6, 6)), name="xm")
    results.append(
        check_gradients(
            "max_pool2d",
            lambda: T.sum_all(T.square(T.max_pool2d(xm, 2))),
            [xm],
        )
    )
    logits = p("logits", 4, 10, scale_=2.0)
    labels = rng.integers(0, 10, 4)
    results.append(
        check_gradients(
            "softmax_cross_entropy",
            lambda: T.softmax_cross_entropy(logits, labels),
            [logits],
        )
    )

    # reparameterized sampling and KL
    mu = p("mu", 3, 4, scale_=1.5)
    rho = p("rho", 3, 4)
    eps = rng.standard_normal((3, 4))

    def sample_loss():
        dist = DiagonalGaussian(mu, T.add(T.softplus(rho), 1e-6))
        return T.sum_all(T.square(reparam_sample(dist, eps)))

    results.append(check_gradients("reparam_sample", sample_loss, [mu, rho]))

    def kl_loss():
        dist = DiagonalGaussian(mu, T.add(T.softplus(rho), 1e-6))
        return kl_to_standard_normal(dist)

    results.append(check_gradients("kl_to_standard_normal", kl_loss, [mu, rho]))

    # quantizer surrogate: the straight-through jump is frozen by adding the
    # captured forward offset (a_q0 - a0) to a, so numeric differencing sees
    # a smooth function whose derivative matches the straight-through rule
    anchors = init_anchors(7)
    aq_param = p("aq", 2, 1, 4, 4, scale_=0.4)
    head_w = p("head_w", 1, 1, 1, 1)
    head_b = p("head_b", 1)

    def att_map():
        return T.sigmoid(T.conv2d(aq_param, head_w, head_b))

    with Tape():
        a0 = att_map()
        maps0 = quantize(a0, anchors)
    offset = maps0.quantized.data - a0.data
    frozen_assign = maps0.assignment

    def st_loss():
        a = att_map()
        maps = quantize(a, anchors)
        aq = straight_through(a, maps.quantized)
        return T.mean_all(T.square(T.sub(aq, 0.25)))

    def st_surrogate():
        a = att_map()
        shifted = T.add(a, offset)
        return T.mean_all(T.square(T.sub(shifted, 0.25)))

    results.append(
        check_gradients(
            "straight_through",
            st_loss,
            [aq_param, head_w, head_b],
            fd_loss_fn=st_surrogate,
        )
    )

    def quant_loss_fn():
        a = att_map()
        maps = quantize(a, anchors)
        return quantization_loss(a, maps)

    def quant_surrogate():
        # assignment frozen; differenced w.r.t. anchors only
        gathered = T.take(anchors.values, frozen_assign.reshape(-1))
        target = T.Tensor(a0.data.reshape(-1))
        return T.mean_all(T.square(T.sub(target, gathered)))

    results.append(
        check_gradients(
            "quantization_loss",
            quant_loss_fn,
            [anchors.values],
            fd_loss_fn=quant_surrogate,
        )
    )

    # full model loss (composite tolerance); frozen noise via fixed seed
    cfg = ModelConfig(
        num_classes=3,
        in_channels=1,
        height=8 if big else 6,
        width=8 if big else 6,
        latent_dim=5,
        num_anchors=5,
        n_att_samples=2,
        n_z_samples=2,
        backbone_widths=(3,) if not big else (4, 4),
        encoder_widths=(4,),
        beta=0.01,
        lambda_q=0.4,
        lambda_c=0.1,
    )
    model = AibModel(cfg, seed=seed + 1)
    xb = rng.uniform(0, 1, (2, 1, cfg.height, cfg.width))
    yb = rng.integers(0, cfg.num_classes, 2)

    def full_loss(frozen=None):
        noise = NoiseSource(seed + 2)
        terms = loss_terms(model, xb, yb, noise, mode="stochastic", frozen_st=frozen)
        return terms.total

    frozen = model.capture_st_state(xb, NoiseSource(seed + 2))

    results.append(
        check_gradients(
            "full-loss(composite)",
            full_loss,
            model.parameters(),
            fd_loss_fn=lambda: full_loss(frozen=frozen),
            tolerance=COMPOSITE_RTOL,
        )
    )
    return results


def format_table(results: Sequence[CheckResult]) -> str:
    header = f"{'operation':<34} {'max-error':>12} {'tol':>9} status"
    lines = [header, "-" * len(header)]
    lines += [r.line() for r in results]
    return "\n".join(lines)
