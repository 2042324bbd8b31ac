"""Monte-Carlo loss assembly, SGD with momentum, and the training loop.

The objective is estimated by averaging over n_att_samples attention
draws and n_z_samples latent draws per attention draw: the likelihood
term over the full draw grid, the KL / quantization / commitment terms
over the attention draws. All reductions are means over the batch.

``objective="ce"`` trains on the likelihood term alone (all loss
coefficients must be zero); it exists so a bottleneck run with zeroed
coefficients can be compared bit-for-bit against plain cross-entropy
training of the identical masked classifier.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_arrays
from .exceptions import ConfigError, DivergenceError, InputError
from . import tensor as T
from .model import AibModel, ForwardResult
from .quantizer import commitment_loss, quantization_loss
from .tensor import Tape, Tensor
from .variational import NoiseSource, kl_to_standard_normal


@dataclass
class LossBreakdown:
    nll: float
    kl: float
    quant: float
    commit: float
    total: float

    def as_dict(self) -> dict:
        return {
            "nll": self.nll,
            "kl": self.kl,
            "quant": self.quant,
            "commit": self.commit,
            "total": self.total,
        }


@dataclass
class LossTerms:
    """Tape-connected loss tensors; ``total`` is the backward root."""

    nll: Tensor
    kl: Tensor
    quant: Tensor
    commit: Tensor
    total: Tensor
    result: ForwardResult

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(
            nll=float(self.nll.data),
            kl=float(self.kl.data),
            quant=float(self.quant.data),
            commit=float(self.commit.data),
            total=float(self.total.data),
        )


def _mean_of(tensors: list) -> Tensor:
    acc = tensors[0]
    for t in tensors[1:]:
        acc = T.add(acc, t)
    return T.mul(acc, 1.0 / len(tensors))


def loss_terms(
    model: AibModel,
    x,
    y,
    noise: NoiseSource | None,
    mode: str = "stochastic",
    objective: str = "full",
    frozen_st: list | None = None,
) -> LossTerms:
    """Forward pass plus every term of the objective.

    Works with or without an active tape; callers that need gradients
    open the tape themselves (see ``compute_loss``).
    """
    cfg = model.config
    if objective not in ("full", "ce"):
        raise ConfigError(f"unknown objective {objective!r}")
    if objective == "ce" and (cfg.beta or cfg.lambda_q or cfg.lambda_c):
        raise ConfigError(
            "objective 'ce' requires beta = lambda_q = lambda_c = 0 so logged "
            "totals still recompose"
        )
    y = np.asarray(y)
    res = model.forward(x, noise, mode=mode, frozen_st=frozen_st)
    n_batch = y.shape[0]

    nll = _mean_of(
        [T.softmax_cross_entropy(lg, y) for br in res.branches for lg in br.logits]
    )
    # kl_to_standard_normal sums over batch and latent dims; normalize to a
    # batch mean, then average over attention draws
    kl = T.mul(
        _mean_of([kl_to_standard_normal(br.z_dist) for br in res.branches]),
        1.0 / n_batch,
    )

    quant_parts = []
    commit_parts = []
    for br in res.branches:
        if br.frozen is not None:
            if br.frozen.assignment is None:
                continue
            gathered = T.reshape(
                T.take(model.anchors.values, br.frozen.assignment.reshape(-1)),
                br.frozen.a_const.shape,
            )
            quant_parts.append(
                T.mean_all(T.square(T.sub(Tensor(br.frozen.a_const), gathered)))
            )
            commit_parts.append(
                T.mean_all(T.square(T.sub(br.a, Tensor(br.frozen.aq_const))))
            )
        elif br.maps is not None:
            quant_parts.append(quantization_loss(br.a, br.maps))
            commit_parts.append(commitment_loss(br.a, br.maps))
    zero = Tensor(np.asarray(0.0, dtype=cfg.dtype))
    quant = _mean_of(quant_parts) if quant_parts else zero
    commit = _mean_of(commit_parts) if commit_parts else zero

    if objective == "ce":
        total = nll
    else:
        total = T.add(
            T.add(T.add(nll, T.mul(kl, cfg.beta)), T.mul(quant, cfg.lambda_q)),
            T.mul(commit, cfg.lambda_c),
        )
    return LossTerms(nll=nll, kl=kl, quant=quant, commit=commit, total=total, result=res)


def compute_loss(
    model: AibModel,
    x,
    y,
    noise: NoiseSource | None,
    mode: str = "stochastic",
    objective: str = "full",
) -> tuple:
    """Record the loss on a fresh tape; returns (terms, tape)."""
    with Tape() as tape:
        terms = loss_terms(model, x, y, noise, mode=mode, objective=objective)
    return terms, tape


def check_finite(bd: LossBreakdown, epoch: int, step: int) -> None:
    for name in ("nll", "kl", "quant", "commit", "total"):
        if not math.isfinite(getattr(bd, name)):
            raise DivergenceError(name, epoch, step)


@dataclass
class OptimState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: dict = field(default_factory=dict)


def sgd_step(params, state: OptimState) -> None:
    """v <- momentum*v + (grad + wd*param); param <- param - lr*v.

    Parameters flagged decay=False (anchors, scale-producing biases) skip
    weight decay. Parameters without gradients are left untouched.
    """
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        if state.weight_decay and p.decay:
            g = g + state.weight_decay * p.data
        buf = state.buffers.get(p.name)
        buf = g.copy() if buf is None else state.momentum * buf + g
        state.buffers[p.name] = buf
        p.data = p.data - state.lr * buf
        p.grad = None


def lr_schedule(epoch: int, base_lr: float) -> float:
    """base_lr halved every 25 epochs."""
    if epoch < 0:
        raise InputError("epoch must be >= 0")
    return base_lr * 0.5 ** (epoch // 25)


@dataclass
class EvalResult:
    accuracy: float
    breakdown: LossBreakdown
    n: int


def evaluate(
    model: AibModel,
    ds,
    mode: str = "mean",
    noise: NoiseSource | None = None,
    average: str = "prob",
    batch_size: int = 256,
) -> EvalResult:
    """Top-1 accuracy plus example-weighted mean loss terms.

    Predictions argmax the draw-averaged predictive distribution
    (probability averaging by default; ``average="logprob"`` averages log
    probabilities instead). Mean mode is deterministic.
    """
    n = len(ds.labels)
    if n == 0:
        raise InputError("cannot evaluate on an empty dataset")
    correct = 0
    sums = np.zeros(4)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        xb = ds.batch(idx)
        yb = ds.labels[idx]
        terms = loss_terms(model, xb, yb, noise, mode=mode)
        preds = terms.result.predictions(average)
        correct += int((preds == yb).sum())
        bd = terms.breakdown()
        sums += len(idx) * np.array([bd.nll, bd.kl, bd.quant, bd.commit])
    means = sums / n
    cfg = model.config
    total = (
        means[0]
        + cfg.beta * means[1]
        + cfg.lambda_q * means[2]
        + cfg.lambda_c * means[3]
    )
    bd = LossBreakdown(means[0], means[1], means[2], means[3], total)
    return EvalResult(accuracy=correct / n, breakdown=bd, n=n)


@dataclass
class TrainResult:
    best_acc: float
    final_acc: float
    steps: int
    metrics_path: str
    checkpoint_path: str
    best_checkpoint_path: str


def train(
    model: AibModel,
    train_ds,
    test_ds,
    *,
    epochs: int,
    out_dir: str,
    batch_size: int = 128,
    base_lr: float = 0.1,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    seed: int = 0,
    objective: str = "full",
    augment_data: bool = True,
    eval_average: str = "prob",
) -> TrainResult:
    """Shuffled mini-batch SGD, one metrics line per step plus an epoch
    summary carrying test accuracy; saves the final and the best-accuracy
    checkpoints. Deterministic given the seed.
    """
    from .data import augment

    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    best_path = os.path.join(out_dir, "checkpoint_best.bin")

    noise = NoiseSource(seed)
    shuffle_gen = noise.generator("shuffle")
    augment_gen = noise.generator("augment")
    state = OptimState(lr=base_lr, momentum=momentum, weight_decay=weight_decay)
    cfg = model.config
    n_train = len(train_ds.labels)
    best_acc = -1.0
    final_acc = 0.0
    global_step = 0

    with open(metrics_path, "w") as log:
        for epoch in range(epochs):
            state.lr = lr_schedule(epoch, base_lr)
            perm = shuffle_gen.permutation(n_train)
            term_sums = np.zeros(4)
            correct = 0
            for start in range(0, n_train, batch_size):
                idx = perm[start : start + batch_size]
                raw = train_ds.images[idx]
                if augment_data:
                    raw = augment(raw, augment_gen)
                xb = train_ds.standardize(raw)
                yb = train_ds.labels[idx]

                terms, _ = compute_loss(
                    model, xb, yb, noise, mode="stochastic", objective=objective
                )
                bd = terms.breakdown()
                check_finite(bd, epoch, global_step)
                T.backward(terms.total)
                sgd_step(model.parameters(), state)

                preds = terms.result.predictions(eval_average)
                batch_correct = int((preds == yb).sum())
                correct += batch_correct
                term_sums += len(idx) * np.array(
                    [bd.nll, bd.kl, bd.quant, bd.commit]
                )
                line = {
                    "epoch": epoch,
                    "step": global_step,
                    "nll": bd.nll,
                    "kl": bd.kl,
                    "quant": bd.quant,
                    "commit": bd.commit,
                    "total": bd.total,
                    "lr": state.lr,
                    "train_acc": batch_correct / len(idx),
                }
                log.write(json.dumps(line) + "\n")
                global_step += 1

            test = evaluate(model, test_ds, mode="mean", average=eval_average)
            final_acc = test.accuracy
            means = term_sums / n_train
            epoch_total = (
                means[0]
                + cfg.beta * means[1]
                + cfg.lambda_q * means[2]
                + cfg.lambda_c * means[3]
            )
            line = {
                "epoch": epoch,
                "step": global_step - 1,
                "nll": means[0],
                "kl": means[1],
                "quant": means[2],
                "commit": means[3],
                "total": epoch_total,
                "lr": state.lr,
                "train_acc": correct / n_train,
                "test_acc": test.accuracy,
            }
            log.write(json.dumps(line) + "\n")
            if test.accuracy > best_acc:
                best_acc = test.accuracy
                save_arrays(best_path, model.state_arrays())

    save_arrays(ckpt_path, model.state_arrays())
    return TrainResult(
        best_acc=best_acc,
        final_acc=final_acc,
        steps=global_step,
        metrics_path=metrics_path,
        checkpoint_path=ckpt_path,
        best_checkpoint_path=best_path,
    )
