import json
import math

import numpy as np
import pytest

import aib.tensor as T
from aib.exceptions import ConfigError, DivergenceError, InputError
from aib.model import AibModel
from aib.tensor import Parameter, Tape, backward
from aib.training import (
    LossBreakdown,
    OptimState,
    check_finite,
    compute_loss,
    evaluate,
    loss_terms,
    lr_schedule,
    sgd_step,
    train,
)
from aib.variational import NoiseSource

from conftest import TOY_TRAIN_KW, toy_model_config


def small_model(seed=0, **over):
    kw = dict(latent_dim=16, n_att_samples=2, n_z_samples=3)
    kw.update(over)
    return AibModel(toy_model_config(**kw), seed=seed)


def test_lr_schedule_halves_every_25_epochs():
    assert lr_schedule(0, 0.1) == 0.1
    assert lr_schedule(24, 0.1) == 0.1
    assert lr_schedule(25, 0.1) == 0.05
    assert lr_schedule(49, 0.1) == 0.05
    assert lr_schedule(50, 0.1) == 0.025
    with pytest.raises(InputError):
        lr_schedule(-1, 0.1)


def test_sgd_step_matches_manual_reference():
    p = Parameter(np.array([1.0, -2.0]), name="w", decay=True)
    state = OptimState(lr=0.1, momentum=0.9, weight_decay=0.01)
    g1 = np.array([0.5, 0.5])
    p.grad = g1.copy()
    sgd_step([p], state)
    v1 = g1 + 0.01 * np.array([1.0, -2.0])
    x1 = np.array([1.0, -2.0]) - 0.1 * v1
    assert np.allclose(p.data, x1)
    assert p.grad is None  # consumed
    g2 = np.array([-1.0, 0.25])
    p.grad = g2.copy()
    sgd_step([p], state)
    v2 = 0.9 * v1 + (g2 + 0.01 * x1)
    assert np.allclose(p.data, x1 - 0.1 * v2)


def test_sgd_step_skips_decay_for_flagged_params():
    p = Parameter(np.array([4.0]), name="anchors", decay=False)
    p.grad = np.zeros(1)
    sgd_step([p], OptimState(lr=0.5, momentum=0.0, weight_decay=1.0))
    assert p.data[0] == 4.0  # zero grad and no decay: unchanged


def test_sgd_step_leaves_gradless_params_alone():
    p = Parameter(np.array([1.0]), name="w")
    sgd_step([p], OptimState(lr=0.5))
    assert p.data[0] == 1.0


def test_loss_terms_recompose(micro_sets):
    tr, _ = micro_sets
    model = small_model()
    xb, yb = tr.batch(np.arange(16)), tr.labels[:16]
    terms = loss_terms(model, xb, yb, NoiseSource(0), mode="stochastic")
    bd = terms.breakdown()
    recomposed = (bd.nll + model.config.beta * bd.kl
                  + model.config.lambda_q * bd.quant
                  + model.config.lambda_c * bd.commit)
    assert abs(bd.total - recomposed) <= 1e-12
    assert bd.kl >= 0 and bd.quant >= 0 and bd.commit >= 0


def test_loss_terms_mean_mode(micro_sets):
    tr, _ = micro_sets
    model = small_model()
    xb, yb = tr.batch(np.arange(8)), tr.labels[:8]
    t1 = loss_terms(model, xb, yb, None, mode="mean")
    t2 = loss_terms(model, xb, yb, None, mode="mean")
    assert float(t1.total.data) == float(t2.total.data)


def test_ce_objective_requires_zero_coefficients(micro_sets):
    tr, _ = micro_sets
    model = small_model()  # default beta/lambdas are nonzero
    xb, yb = tr.batch(np.arange(4)), tr.labels[:4]
    with pytest.raises(ConfigError):
        loss_terms(model, xb, yb, NoiseSource(0), objective="ce")
    with pytest.raises(ConfigError):
        loss_terms(model, xb, yb, NoiseSource(0), objective="nonsense")


def test_ce_objective_equals_nll(micro_sets):
    tr, _ = micro_sets
    model = small_model(beta=0.0, lambda_q=0.0, lambda_c=0.0)
    xb, yb = tr.batch(np.arange(8)), tr.labels[:8]
    terms = loss_terms(model, xb, yb, NoiseSource(0), objective="ce")
    assert float(terms.total.data) == float(terms.nll.data)


def test_check_finite_names_first_bad_term():
    good = dict(nll=1.0, kl=2.0, quant=0.1, commit=0.1, total=3.0)
    check_finite(LossBreakdown(**good), 0, 0)
    bad = dict(good, kl=float("inf"), total=float("nan"))
    with pytest.raises(DivergenceError) as exc:
        check_finite(LossBreakdown(**bad), 3, 17)
    assert exc.value.term == "kl"  # kl precedes total in the fixed order
    assert exc.value.epoch == 3 and exc.value.step == 17
    with pytest.raises(DivergenceError) as exc:
        check_finite(LossBreakdown(**dict(good, total=float("nan"))), 0, 1)
    assert exc.value.term == "total"


def test_gradients_cleared_between_steps(micro_sets):
    tr, _ = micro_sets
    model = small_model()
    xb, yb = tr.batch(np.arange(8)), tr.labels[:8]
    state = OptimState(lr=0.01)
    for _ in range(2):
        terms, _ = compute_loss(model, xb, yb, NoiseSource(0))
        T.backward(terms.total)
        sgd_step(model.parameters(), state)
    assert all(p.grad is None for p in model.parameters())


def test_evaluate_mean_mode(micro_sets):
    tr, te = micro_sets
    model = small_model()
    res = evaluate(model, te, mode="mean")
    assert 0.0 <= res.accuracy <= 1.0
    assert res.n == len(te.labels)
    bd = res.breakdown
    recomposed = (bd.nll + model.config.beta * bd.kl
                  + model.config.lambda_q * bd.quant
                  + model.config.lambda_c * bd.commit)
    assert abs(bd.total - recomposed) <= 1e-12


def test_evaluate_batch_splitting_is_weighted(micro_sets):
    tr, te = micro_sets
    model = small_model()
    whole = evaluate(model, te, mode="mean", batch_size=256)
    split = evaluate(model, te, mode="mean", batch_size=5)
    assert whole.accuracy == split.accuracy
    assert np.isclose(whole.breakdown.nll, split.breakdown.nll, rtol=1e-12)


def test_evaluate_stochastic_needs_noise(micro_sets):
    _, te = micro_sets
    model = small_model()
    from aib.exceptions import ContractError

    with pytest.raises(ContractError):
        evaluate(model, te, mode="stochastic", noise=None)
    res = evaluate(model, te, mode="stochastic", noise=NoiseSource(0))
    assert res.n == len(te.labels)


def test_train_writes_metrics_and_checkpoints(micro_sets, tmp_path):
    tr, te = micro_sets
    model = small_model()
    res = train(model, tr, te, epochs=2, out_dir=str(tmp_path), seed=0,
                batch_size=32, base_lr=0.01, augment_data=False)
    n_batches = math.ceil(len(tr.labels) / 32)
    assert res.steps == 2 * n_batches
    lines = [json.loads(l) for l in open(res.metrics_path)]
    # one line per step plus one summary per epoch
    assert len(lines) == res.steps + 2
    summaries = [l for l in lines if "test_acc" in l]
    assert len(summaries) == 2
    for line in lines:
        recomposed = (line["nll"] + model.config.beta * line["kl"]
                      + model.config.lambda_q * line["quant"]
                      + model.config.lambda_c * line["commit"])
        assert abs(line["total"] - recomposed) <= 1e-12
        assert set(line) >= {"epoch", "step", "nll", "kl", "quant", "commit",
                             "total", "lr", "train_acc"}
    import os
    assert os.path.exists(res.checkpoint_path)
    assert os.path.exists(res.best_checkpoint_path)
    assert res.best_acc >= res.final_acc or res.best_acc == res.final_acc


def test_train_is_deterministic(micro_sets, tmp_path):
    tr, te = micro_sets
    out1, out2 = tmp_path / "a", tmp_path / "b"
    r1 = train(AibModel(toy_model_config(latent_dim=16, n_att_samples=2,
                                         n_z_samples=3), seed=0),
               tr, te, epochs=1, out_dir=str(out1), seed=0,
               batch_size=32, base_lr=0.01)
    r2 = train(AibModel(toy_model_config(latent_dim=16, n_att_samples=2,
                                         n_z_samples=3), seed=0),
               tr, te, epochs=1, out_dir=str(out2), seed=0,
               batch_size=32, base_lr=0.01)
    assert open(r1.metrics_path, "rb").read() == open(r2.metrics_path, "rb").read()
    assert open(r1.checkpoint_path, "rb").read() == open(r2.checkpoint_path, "rb").read()


def test_train_divergence_exit(micro_sets, tmp_path):
    tr, te = micro_sets
    # an absurd beta overflows the total on the very first step
    model = small_model(beta=1e308)
    with np.errstate(over="ignore"), pytest.raises(DivergenceError) as exc:
        train(model, tr, te, epochs=1, out_dir=str(tmp_path), seed=0,
              batch_size=32, base_lr=0.01)
    assert exc.value.term == "total"


def test_train_validates_arguments(micro_sets, tmp_path):
    tr, te = micro_sets
    with pytest.raises(ConfigError):
        train(small_model(), tr, te, epochs=0, out_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        train(small_model(), tr, te, epochs=1, batch_size=0, out_dir=str(tmp_path))
