import json

import numpy as np
import pytest
import torch
from scipy import stats

from simmaml import maml
from simmaml.errors import ConfigError, FingerprintError, NumericalError
from simmaml.kernels import KernelConfig
from simmaml.maml import (Parser, TrainerConfig, VirtualTask, inner_step, make_virtual_task,
                          meta_objective, step_gradient, train)
from simmaml.neurnet import DTYPE, Seq2SeqConfig, grad
from simmaml.relevance import SamplerConfig, build_index

SMALL = Seq2SeqConfig(hidden=8, encoder_layers=1, dropout=0.0)


def flat(g):
    return torch.cat([v.reshape(-1) for v in g.values()])


def test_alpha_zero_is_identity_and_displacement_is_linear():
    w = {"w": torch.tensor([1.0, -2.0], dtype=DTYPE, requires_grad=True)}
    f = lambda p, _b: (p["w"] ** 2).sum() + p["w"][0] * p["w"][1]
    same, _ = inner_step(f, w, None, 0.0)
    assert torch.equal(same["w"], w["w"])
    d1 = inner_step(f, w, None, 0.05)[0]["w"] - w["w"]
    d2 = inner_step(f, w, None, 0.1)[0]["w"] - w["w"]
    assert torch.allclose(d2, 2 * d1, atol=1e-15)


def _regression(seed):
    rng = np.random.default_rng(seed)
    x_t, x_g = rng.normal(size=(6, 3)), rng.normal(size=(5, 3))
    y_t, y_g = rng.normal(size=6), rng.normal(size=5)
    return (x_t, y_t), (x_g, y_g), rng.normal(size=3)


def _mse(p, batch):
    x, y = (torch.as_tensor(a, dtype=DTYPE) for a in batch)
    return ((x @ p["w"] - y) ** 2).mean()


@pytest.mark.parametrize("seed", range(3))
def test_linear_regression_closed_form(seed):
    bt, bg, w0 = _regression(seed)
    alpha = 0.07
    params = {"w": torch.tensor(w0, dtype=DTYPE, requires_grad=True)}
    total, _, _ = meta_objective(_mse, params, VirtualTask(bt, bg), alpha)
    got = grad(total, params)["w"].numpy()

    (xt, yt), (xg, yg) = bt, bg
    gt = 2 * xt.T @ (xt @ w0 - yt) / len(yt)
    ht = 2 * xt.T @ xt / len(yt)
    w1 = w0 - alpha * gt
    gg = 2 * xg.T @ (xg @ w1 - yg) / len(yg)
    expected = gt + (np.eye(3) - alpha * ht) @ gg
    assert np.abs(got - expected).max() < 1e-12

    # first-order drops exactly the Hessian term
    fo, _, _ = meta_objective(_mse, params, VirtualTask(bt, bg), alpha, first_order=True)
    assert np.abs(grad(fo, params)["w"].numpy() - (gt + gg)).max() < 1e-12


def test_first_order_matches_full_when_inner_loss_linear():
    c = torch.tensor([0.3, -1.2], dtype=DTYPE)

    def loss(p, batch):
        if batch == "lin":
            return (c * p["w"]).sum()
        return (torch.sin(p["w"]) ** 2).sum()

    p = {"w": torch.tensor([0.4, 0.9], dtype=DTYPE, requires_grad=True)}
    task = VirtualTask("lin", "curved")
    full = grad(meta_objective(loss, p, task, 0.2)[0], p)["w"]
    first = grad(meta_objective(loss, p, task, 0.2, first_order=True)[0], p)["w"]
    assert torch.allclose(full, first, atol=1e-15)


@pytest.fixture(scope="module")
def train_small(synth):
    return synth[0].subset(range(80), "train80")


def test_alpha_zero_gradient_identity_on_seq2seq(train_small):
    parser = Parser(SMALL, train_small)
    params = parser.init(1)
    task = VirtualTask([train_small[i] for i in (0, 1)], [train_small[i] for i in (2, 3)])
    total, _, _ = meta_objective(parser, params, task, 0.0)
    joint = flat(grad(total, params))
    split = flat(grad(parser(params, task.meta_train), params)) + \
        flat(grad(parser(params, task.meta_test), params))
    assert (joint - split).abs().max().item() < 1e-12


def test_uniform_alpha_zero_matches_doubled_supervised_batch(train_small):
    idx = build_index(train_small, KernelConfig("uniform"))
    task = make_virtual_task(train_small, idx, SamplerConfig(), 8, np.random.default_rng(0))
    parser = Parser(SMALL, train_small)
    params = parser.init(0)
    g_maml, _, _ = step_gradient(parser, params, TrainerConfig(alpha=0.0), task)
    doubled = VirtualTask(task.meta_train + task.meta_test, [])
    g_sup, _, _ = step_gradient(parser, params, TrainerConfig(mode="supervised"), doubled)
    a, b = flat(g_maml), flat(g_sup)
    cos = (a @ b / (a.norm() * b.norm())).item()
    assert cos >= 1 - 1e-10
    # sequence reduction averages over the batch, so the merged batch halves the gradient
    assert torch.allclose(a, 2 * b, atol=1e-12)


def test_virtual_task_sizes_and_sampling(train_small):
    idx = build_index(train_small, KernelConfig("lev"), k=5)
    rng = np.random.default_rng(3)
    cfg = SamplerConfig(lam=1.0)
    for _ in range(20):
        task = make_virtual_task(train_small, idx, cfg, 12, rng)
        assert len(task.meta_train) == len(task.meta_test) == 12
        assert len({e.id for e in task.meta_train}) == 12          # without replacement
        for a, g in zip(task.meta_train, task.meta_test):
            assert g.id in idx.ids[a.id].tolist()
    with pytest.raises(ConfigError):
        make_virtual_task(train_small, idx, cfg, 81, rng)


def test_uniform_meta_test_is_uniform(train_small):
    corpus = train_small.subset(range(10))
    idx = build_index(corpus, KernelConfig("uniform"))
    rng = np.random.default_rng(11)
    draws = [g.id for _ in range(4000)
             for g in make_virtual_task(corpus, idx, SamplerConfig(), 5, rng).meta_test]
    counts = np.bincount(draws, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.001


def _strip(log):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in log]


def test_fixed_seed_gives_identical_logs(train_small, tmp_path):
    idx = build_index(train_small, KernelConfig("lev"), k=10)
    tcfg = TrainerConfig(steps=4, batch_size=4, seed=5)
    cfg = Seq2SeqConfig(hidden=8, encoder_layers=1)         # dropout on, seeded
    a = train(train_small, idx, None, tcfg, cfg, log_path=tmp_path / "a.jsonl")
    b = train(train_small, idx, None, tcfg, cfg)
    assert _strip(a.log) == _strip(b.log)
    lines = [json.loads(x) for x in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert set(lines[0]) == {"step", "loss_meta_train", "loss_meta_test", "grad_norm", "wall_ms"}
    assert all(np.isfinite([r["loss_meta_train"], r["loss_meta_test"]]).all() for r in lines)
    c = train(train_small, idx, None, TrainerConfig(steps=4, batch_size=4, seed=6), cfg)
    assert _strip(c.log) != _strip(a.log)


def test_first_order_training_runs_and_differs(train_small):
    idx = build_index(train_small, KernelConfig("lev"), k=10)
    full = train(train_small, idx, None, TrainerConfig(steps=3, batch_size=4, alpha=0.5), SMALL)
    fo = train(train_small, idx, None,
               TrainerConfig(steps=3, batch_size=4, alpha=0.5, first_order=True), SMALL)
    assert _strip(full.log)[0]["loss_meta_test"] == _strip(fo.log)[0]["loss_meta_test"]
    assert flat(full.params).sub(flat(fo.params)).abs().max() > 0


def test_checkpoint_cadence(train_small, tmp_path):
    res = train(train_small, None, None, TrainerConfig(mode="supervised", steps=25, batch_size=4),
                SMALL, checkpoint_dir=tmp_path)
    steps = [int(p[-11:-5]) for p in res.checkpoints]
    assert steps == [2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 25]


def test_fingerprint_mismatch(train_small):
    idx = build_index(train_small.subset(range(40)), KernelConfig("lev"), k=5)
    with pytest.raises(FingerprintError):
        train(train_small, idx, None, TrainerConfig(steps=1), SMALL)
    with pytest.raises(ConfigError):
        train(train_small, None, None, TrainerConfig(steps=1), SMALL)


def test_non_finite_loss_aborts_with_step(train_small, monkeypatch):
    real = maml.nll_loss
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        out = real(*args, **kwargs)
        return out * float("nan") if calls["n"] > 2 else out

    monkeypatch.setattr(maml, "nll_loss", flaky)
    with pytest.raises(NumericalError, match="step 3"):
        train(train_small, None, None, TrainerConfig(mode="supervised", steps=5, batch_size=4),
              SMALL)


def test_trainer_config_validation():
    for bad in ({"mode": "reptile"}, {"alpha": -0.1}, {"outer_lr": 0}, {"steps": 0},
                {"optimizer": "rmsprop"}):
        with pytest.raises(ConfigError):
            TrainerConfig(**bad)
