import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noforge.data import PreparedSplit, ScalingStats, split_dataset
from noforge.errors import EmptyMask, InvalidConfig, NonFiniteGradient, ShapeMismatch
from noforge.layers import Param
from noforge.models import build_model, toy_config
from noforge.models.checkpoint import load_checkpoint
from noforge.training import (AdamW, PlateauScheduler, TrainConfig, clip_global_norm, compute_metrics, evaluate,
                              masked_mse, predict_split, split_loss, throughput_benchmark, train)

from conftest import random_batch

KINDS = ["fno", "ffno", "mgfno", "deeponet"]


# -- masked MSE ---------------------------------------------------------------------
def test_masked_mse_examples(rng):
    t = rng.standard_normal((2, 3, 4, 4, 2))
    m = (rng.random((2, 1, 4, 4, 2)) < 0.5).astype(float)
    loss, grad = masked_mse(t.copy(), t, m)
    assert loss == 0.0 and not grad.any()
    loss, _ = masked_mse(t + m, t, m)
    assert loss == 1.0


def test_masked_mse_gradient_matches_fd(rng):
    p = rng.standard_normal((1, 3, 3, 3, 2))
    t = rng.standard_normal(p.shape)
    m = (rng.random((1, 1, 3, 3, 2)) < 0.6).astype(float)
    _, g = masked_mse(p, t, m)
    num = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        q = p.copy()
        q[i] += 1e-6
        hi = masked_mse(q, t, m)[0]
        q[i] -= 2e-6
        num[i] = (hi - masked_mse(q, t, m)[0]) / 2e-6
    assert np.max(np.abs(num - g)) < 1e-8


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_masked_mse_ignores_outside_values(seed):
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((2, 3, 3, 3, 2))
    t = rng.standard_normal(p.shape)
    m = (rng.random((2, 1, 3, 3, 2)) < 0.5).astype(float)
    m[0, 0, 0, 0, 0] = 1
    off = np.broadcast_to(m == 0, p.shape)
    loss, grad = masked_mse(p, t, m)
    p2, t2 = p.copy(), t.copy()
    p2[off] = rng.standard_normal(off.sum()) * 1e6
    t2[off] = np.nan
    loss2, grad2 = masked_mse(p2, t2, m)
    assert loss == loss2
    np.testing.assert_array_equal(grad, grad2)
    assert not grad[off].any()


def test_masked_mse_errors(rng):
    with pytest.raises(EmptyMask):
        masked_mse(np.ones((1, 3, 2, 2, 2)), np.zeros((1, 3, 2, 2, 2)), np.zeros((1, 1, 2, 2, 2)))
    with pytest.raises(ShapeMismatch):
        masked_mse(np.ones((1, 3, 2, 2, 2)), np.zeros((1, 2, 2, 2, 2)), np.ones((1, 1, 2, 2, 2)))


@pytest.mark.parametrize("kind", KINDS)
def test_parameter_gradients_ignore_masked_out_targets(kind):
    rng = np.random.default_rng(0)
    cfg = toy_config(kind, grid=(8, 8, 4))
    model = build_model(kind, cfg, seed=0, dtype=np.float64)
    batch = random_batch(rng, cfg.grid)

    def grads(b):
        model.zero_grad()
        model.set_rng(np.random.default_rng(1))
        _, g = masked_mse(model.forward_batch(b), b.target, b.mask)
        model.backward_batch(g)
        return {n: p.grad.copy() for n, p in model.named_params()}

    a = grads(batch)
    off = np.broadcast_to(batch.mask == 0, batch.target.shape)
    batch.target[off] = 1e9
    b = grads(batch)
    for n in a:
        np.testing.assert_array_equal(a[n], b[n])


# -- AdamW ---------------------------------------------------------------------------
def _param(value):
    v = np.array(value, dtype=np.float64)
    return Param(v.shape, v)


def test_adamw_scalar_example():
    p = _param([1.0])
    p.grad[...] = 1.0
    AdamW({"t": p}, lr=1e-3, weight_decay=0.0).step()
    assert p.value[0] == pytest.approx(1 - 1e-3 / (1 + 1e-8), abs=1e-15)
    assert round(p.value[0], 6) == 0.999


def test_adamw_zero_gradient_and_pure_decay():
    p = _param([2.0, -3.0])
    opt = AdamW({"t": p}, lr=1e-2, weight_decay=0.0)
    opt.step()
    np.testing.assert_array_equal(p.value, [2.0, -3.0])
    q = _param([2.0, -3.0])
    AdamW({"t": q}, lr=1e-2, weight_decay=0.1).step()
    np.testing.assert_allclose(q.value, (1 - 1e-3) * np.array([2.0, -3.0]), rtol=1e-15)


def test_adamw_matches_textbook_adam_on_quadratic():
    a, target = 3.0, 0.7
    p = _param([5.0])
    opt = AdamW({"t": p}, lr=0.05, weight_decay=0.0)
    theta, m, v = 5.0, 0.0, 0.0
    for t in range(1, 101):
        g = a * (theta - target)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.05 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        p.grad[...] = a * (p.value - target)
        opt.step()
        assert abs(p.value[0] - theta) <= 1e-12


def test_adamw_non_finite_names_parameter():
    good, bad = _param([1.0]), _param([1.0])
    bad.grad[...] = np.nan
    opt = AdamW({"good": good, "bad": bad}, lr=1e-3)
    with pytest.raises(NonFiniteGradient) as exc:
        opt.step()
    assert exc.value.param_name == "bad"
    assert good.value[0] == 1.0 and opt.step_count == 0


def test_adamw_rejects_bad_settings():
    with pytest.raises(InvalidConfig):
        AdamW({"t": _param([1.0])}, lr=-1.0)


def test_clip_global_norm():
    p, q = _param([3.0]), _param([4.0])
    p.grad[...] = 3.0
    q.grad[...] = 4.0
    assert clip_global_norm([("p", p), ("q", q)], 1.0) == pytest.approx(5.0)
    assert p.grad[0] == pytest.approx(0.6) and q.grad[0] == pytest.approx(0.8)


# -- scheduler -----------------------------------------------------------------------
def test_scheduler_improving_keeps_lr():
    s = PlateauScheduler(1e-3)
    for k in range(30):
        assert s.observe(1.0 - 0.01 * k) == 1e-3


@pytest.mark.parametrize("epochs,expected", [(9, 1e-3), (10, 5e-4), (19, 5e-4), (20, 2.5e-4)])
def test_scheduler_constant_loss(epochs, expected):
    s = PlateauScheduler(1e-3)
    s.observe(1.0)  # reference value before the first epoch
    for _ in range(epochs):
        lr = s.observe(1.0)
    assert lr == expected


def test_scheduler_threshold_and_floor():
    s = PlateauScheduler(1e-3, patience=1, min_lr=4e-4)
    s.observe(1.0)
    assert s.observe(1.0 - 1e-13) == 5e-4
    assert s.observe(1.0) == 4e-4
    assert s.observe(1.0) == 4e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=60))
def test_scheduler_lr_never_increases(losses):
    s = PlateauScheduler(1e-3, patience=3, min_lr=1e-5)
    lrs = [s.observe(x) for x in losses]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert min(lrs) >= 1e-5


# -- metrics --------------------------------------------------------------------------
def test_metrics_examples(rng):
    y = rng.random((2, 3, 4, 4, 2)) + 0.5
    m = (rng.random((2, 1, 4, 4, 2)) < 0.5).astype(float)
    r = compute_metrics(y, y, m)
    assert (r.mae, r.mse, r.rmse, r.accuracy) == (0.0, 0.0, 0.0, 1.0)
    r = compute_metrics(y + 0.1, y, m)
    assert r.mae == pytest.approx(0.1) and r.mse == pytest.approx(0.01) and r.rmse == pytest.approx(0.1)
    with pytest.raises(EmptyMask):
        compute_metrics(y, y, np.zeros_like(m))


def test_metrics_constant_mean_predictor(small_dataset):
    stats = ScalingStats.from_records(small_dataset)
    split = PreparedSplit(small_dataset, stats)
    y, mask = split.targets["real"], split.mask
    on = np.broadcast_to(mask.astype(bool), y.shape)
    ybar = y[on].mean()
    r = compute_metrics(np.full_like(y, ybar), y, mask)
    acc = 1 - np.sum(np.abs(y[on] - ybar)) / np.sum(np.abs(y[on]))
    assert r.accuracy == pytest.approx(acc, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_metrics_invariants(seed, scale):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((1, 3, 3, 3, 2))
    p = y + scale * rng.standard_normal(y.shape)
    m = (rng.random((1, 1, 3, 3, 2)) < 0.7).astype(float)
    m[..., 0, 0, 0] = 1
    r = compute_metrics(p, y, m)
    assert abs(r.rmse**2 - r.mse) <= 1e-9 * max(1.0, r.mse)
    assert r.mae <= r.rmse * (1 + 1e-12)
    assert 0.0 <= r.accuracy <= 1.0


# -- training loop ---------------------------------------------------------------------
@pytest.fixture(scope="module")
def splits():
    from noforge.data import generate_synthetic_dataset
    recs = generate_synthetic_dataset(12, (8, 8, 4), seed=21)
    tr, va, te = split_dataset(recs, (0.5, 0.25, 0.25), seed=0)
    stats = ScalingStats.from_records(tr)
    return PreparedSplit(tr, stats), PreparedSplit(va, stats), PreparedSplit(te, stats)


def test_zero_epochs_keeps_initialization(splits, tmp_path):
    tr, va, _ = splits
    model = build_model("fno", toy_config("fno", grid=tr.grid), seed=3)
    init = build_model("fno", toy_config("fno", grid=tr.grid), seed=3)
    res = train(model, tr, va, TrainConfig(epochs=0), out_dir=tmp_path)
    assert res.history == []
    assert (tmp_path / "history.csv").read_text() == "epoch,train_loss,val_loss,lr\n"
    loaded = load_checkpoint(tmp_path / "best.ckpt")
    for (_, a), (_, b) in zip(loaded.named_params(), init.named_params()):
        np.testing.assert_array_equal(a.value, b.value)


@pytest.mark.parametrize("kind", KINDS)
def test_training_reduces_loss_and_is_deterministic(kind, splits, tmp_path):
    tr, va, _ = splits
    cfg = TrainConfig(epochs=4, batch_size=2, seed=5, lr=3e-3)
    runs = []
    for name in ("a", "b"):
        model = build_model(kind, toy_config(kind, grid=tr.grid), seed=1)
        res = train(model, tr, va, cfg, out_dir=tmp_path / name)
        runs.append(res)
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    assert (tmp_path / "a" / "best.ckpt").read_bytes() == (tmp_path / "b" / "best.ckpt").read_bytes()
    hist = runs[0].history
    assert len(hist) == 4
    assert hist[-1][1] < hist[0][1]
    lines = (tmp_path / "a" / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert lines[1].split(",")[0] == "1"


def test_trainer_restores_best_weights(splits, tmp_path):
    tr, va, _ = splits
    model = build_model("ffno", toy_config("ffno", grid=tr.grid), seed=2)
    res = train(model, tr, va, TrainConfig(epochs=5, batch_size=2, lr=1e-2), out_dir=tmp_path)
    vals = [h[2] for h in res.history]
    best = min(vals)
    assert res.best_val == best and res.history[res.best_epoch - 1][2] == best
    assert split_loss(model, va, "real", 2) == pytest.approx(best, rel=1e-6)
    assert split_loss(load_checkpoint(tmp_path / "best.ckpt"), va, "real", 2) == pytest.approx(best, rel=1e-6)
    running = np.minimum.accumulate(vals)
    assert np.all(np.diff(running) <= 0)


def test_constant_validation_halves_lr_after_patience(splits, monkeypatch):
    import noforge.training.trainer as trainer_mod
    monkeypatch.setattr(trainer_mod, "split_loss", lambda *a, **k: 1.0)
    tr, va, _ = splits
    model = build_model("fno", toy_config("fno", grid=tr.grid), seed=2)
    res = train(model, tr, va, TrainConfig(epochs=21, batch_size=4, lr=1e-3))
    lrs = [h[3] for h in res.history]
    # the rate observed after epoch 10 (20) is the one used in epoch 11 (21)
    assert lrs[:10] == [1e-3] * 10
    assert lrs[10:20] == [5e-4] * 10
    assert lrs[20] == 2.5e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_reports_epoch(splits):
    tr, va, _ = splits
    bad = PreparedSplit.__new__(PreparedSplit)
    bad.__dict__.update(tr.__dict__)
    bad.targets = {k: v.copy() for k, v in tr.targets.items()}
    on = np.broadcast_to(bad.mask.astype(bool), bad.targets["real"].shape)
    bad.targets["real"][on] = np.inf
    model = build_model("fno", toy_config("fno", grid=tr.grid), seed=2)
    with pytest.raises(NonFiniteGradient) as exc:
        train(model, bad, va, TrainConfig(epochs=2))
    assert exc.value.epoch == 1 and exc.value.param_name


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(epochs=-1)
    with pytest.raises(InvalidConfig):
        TrainConfig(target="both")


def test_evaluate_matches_compute_metrics(splits):
    tr, _, te = splits
    model = build_model("ffno", toy_config("ffno", grid=tr.grid), seed=0)
    row, pred = evaluate(model, te, "imag", batch_size=2, split_name="test")
    np.testing.assert_array_equal(pred, predict_split(model, te, "imag", 2))
    ref = compute_metrics(pred, te.targets["imag"], te.mask)
    assert (row.mae, row.mse, row.accuracy) == (ref.mae, ref.mse, ref.accuracy)
    assert row.split == "test" and row.target == "imag" and row.model == "ffno"
    assert not pred[np.broadcast_to(te.mask == 0, pred.shape)].any()
    phys, _ = evaluate(model, te, "imag", batch_size=2, physical_units=True)
    span = te.stats.disp_max - te.stats.disp_min
    assert phys.mae == pytest.approx(row.mae * span, rel=1e-5)


# -- benchmark -------------------------------------------------------------------------
def test_benchmark(rng):
    cfg = toy_config("ffno", grid=(8, 8, 4))
    model = build_model("ffno", cfg)
    res = throughput_benchmark(model, random_batch(rng, cfg.grid, dtype=np.float32), warmup=1, iters=10)
    assert res.iters_per_second > 0 and math.isfinite(res.iters_per_second)
    assert res.parameters == cfg.closed_form_param_count() and res.model == "ffno"
    with pytest.raises(InvalidConfig):
        throughput_benchmark(model, random_batch(rng, cfg.grid), iters=5)
