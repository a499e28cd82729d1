import numpy as np
import pytest

from hardgap import autodiff as ad
from hardgap.autodiff import Tensor
from hardgap.ca_core import named_rule
from hardgap.checkpoint import load_checkpoint, save_checkpoint
from hardgap.circuits import build_single_block
from hardgap.data import HiddenSet, generate_dataset
from hardgap.model import (
    TrainConfig,
    TrainLog,
    Unroll,
    UnrollMode,
    count_parameters,
    evaluate,
    forward_rollout,
    forward_tensor,
    init_model,
    rollout_loss,
    train,
)
from hardgap.transformer import ModelConfig, forward

SMALL = ModelConfig(width=7, d_model=8, n_layers=2, n_heads=2, ffn_dim=8)


def tensors(params, dtype=np.float64):
    return {k: Tensor(np.array(v, dtype=dtype), requires_grad=True) for k, v in params.items()}


def test_default_parameter_count_pinned():
    # 6592 embedding + 2 x 33472 per block + 65 head
    assert count_parameters(ModelConfig()) == 73601


def test_bad_head_split():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=4)


def test_same_seed_same_checkpoint(tmp_path):
    a, b = init_model(SMALL, seed=4), init_model(SMALL, seed=4)
    save_checkpoint(tmp_path / "a", a)
    save_checkpoint(tmp_path / "b", b)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert not np.array_equal(init_model(SMALL, seed=5)["pos"], a["pos"])


def test_checkpoint_keeps_scalar_shapes(tmp_path):
    p = init_model(SMALL, seed=0)
    save_checkpoint(tmp_path / "c", p, {"x": 1})
    q, meta = load_checkpoint(tmp_path / "c")
    assert meta == {"x": 1}
    assert all(q[k].shape == p[k].shape and np.array_equal(q[k], p[k]) for k in p)


def test_zeros_row_finite():
    cfg = ModelConfig()
    out = forward(init_model(cfg, 0), cfg, np.zeros((1, 101)))
    assert out.shape == (1, 101) and np.all(np.isfinite(out))


def test_width_mismatch():
    with pytest.raises(ValueError):
        forward_tensor(tensors(init_model(SMALL)), SMALL, Tensor(np.zeros((1, 9))))


def test_tape_matches_numpy_forward():
    p = init_model(SMALL, 1, emb_std=1.0)
    x = np.random.default_rng(0).integers(0, 2, (3, 7)).astype(float)
    assert np.allclose(forward_tensor(tensors(p), SMALL, Tensor(x)).numpy(), forward(p, SMALL, x), atol=1e-12)


def test_none_mode_single_step():
    m = UnrollMode("none", 4)
    assert m.num_steps == 1
    out = forward_rollout(tensors(init_model(SMALL)), SMALL, np.zeros(7), m)
    assert len(out) == 1


def test_soft_hard_first_step_identical():
    p = tensors(init_model(SMALL, 2, emb_std=1.0))
    row = np.array([0, 1, 1, 0, 1, 0, 0])
    soft = forward_rollout(p, SMALL, row, UnrollMode("soft", 3))
    hard = forward_rollout(p, SMALL, row, UnrollMode("hard", 3))
    assert np.array_equal(soft[0].numpy(), hard[0].numpy())
    assert not np.allclose(soft[2].numpy(), hard[2].numpy())


def test_hard_mode_blocks_feedback_gradient():
    """Hard step-3 gradient equals the direct-path gradient with the fed-back row frozen."""
    base = init_model(SMALL, 3, emb_std=1.0)
    row = np.array([1, 0, 1, 1, 0, 0, 1])
    tgt = np.array([0, 1, 1, 0, 1, 0, 1])

    def step3_grad(kind, frozen_input=None):
        p = tensors(base)
        if frozen_input is None:
            logits = forward_rollout(p, SMALL, row, UnrollMode(kind, 3))[2]
        else:
            logits = forward_tensor(p, SMALL, Tensor(frozen_input[None]))
        ad.bce_with_logits(logits, tgt[None]).backward()
        return p["embed.w"].grad

    p = tensors(base)
    outs = forward_rollout(p, SMALL, row, UnrollMode("hard", 3))
    fed = (outs[1].numpy()[0] > 0).astype(float)
    direct = step3_grad(None, fed)
    assert np.array_equal(step3_grad("hard"), direct)
    assert np.abs(step3_grad("soft") - direct).max() > 1e-8


def test_all_masked_zero_gradients():
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=7, n_samples=4, seed=0)
    p = tensors(init_model(SMALL, 0))
    loss = rollout_loss(p, SMALL, ds.states, np.zeros_like(ds.visibility), UnrollMode("soft", 4))
    loss.backward()
    assert loss.item() == 0.0
    assert all(np.all(t.grad == 0) for t in p.values())


def test_full_model_gradient_check_float64():
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=7, timesteps=2, n_samples=3, seed=1)
    base = init_model(SMALL, 7, emb_std=0.5)
    p = tensors(base)
    mode = UnrollMode("soft", 2)
    rollout_loss(p, SMALL, ds.states, ds.visibility, mode).backward()
    rng = np.random.default_rng(0)
    errs = []
    for name in base:
        flat = p[name].data.reshape(-1)
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            def f(v, name=name, i=i):
                q = {k: Tensor(np.array(x)) for k, x in base.items()}
                q[name].data.reshape(-1)[i] = v
                return rollout_loss(q, SMALL, ds.states, ds.visibility, mode).item()

            x0 = flat[i]
            num = (f(x0 + 1e-5) - f(x0 - 1e-5)) / 2e-5
            ana = p[name].grad.reshape(-1)[i]
            # key biases shift every score of a query equally, so their true gradient is 0
            if max(abs(num), abs(ana)) < 1e-8:
                continue
            errs.append(abs(num - ana) / (abs(num) + abs(ana)))
    errs = np.array(errs)
    assert len(errs) > 40
    assert np.mean(errs < 1e-4) >= 0.95 and errs.max() < 1e-2


def test_untrained_supervised_near_half():
    cfg = ModelConfig()
    ds = generate_dataset(named_rule("D"), HiddenSet(2, (1, 5, 9)), width=101, n_samples=100, seed=0, split="test")
    res = evaluate(init_model(cfg, 0), cfg, ds)
    assert abs(res["supervised_acc"] - 0.5) <= 0.05


def test_circuit_through_evaluate_perfect():
    c = build_single_block(150, 11)
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=11, n_samples=200, seed=0)
    res = evaluate(c.params, c.cfg, ds)
    assert res["supervised_acc"] == 1.0 and res["holdout_acc"] == 1.0 and res["per_pattern"] == {2: 1.0}


def test_k0_holdout_absent():
    c = build_single_block(150, 9)
    ds = generate_dataset(named_rule("150"), HiddenSet(1, ()), width=9, n_samples=20, seed=0)
    res = evaluate(c.params, c.cfg, ds)
    assert res["holdout_acc"] is None and res["output_bias"] is None


def test_train_short_run_deterministic_and_logged(tmp_path):
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=7, n_samples=40, seed=0)
    te = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=7, n_samples=20, seed=0, split="test")
    tc = TrainConfig(epochs=3, batch_size=8, dtype="float64")
    a, log_a = train(init_model(SMALL, 0), SMALL, ds, te, tc)
    b, log_b = train(init_model(SMALL, 0), SMALL, ds, te, tc)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert [r["epoch"] for r in log_a.rows] == [1, 2, 3]
    assert log_a.rows[-1]["loss"] < log_a.rows[0]["loss"]
    log_a.to_csv(tmp_path / "a.csv")
    log_b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert "holdout_acc" in log_a.final


def test_train_nan_keeps_last_good():
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=7, n_samples=16, seed=0)
    p = init_model(SMALL, 0)
    p["head.b"] = np.array(np.nan)
    out, log = train(p, SMALL, ds, None, TrainConfig(epochs=2, batch_size=8))
    assert log.status == "nan" and np.isnan(out["head.b"])


def test_trainlog_first_epoch():
    log = TrainLog()
    for e, s, h in [(1, 0.6, 0.1), (2, 0.85, 0.3), (3, 0.95, 0.7)]:
        log.append({"epoch": e, "supervised_acc": s, "holdout_acc": h})
    assert log.first_epoch("supervised_acc", 0.8) == 2 and log.first_epoch("holdout_acc", 0.5) == 3
    assert log.first_epoch("holdout_acc", 0.99) is None
    with pytest.raises(ValueError):
        log.append({"epoch": 3})
    assert Unroll("hard") is Unroll.HARD
