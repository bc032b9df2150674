from types import SimpleNamespace

import numpy as np
import pytest

from vaenilm.ndkernel import ContractError, Parameter
from vaenilm.pipeline import SyntheticHouseConfig, WindowSet, make_windows, standardize_fit, synth_house
from vaenilm.trainer import (
    EarlyStopping,
    NumericalError,
    RmsPropState,
    TrainConfig,
    TrainLog,
    _evaluate,
    lr_schedule,
    rmsprop_step,
    train,
)
from vaenilm.vae import ModelConfig, VaeNilm


def test_lr_schedule_examples():
    assert [lr_schedule(e) for e in range(4)] == [0.001, 0.0005, 0.00025, 0.000125]
    assert lr_schedule(5, halving=False) == 0.001
    with pytest.raises(ContractError):
        lr_schedule(-1)


def test_halving_budget_sums_to_twice_lr0():
    total = sum(lr_schedule(e, 0.003) for e in range(200))
    assert total == pytest.approx(2 * 0.003, rel=1e-12)


def test_rmsprop_hand_example():
    p = Parameter(np.array([1.0]))
    state = RmsPropState([p])
    p.grad[:] = 1.0
    rmsprop_step(p, state, 0.1)
    assert state[p][0] == pytest.approx(0.1)
    assert p.value[0] == pytest.approx(1 - 0.1 / np.sqrt(0.1), abs=1e-6)
    assert p.value[0] == pytest.approx(0.68377, abs=1e-5)


def test_rmsprop_zero_gradient_decays_state_only():
    p = Parameter(np.array([0.5, -2.0]))
    state = RmsPropState([p])
    state[p][:] = [1.0, 4.0]
    rmsprop_step(p, state, 0.1)
    np.testing.assert_array_equal(p.value, [0.5, -2.0])
    np.testing.assert_allclose(state[p], [0.9, 3.6])


def test_rmsprop_minimises_scalar_quadratic():
    p = Parameter(np.array([1.0]))
    state = RmsPropState([p])
    for _ in range(200):
        p.grad[:] = 2 * p.value
        rmsprop_step(p, state, 0.01)
    assert abs(p.value[0]) < 0.05


def test_rmsprop_rejects_non_finite_gradient():
    p = Parameter(np.array([1.0]), name="dec.w")
    p.grad[:] = np.nan
    with pytest.raises(NumericalError, match="dec.w"):
        rmsprop_step(p, RmsPropState([p]), 0.1)


def test_early_stopping_arithmetic():
    es = EarlyStopping(20)
    stopped_at = None
    for epoch in range(100):
        val = 10.0 - epoch if epoch <= 3 else 7.0
        _, stop = es.update(epoch, val)
        if stop:
            stopped_at = epoch
            break
    assert stopped_at == 23 and es.best_epoch == 3


class ScriptedModel:
    """Stand-in model whose validation loss follows a script; one scalar weight."""

    def __init__(self, script):
        self.config = SimpleNamespace(latent_dim=2)
        self.w = Parameter(np.zeros(1))
        self.script = script
        self.epoch = 0

    def named_parameters(self):
        return [("w", self.w)]

    def state_dict(self):
        return {"w": self.w.value.copy()}

    def load_state_dict(self, state):
        self.w.value[:] = state["w"]

    def loss_and_backward(self, x, y, eps, mode="train", beta_kl=1.0, backward=True):
        if backward:
            self.w.grad[:] = 1.0
            return 1.0
        val = self.script(self.epoch)
        self.epoch += 1
        return val


def _windows(n):
    x = np.zeros((n, 1, 4), dtype=np.float32)
    return WindowSet(x, x.copy(), np.arange(n) * 4, 4 * n)


def test_train_stops_at_best_plus_patience():
    model = ScriptedModel(lambda e: 10.0 - e if e <= 3 else 7.0)
    _, tlog = train(model, _windows(4), _windows(2), TrainConfig(max_epochs=100, patience=20))
    assert tlog.epochs == 24 and tlog.best_epoch == 3
    assert tlog.val_loss[tlog.best_epoch] == min(tlog.val_loss)


def test_train_strict_improvement_runs_all_epochs_and_restores_best():
    model = ScriptedModel(lambda e: 1.0 / (e + 1))
    _, tlog = train(model, _windows(4), _windows(2), TrainConfig(max_epochs=12, patience=5))
    assert tlog.epochs == 12 and tlog.best_epoch == 11


def test_train_restores_best_weights():
    model = ScriptedModel(lambda e: [5.0, 1.0, 3.0, 4.0][e])
    ckpt, tlog = train(model, _windows(4), _windows(2), TrainConfig(max_epochs=4, patience=4, batch_size=4))
    # one step per epoch, lr 1e-3 * 0.5**e; best is after the second step
    assert tlog.best_epoch == 1
    assert ckpt.tensors["w"][0] == pytest.approx(model.w.value[0])
    assert tlog.lr == [0.001, 0.0005, 0.00025, 0.000125]


def test_plateau_schedule_halves_after_patience():
    model = ScriptedModel(lambda e: 1.0 if e == 0 else 2.0)
    cfg = TrainConfig(max_epochs=8, patience=8, plateau=True, plateau_patience=3)
    _, tlog = train(model, _windows(4), _windows(2), cfg)
    assert tlog.lr == [0.001] * 4 + [0.0005] * 3 + [0.00025]


def test_train_errors():
    with pytest.raises(ContractError):
        train(ScriptedModel(lambda e: 1.0), _windows(0), _windows(2), TrainConfig())
    with pytest.raises(ContractError):
        train(ScriptedModel(lambda e: 1.0), _windows(4), _windows(0), TrainConfig())
    with pytest.raises(NumericalError, match="epoch 0"):
        train(ScriptedModel(lambda e: float("nan")), _windows(4), _windows(2), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(lr0=0)
    with pytest.raises(ContractError):
        TrainConfig(max_epochs=5, patience=6)


def test_on_epoch_callback_stops():
    seen = []
    cfg = TrainConfig(max_epochs=10, patience=5)
    _, tlog = train(ScriptedModel(lambda e: 1.0 / (e + 1)), _windows(4), _windows(2), cfg, on_epoch=lambda e, log: seen.append(e) or e == 2)
    assert seen == [0, 1, 2] and tlog.epochs == 3


def _real_data():
    house = synth_house(SyntheticHouseConfig(3000, ["kettle"], seed=5))
    stats = standardize_fit([house.aggregate], [house.appliance("kettle")])
    ws = make_windows(house, "kettle", 32, 16, stats)
    return ws.subset(range(0, len(ws) - 20)), ws.subset(range(len(ws) - 20, len(ws))), stats


def test_training_is_bit_reproducible(tmp_path):
    tr, va, stats = _real_data()
    cfg = TrainConfig(max_epochs=2, patience=2, batch_size=16, seed=7)
    mcfg = ModelConfig(window_len=32, depth=2, latent_dim=4, channels=(4, 4, 8))
    runs = []
    for i in range(2):
        ckpt, tlog = train(VaeNilm(mcfg, seed=1), tr, va, cfg, stats=stats)
        tlog.write_csv(tmp_path / f"log{i}.csv")
        runs.append((ckpt.to_bytes(), (tmp_path / f"log{i}.csv").read_bytes()))
    assert runs[0] == runs[1]
    ckpt, tlog = train(VaeNilm(mcfg, seed=1), tr, va, cfg, stats=stats)
    model = ckpt.to_model()
    assert _evaluate(model, va, 64, 1.0) == pytest.approx(min(tlog.val_loss), rel=1e-5)


def test_train_log_csv(tmp_path):
    log = TrainLog([1.5, 1.0], [2.0, 1.25], [0.001, 0.0005], [3.2, 3.1], 1)
    log.write_csv(tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr,seconds"
    assert lines[1] == "0,1.5,2.0,0.001,"
    log.write_csv(tmp_path / "b.csv", include_time=True)
    assert (tmp_path / "b.csv").read_text().splitlines()[2] == "1,1.0,1.25,0.0005,3.100"
