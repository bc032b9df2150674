"""Train a small kettle model on two synthetic houses and score it on a third.

Takes a couple of minutes on one CPU core.

    python3 demos/02_train_and_disaggregate.py
"""

import dataclasses
import logging

import numpy as np

from vaenilm import ModelConfig, PowerTrace, TrainConfig, VaeNilm, disaggregate, evaluate, train
from vaenilm.pipeline import (
    APPLIANCES,
    SyntheticHouseConfig,
    concat_windows,
    make_windows,
    split_train_val,
    standardize_fit,
    synth_house,
)

logging.basicConfig(level=logging.INFO, format="%(message)s")

houses = [synth_house(SyntheticHouseConfig(2 * 14400, ["kettle"], seed=s, house_id=h))
          for s, h in ((1, "A"), (2, "B"), (3, "C"))]
train_houses, test = houses[:2], houses[2]

spec = dataclasses.replace(APPLIANCES["kettle"], window_stride=32)
model_cfg = ModelConfig(window_len=128, depth=3, latent_dim=8, channels=(8, 8, 16))

stats = standardize_fit([h.aggregate for h in train_houses], [h.appliance("kettle") for h in train_houses])
windows = concat_windows([make_windows(h, "kettle", model_cfg.window_len, spec.window_stride, stats)
                          for h in train_houses])
tr, va = split_train_val(windows, 0.8, seed=0)

model = VaeNilm(model_cfg, seed=0)
cfg = TrainConfig(max_epochs=6, patience=6, batch_size=32, lr_halving=False, plateau=True)
ckpt, log = train(model, tr, va, cfg, stats=stats, appliance=spec)
print(f"best epoch {log.best_epoch}, validation loss {min(log.val_loss):.4f}")

# Sliding-window inference on the unseen house, overlaps merged by median.
pred = disaggregate(ckpt, test.aggregate, spec)
truth = test.appliance("kettle")
report = evaluate(pred, truth, spec)
zero = evaluate(PowerTrace(truth.start_time, np.zeros(len(truth))), truth, spec)
print(f"model:    MAE {report.mae:6.2f} W   F1 {report.f1:.3f}   EpD {report.epd:7.1f} Wh")
print(f"baseline: MAE {zero.mae:6.2f} W   F1 {zero.f1:.3f}   EpD {zero.epd:7.1f} Wh")
