"""Disaggregation metrics on hand-made traces, and a Welch test across repetitions.

    python3 demos/03_metrics_and_significance.py
"""

import numpy as np

from vaenilm.evaluation import ScenarioResult, epd, evaluate, f1_from, mae, mae_on, recombine_median, welch_t
from vaenilm.pipeline import APPLIANCES, PowerTrace

print("MAE      ", round(mae([10, 20, 30], [0, 20, 40]), 3))
print("MAE (ON) ", mae_on([10, 20, 30], [0, 20, 40], delta=20))
print("EpD      ", epd(np.zeros(14400), np.full(14400, 600.0)), "Wh for a missed 600 W day")
print("F1       ", round(f1_from(0.858, 0.949), 3))

# Three overlapping window predictions covering one sample: the median wins.
print("median   ", recombine_median(np.array([[[1.0]], [[9.0]], [[2.0]]]), [0, 0, 0], 1))

# Two "methods" evaluated over five repetitions each.
rng = np.random.default_rng(0)
truth = PowerTrace(0, np.where(rng.random(14400) < 0.05, 2400.0, 0.0))
spec = APPLIANCES["kettle"]


def run(noise):
    pred = np.clip(truth.values + rng.normal(0, noise, truth.values.size), 0, None)
    return evaluate(PowerTrace(0, pred), truth, spec)


a = ScenarioResult([run(150.0) for _ in range(5)])
b = ScenarioResult([run(300.0) for _ in range(5)])
print("mean MAE a/b", round(a.mean()["mae_w"], 2), round(b.mean()["mae_w"], 2))
t, df = welch_t(a.values("mae_w"), b.values("mae_w"))
print(f"Welch t = {t:.2f} with {df:.1f} degrees of freedom")
