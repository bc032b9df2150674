"""Sliding-window inference, median recombination and disaggregation metrics."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ndkernel import ContractError
from .pipeline import PERIOD_S, PowerTrace, window_signal

__all__ = [
    "SAMPLES_PER_DAY",
    "METRIC_KEYS",
    "recombine_median",
    "disaggregate",
    "mae",
    "mae_on",
    "epd",
    "states",
    "prf1",
    "f1_from",
    "DetectionScores",
    "welch_t",
    "MetricsReport",
    "ScenarioResult",
    "evaluate",
]

SAMPLES_PER_DAY = 14400  # 24 h at 6 s
METRIC_KEYS = ("mae_w", "mae_on_w", "epd_wh", "precision", "recall", "f1")
_CHUNK = 1 << 16


# ----------------------------------------------------------------------------
# Recombination and inference


def _layers(origins, T):
    """Greedy interval colouring: windows in one layer never overlap."""
    ends = []
    layer_of = np.empty(len(origins), dtype=np.int64)
    for i in np.argsort(origins, kind="stable"):
        o = origins[i]
        for k, end in enumerate(ends):
            if end <= o:
                ends[k] = o + T
                layer_of[i] = k
                break
        else:
            layer_of[i] = len(ends)
            ends.append(o + T)
    return layer_of, len(ends)


def recombine_median(preds, origins, length):
    """Per-sample median over every window covering that sample.

    ``preds`` has shape ``[n, 1, T]`` (or ``[n, T]``); window ``i`` covers
    ``[origins[i], origins[i] + T)``. Samples past ``length`` (the padded
    tail) are discarded. An even number of covering values yields the mean of
    the two middle ones.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim == 3:
        if preds.shape[1] != 1:
            raise ContractError("window predictions must have a single channel")
        preds = preds[:, 0, :]
    if preds.ndim != 2:
        raise ContractError("window predictions must be [n, 1, T]")
    origins = np.asarray(origins, dtype=np.int64)
    n, T = preds.shape
    if origins.shape != (n,):
        raise ContractError("one origin per window is required")
    if n and origins.min() < 0:
        raise ContractError("window origins must be nonnegative")
    layer_of, n_layers = _layers(origins, T)
    grid = np.full((max(n_layers, 1), length), np.nan)
    for i in range(n):
        o = origins[i]
        stop = min(o + T, length)
        if stop > o:
            grid[layer_of[i], o:stop] = preds[i, :stop - o]
    count = np.sum(~np.isnan(grid), axis=0)
    if np.any(count == 0):
        first = int(np.argmax(count == 0))
        raise ContractError(f"output sample {first} is not covered by any window")
    out = np.empty(length)
    for a in range(0, length, _CHUNK):
        block = np.sort(grid[:, a:a + _CHUNK], axis=0)  # NaN sorts last
        k = count[a:a + _CHUNK]
        cols = np.arange(block.shape[1])
        lo = block[(k - 1) // 2, cols]
        hi = block[k // 2, cols]
        out[a:a + _CHUNK] = (lo + hi) / 2
    return out


def disaggregate(model, aggregate, spec, stride=None, stats=None, batch_size=16):
    """Estimate one appliance's power trace from an aggregate trace.

    ``model`` is a :class:`~vaenilm.checkpoint.ModelCheckpoint` (its
    standardization constants are used) or a model with ``predict`` plus an
    explicit ``stats``. Windows are taken at ``stride`` (default: the
    appliance's training stride) without dropping gaps; gap samples of the
    aggregate stay flagged in the output.
    """
    from .checkpoint import ModelCheckpoint

    if isinstance(model, ModelCheckpoint):
        stats = model.stats if stats is None else stats
        model = model.to_model()
    if stats is None:
        raise ContractError("standardization statistics are required")
    T = model.config.window_len
    S = spec.window_stride if stride is None else int(stride)
    x = stats.apply_input(aggregate.filled())
    windows, origins, _ = window_signal(x, None, T, S, drop_gaps=False)
    y = model.predict(windows[:, None, :].astype(np.float32), batch_size=batch_size)
    watts = stats.invert_target(y)
    out = recombine_median(watts, origins, len(aggregate))
    gaps = aggregate.gap_mask.copy()
    out[gaps] = 0.0
    return PowerTrace(aggregate.start_time, out, gaps, aggregate.period)


# ----------------------------------------------------------------------------
# Metrics


def _pair(pred, truth, mask):
    pred = np.asarray(pred.values if isinstance(pred, PowerTrace) else pred, dtype=np.float64)
    truth = np.asarray(truth.values if isinstance(truth, PowerTrace) else truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ContractError(f"prediction and truth lengths differ: {pred.shape} vs {truth.shape}")
    keep = np.ones(pred.shape, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    if keep.shape != pred.shape:
        raise ContractError("mask length differs from the traces")
    return pred, truth, keep


def mae(pred, truth, mask=None):
    """Mean absolute error over samples where ``mask`` is False."""
    pred, truth, keep = _pair(pred, truth, mask)
    if not keep.any():
        raise ContractError("no unmasked samples")
    return float(np.mean(np.abs(pred[keep] - truth[keep])))


def mae_on(pred, truth, delta, mask=None):
    """MAE restricted to samples with ``truth >= delta``; ``None`` when there are none."""
    pred, truth, keep = _pair(pred, truth, mask)
    sel = keep & (truth >= delta)
    if not sel.any():
        return None
    return float(np.mean(np.abs(pred[sel] - truth[sel])))


def epd(pred, truth, mask=None, samples_per_day=SAMPLES_PER_DAY, period=PERIOD_S):
    """Mean absolute daily energy error in Wh.

    Days are consecutive blocks of ``samples_per_day`` samples counted from
    the trace start; a trailing partial day is ignored. Masked samples
    contribute no energy to either side.
    """
    pred, truth, keep = _pair(pred, truth, mask)
    days = pred.size // samples_per_day
    if days == 0:
        raise ContractError(f"need at least {samples_per_day} samples for one day, got {pred.size}")
    n = days * samples_per_day
    dt_h = period / 3600.0
    p = np.where(keep, pred, 0.0)[:n].reshape(days, samples_per_day)
    t = np.where(keep, truth, 0.0)[:n].reshape(days, samples_per_day)
    e_hat = p.sum(axis=1) * dt_h
    e = t.sum(axis=1) * dt_h
    return float(np.mean(np.abs(e_hat - e)))


def states(trace, delta):
    """Boolean ON series: ``power >= delta``."""
    values = trace.values if isinstance(trace, PowerTrace) else trace
    return np.asarray(values, dtype=np.float64) >= delta


def f1_from(precision, recall):
    denom = precision + recall
    return 2.0 * precision * recall / denom if denom > 0 else 0.0


@dataclass(frozen=True)
class DetectionScores:
    """Precision, recall and F1 plus the raw counts. Unpacks as ``(p, r, f1)``."""

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def prf1(pred_states, truth_states, mask=None):
    pred_states = np.asarray(pred_states, dtype=bool)
    truth_states = np.asarray(truth_states, dtype=bool)
    if pred_states.shape != truth_states.shape:
        raise ContractError("state series lengths differ")
    if mask is not None:
        keep = ~np.asarray(mask, dtype=bool)
        pred_states, truth_states = pred_states[keep], truth_states[keep]
    tp = int(np.count_nonzero(pred_states & truth_states))
    fp = int(np.count_nonzero(pred_states & ~truth_states))
    fn = int(np.count_nonzero(~pred_states & truth_states))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return DetectionScores(precision, recall, f1_from(precision, recall), tp, fp, fn)


def welch_t(a, b):
    """Welch's unequal-variance t statistic and Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ContractError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        raise ContractError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return float(t), float(df)


# ----------------------------------------------------------------------------
# Reports


@dataclass
class MetricsReport:
    mae: float
    mae_on: object  # float, or None when the appliance is never ON
    epd: object  # float, or None when the trace is shorter than a day
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    n_on: int
    n_samples: int

    def __post_init__(self):
        if self.mae < 0 or (self.epd is not None and self.epd < 0):
            raise ContractError("mae and epd must be nonnegative")

    def to_dict(self):
        return {
            "mae_w": self.mae,
            "mae_on_w": self.mae_on,
            "epd_wh": self.epd,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "n_on": self.n_on,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["mae_w"], d["mae_on_w"], d["epd_wh"], d["precision"], d["recall"], d["f1"],
                   d["tp"], d["fp"], d["fn"], d["n_on"], d["n_samples"])

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(pred, truth, spec, require_day=False):
    """Full metric suite for one predicted trace against ground truth.

    Samples flagged as gaps in either trace are excluded. ``epd`` is ``None``
    for traces shorter than one day unless ``require_day`` is set, in which
    case the error propagates.
    """
    if (pred.start_time, pred.period, len(pred)) != (truth.start_time, truth.period, len(truth)):
        raise ContractError("prediction and truth traces are not aligned")
    mask = pred.gap_mask | truth.gap_mask
    delta = spec.on_threshold
    try:
        energy = epd(pred.values, truth.values, mask, period=truth.period)
    except ContractError:
        if require_day:
            raise
        energy = None
    truth_on = states(truth, delta)
    det = prf1(states(pred, delta), truth_on, mask)
    return MetricsReport(
        mae=mae(pred.values, truth.values, mask),
        mae_on=mae_on(pred.values, truth.values, delta, mask),
        epd=energy,
        precision=det.precision,
        recall=det.recall,
        f1=det.f1,
        tp=det.tp,
        fp=det.fp,
        fn=det.fn,
        n_on=int(np.count_nonzero(truth_on & ~mask)),
        n_samples=int(np.count_nonzero(~mask)),
    )


@dataclass
class ScenarioResult:
    """Repeated-run summary. Statistics are always recomputed from ``reports``."""

    reports: list = field(default_factory=list)

    def values(self, key):
        vals = [r.to_dict()[key] for r in self.reports]
        return [v for v in vals if v is not None]

    def mean(self):
        return {k: (float(np.mean(v)) if (v := self.values(k)) else None) for k in METRIC_KEYS}

    def std(self):
        # population std, so a single repetition reports 0
        return {k: (float(np.std(v)) if (v := self.values(k)) else None) for k in METRIC_KEYS}

    def compare(self, other, keys=METRIC_KEYS):
        """Welch t and df per metric against another scenario; ``None`` where undefined."""
        out = {}
        for k in keys:
            try:
                t, df = welch_t(self.values(k), other.values(k))
                out[k] = {"t": t, "df": df}
            except ContractError:
                out[k] = None
        return out

    def to_dict(self, comparison=None):
        d = {
            "repetitions": len(self.reports),
            "mean": self.mean(),
            "std": self.std(),
            "reports": [r.to_dict() for r in self.reports],
        }
        if comparison is not None:
            d["welch"] = self.compare(comparison)
        return d
