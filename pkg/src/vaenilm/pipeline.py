"""Power-trace ingestion, grid alignment, standardization and windowing.

Also provides a seeded synthetic-house generator: every appliance trace is
built from a parametric activation profile and the aggregate is the sum of
all appliance traces, some untracked distractor loads and Gaussian
measurement noise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import atomic_write
from .ndkernel import ContractError

__all__ = [
    "PERIOD_S",
    "TraceFormatError",
    "PowerTrace",
    "HouseRecord",
    "ApplianceSpec",
    "APPLIANCES",
    "StandardizationStats",
    "WindowSet",
    "load_trace",
    "write_trace_csv",
    "read_trace_csv",
    "resample_align",
    "align_house",
    "standardize_fit",
    "window_signal",
    "make_windows",
    "concat_windows",
    "split_train_val",
    "subsample_fraction",
    "Phase",
    "ApplianceProfile",
    "SyntheticHouseConfig",
    "PROFILES",
    "synth_house",
]

PERIOD_S = 6
TOLERANCE_S = 3


class TraceFormatError(ValueError):
    """A trace file row could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class PowerTrace:
    """Regularly gridded power series in watts with a gap mask (True = missing)."""

    start_time: int
    values: np.ndarray
    gap_mask: np.ndarray = None
    period: int = PERIOD_S

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.gap_mask is None:
            self.gap_mask = np.zeros(self.values.shape, dtype=bool)
        self.gap_mask = np.asarray(self.gap_mask, dtype=bool)
        if self.values.ndim != 1 or self.values.shape != self.gap_mask.shape:
            raise ContractError("values and gap_mask must be 1-D arrays of equal length")
        ok = self.values[~self.gap_mask]
        if not np.all(np.isfinite(ok)) or np.any(ok < 0):
            raise ContractError("non-gap power values must be finite and nonnegative")

    def __len__(self):
        return self.values.size

    @property
    def timestamps(self):
        return self.start_time + self.period * np.arange(len(self), dtype=np.int64)

    def filled(self, fill=0.0):
        """Values with gap samples replaced by ``fill``."""
        return np.where(self.gap_mask, fill, self.values)


@dataclass
class HouseRecord:
    house_id: str
    aggregate: PowerTrace
    appliances: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, tr in self.appliances.items():
            if (tr.start_time, tr.period, len(tr)) != (
                self.aggregate.start_time, self.aggregate.period, len(self.aggregate)
            ):
                raise ContractError(f"appliance trace {name!r} is not aligned with the aggregate")

    def gap_mask(self, appliance=None):
        mask = self.aggregate.gap_mask.copy()
        if appliance is not None:
            mask |= self.appliance(appliance).gap_mask
        return mask

    def appliance(self, name):
        try:
            return self.appliances[name]
        except KeyError:
            raise ContractError(f"house {self.house_id!r} has no channel {name!r}") from None


@dataclass
class ApplianceSpec:
    name: str
    on_threshold: float
    window_stride: int
    batch_size: int
    category: str = "on_off"

    def __post_init__(self):
        if self.on_threshold <= 0:
            raise ContractError("on_threshold must be positive")
        if self.window_stride < 1:
            raise ContractError("window_stride must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.category not in ("on_off", "multi_state"):
            raise ContractError(f"unknown appliance category {self.category!r}")

    def check_window(self, window_len):
        if not 1 <= self.window_stride <= window_len:
            raise ContractError(f"stride {self.window_stride} must lie in [1, {window_len}]")

    def to_dict(self):
        return {
            "name": self.name,
            "on_threshold": self.on_threshold,
            "window_stride": self.window_stride,
            "batch_size": self.batch_size,
            "category": self.category,
        }


# ON thresholds in watts; stride/batch for T = 1024 windows.
APPLIANCES = {
    "fridge": ApplianceSpec("fridge", 50.0, 64, 150, "on_off"),
    "kettle": ApplianceSpec("kettle", 2000.0, 64, 150, "on_off"),
    "microwave": ApplianceSpec("microwave", 200.0, 64, 150, "on_off"),
    "washing_machine": ApplianceSpec("washing_machine", 20.0, 256, 32, "multi_state"),
    "dishwasher": ApplianceSpec("dishwasher", 10.0, 256, 32, "multi_state"),
}


# ----------------------------------------------------------------------------
# Ingestion


def _parse_row(parts, lineno):
    if len(parts) != 2:
        raise TraceFormatError(f"expected 2 fields, got {len(parts)}", lineno)
    try:
        ts = int(parts[0])
        watts = float(parts[1])
    except ValueError:
        raise TraceFormatError(f"cannot parse {' '.join(parts)!r}", lineno) from None
    if not math.isfinite(watts) or watts < 0:
        raise TraceFormatError(f"power must be a finite nonnegative number, got {parts[1]!r}", lineno)
    return ts, watts


def load_trace(path, fmt="csv"):
    """Read ``(timestamps, watts)`` from a trace file.

    ``fmt`` is ``"csv"`` (optional ``timestamp,power_w`` header) or
    ``"whitespace_pairs"`` (UK-DALE channel style). Samples are returned
    sorted by timestamp; for duplicate timestamps the last row wins.
    """
    if fmt not in ("csv", "whitespace_pairs"):
        raise ContractError(f"unknown trace format {fmt!r}")
    ts, w = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")] if fmt == "csv" else line.split()
            if fmt == "csv" and lineno == 1 and parts and not _looks_numeric(parts[0]):
                continue
            t, v = _parse_row(parts, lineno)
            ts.append(t)
            w.append(v)
    if not ts:
        raise ContractError(f"trace file {path} contains no samples")
    ts = np.asarray(ts, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ts, w = ts[order], w[order]
    # keep the last occurrence of each timestamp
    keep = np.ones(ts.size, dtype=bool)
    keep[:-1] = ts[1:] != ts[:-1]
    return ts[keep], w[keep]


def _looks_numeric(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_trace_csv(path, trace, decimals=3):
    """Write a trace in the ``timestamp,power_w`` CSV form; gap samples are left empty."""
    ts = trace.timestamps
    lines = ["timestamp,power_w"]
    fmt = f"{{:.{decimals}f}}"
    for t, v, gap in zip(ts.tolist(), trace.values.tolist(), trace.gap_mask.tolist()):
        lines.append(f"{t}," if gap else f"{t},{fmt.format(v)}")
    atomic_write(path, "\n".join(lines) + "\n", mode="w")


def read_trace_csv(path):
    """Read a CSV written by :func:`write_trace_csv` back into a :class:`PowerTrace`."""
    ts, vals, gaps = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and not _looks_numeric(line.split(",")[0])):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TraceFormatError("expected 2 fields", lineno)
            if parts[1] == "":
                ts.append(int(parts[0]))
                vals.append(0.0)
                gaps.append(True)
            else:
                t, v = _parse_row(parts, lineno)
                ts.append(t)
                vals.append(v)
                gaps.append(False)
    if not ts:
        raise ContractError(f"trace file {path} contains no samples")
    ts = np.asarray(ts, dtype=np.int64)
    period = int(ts[1] - ts[0]) if ts.size > 1 else PERIOD_S
    if ts.size > 1 and np.any(np.diff(ts) != period):
        raise ContractError(f"{path} is not on a regular grid")
    return PowerTrace(int(ts[0]), np.asarray(vals), np.asarray(gaps), period)


def resample_align(timestamps, watts, period=PERIOD_S, tolerance=TOLERANCE_S, start=None, end=None):
    """Snap irregular samples onto a regular grid.

    Each grid point from ``start`` (default: first timestamp) up to ``end``
    (default: last timestamp) takes the nearest sample within ``tolerance``
    seconds, the earlier one on ties; otherwise it is marked as a gap.
    """
    timestamps = np.asarray(timestamps, dtype=np.int64)
    watts = np.asarray(watts, dtype=np.float64)
    if timestamps.size == 0:
        raise ContractError("no samples to align")
    start = int(timestamps[0]) if start is None else int(start)
    end = int(timestamps[-1]) if end is None else int(end)
    if end < start:
        raise ContractError("alignment end precedes start")
    grid = np.arange(start, end + 1, period, dtype=np.int64)
    right = np.clip(np.searchsorted(timestamps, grid, side="left"), 0, timestamps.size - 1)
    left = np.clip(right - 1, 0, timestamps.size - 1)
    d_right = np.abs(timestamps[right] - grid)
    d_left = np.abs(timestamps[left] - grid)
    use_left = d_left <= d_right
    idx = np.where(use_left, left, right)
    dist = np.where(use_left, d_left, d_right)
    gap = dist > tolerance
    values = np.where(gap, 0.0, watts[idx])
    return PowerTrace(start, values, gap, period)


def align_house(house_id, mains, appliances, period=PERIOD_S, tolerance=TOLERANCE_S):
    """Build a :class:`HouseRecord` on the grid common to all channels.

    ``mains`` and each value of ``appliances`` are ``(timestamps, watts)`` pairs.
    """
    channels = [mains, *appliances.values()]
    start = max(int(ts[0]) for ts, _ in channels)
    end = min(int(ts[-1]) for ts, _ in channels)
    if end < start:
        raise ContractError(f"house {house_id!r}: channels do not overlap in time")
    agg = resample_align(*mains, period, tolerance, start, end)
    apps = {
        name: resample_align(ts, w, period, tolerance, start, end)
        for name, (ts, w) in appliances.items()
    }
    return HouseRecord(str(house_id), agg, apps)


# ----------------------------------------------------------------------------
# Standardization


@dataclass
class StandardizationStats:
    """z-score constants for the aggregate and a max-scale for the target (all in watts)."""

    input_mean: float
    input_std: float
    target_scale: float

    def __post_init__(self):
        if not self.input_std > 0:
            raise ContractError("input_std must be positive")
        if not self.target_scale > 0:
            raise ContractError("target_scale must be positive")

    def apply_input(self, x):
        return (np.asarray(x, dtype=np.float64) - self.input_mean) / self.input_std

    def invert_input(self, x):
        return np.asarray(x, dtype=np.float64) * self.input_std + self.input_mean

    def apply_target(self, y):
        return np.asarray(y, dtype=np.float64) / self.target_scale

    def invert_target(self, y):
        return np.maximum(np.asarray(y, dtype=np.float64) * self.target_scale, 0.0)

    def to_dict(self):
        return {
            "input_mean": self.input_mean,
            "input_std": self.input_std,
            "target_scale": self.target_scale,
        }


def standardize_fit(aggregates, targets):
    """Fit standardization constants on training traces only (gap samples ignored)."""
    x = np.concatenate([_valid(t) for t in aggregates])
    y = np.concatenate([_valid(t) for t in targets])
    if x.size == 0 or y.size == 0:
        raise ContractError("no valid samples to fit standardization")
    std = float(x.std())
    if std == 0.0:
        raise ContractError("aggregate training signal has zero variance")
    scale = float(y.max())
    if scale <= 0.0:
        raise ContractError("target appliance never draws power in the training data")
    return StandardizationStats(float(x.mean()), std, scale)


def _valid(trace):
    if isinstance(trace, PowerTrace):
        return trace.values[~trace.gap_mask]
    return np.asarray(trace, dtype=np.float64).ravel()


# ----------------------------------------------------------------------------
# Windows


@dataclass
class WindowSet:
    """Paired aggregate/target windows of shape ``[n, 1, T]`` plus origin offsets."""

    inputs: np.ndarray
    targets: np.ndarray
    origins: np.ndarray
    source_length: int = 0

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def window_len(self):
        return self.inputs.shape[2]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        targets = None if self.targets is None else self.targets[idx]
        return WindowSet(self.inputs[idx], targets, self.origins[idx], self.source_length)


def window_signal(values, gap_mask, T, S, drop_gaps=True):
    """Slice a 1-D signal into windows starting at 0, S, 2S, ...

    The tail is zero-padded so the last window ends at or after the final
    sample. Returns ``(windows [n, T], origins, padded_length)``.
    """
    values = np.asarray(values)
    L = values.size
    if L < T:
        raise ContractError(f"trace of length {L} is shorter than the window length {T}")
    if not 1 <= S <= T:
        raise ContractError(f"stride {S} must lie in [1, {T}]")
    n = -(-(L - T) // S) + 1
    padded = (n - 1) * S + T
    buf = np.zeros(padded, dtype=values.dtype)
    buf[:L] = values
    origins = np.arange(n, dtype=np.int64) * S
    if drop_gaps and gap_mask is not None and np.any(gap_mask):
        gaps = np.zeros(padded + 1, dtype=np.int64)
        gaps[1:L + 1] = np.cumsum(np.asarray(gap_mask, dtype=np.int64))
        gaps[L + 1:] = gaps[L]
        origins = origins[gaps[origins + T] - gaps[origins] == 0]
    view = np.lib.stride_tricks.sliding_window_view(buf, T)
    return view[origins].copy(), origins, padded


def make_windows(house, appliance, T, S, stats=None, drop_gaps=True, dtype=np.float32):
    """Paired windows of the aggregate and one appliance channel.

    With ``stats`` the inputs are z-scored and the targets max-scaled.
    ``appliance=None`` yields input windows only (targets is None).
    Windows overlapping a gap in either channel are dropped unless
    ``drop_gaps`` is False.
    """
    mask = house.gap_mask(appliance)
    x = house.aggregate.filled()
    if stats is not None:
        x = stats.apply_input(x)
    xw, origins, _ = window_signal(x, mask, T, S, drop_gaps)
    yw = None
    if appliance is not None:
        y = house.appliance(appliance).filled()
        if stats is not None:
            y = stats.apply_target(y)
        yw, _, _ = window_signal(y, mask, T, S, drop_gaps)
    inputs = xw[:, None, :].astype(dtype)
    targets = None if yw is None else yw[:, None, :].astype(dtype)
    return WindowSet(inputs, targets, origins, len(house.aggregate))


def concat_windows(sets):
    sets = [s for s in sets if len(s)]
    if not sets:
        raise ContractError("no windows to concatenate")
    return WindowSet(
        np.concatenate([s.inputs for s in sets]),
        np.concatenate([s.targets for s in sets]),
        np.concatenate([s.origins for s in sets]),
        sum(s.source_length for s in sets),
    )


def split_train_val(ws, ratio=0.8, seed=0):
    """Seeded shuffle of window indices; the first ``ratio`` share becomes training data."""
    n = len(ws)
    if n < 5:
        raise ContractError(f"need at least 5 windows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    return ws.subset(np.sort(perm[:n_train])), ws.subset(np.sort(perm[n_train:]))


def subsample_fraction(ws, fraction=0.15, seed=0):
    """Uniform sample of ``round(fraction * n)`` windows without replacement, order preserved."""
    if not 0 < fraction <= 1:
        raise ContractError("fraction must lie in (0, 1]")
    n = len(ws)
    k = int(round(fraction * n))
    idx = np.random.default_rng(seed).choice(n, size=k, replace=False)
    return ws.subset(np.sort(idx))


# ----------------------------------------------------------------------------
# Synthetic houses


@dataclass
class Phase:
    """One plateau of an activation. ``alt_level_w`` makes the phase alternate between two levels."""

    level_w: tuple
    duration_s: tuple
    alt_level_w: tuple = None
    alt_period_s: tuple = (60.0, 120.0)


@dataclass
class ApplianceProfile:
    """Parametric activation generator.

    ``kind`` is ``"rectangular"`` (single plateau per activation),
    ``"periodic"`` (back-to-back on/off cycles) or ``"phased"`` (ordered
    list of :class:`Phase`). Ranges are ``(low, high)`` uniform draws.
    """

    name: str
    kind: str
    amplitude_w: tuple = (0.0, 0.0)
    duration_s: tuple = (60.0, 60.0)
    gap_s: tuple = (3600.0, 7200.0)
    phases: list = field(default_factory=list)
    category: str = "on_off"

    def __post_init__(self):
        if self.kind not in ("rectangular", "periodic", "phased"):
            raise ContractError(f"unknown profile kind {self.kind!r}")
        if min(self.amplitude_w) < 0 or any(min(p.level_w) < 0 for p in self.phases):
            raise ContractError("amplitude ranges must be nonnegative")
        if self.kind == "phased" and not self.phases:
            raise ContractError("phased profiles need at least one phase")


def _kettle():
    return ApplianceProfile("kettle", "rectangular", (2000.0, 3000.0), (60.0, 180.0),
                            (1800.0, 4 * 3600.0))


def _fridge():
    return ApplianceProfile("fridge", "periodic", (80.0, 120.0), (900.0, 1500.0),
                            (1200.0, 2400.0))


def _microwave():
    return ApplianceProfile("microwave", "rectangular", (900.0, 1400.0), (30.0, 300.0),
                            (3 * 3600.0, 8 * 3600.0))


def _washing_machine():
    phases = [
        Phase((1800.0, 2200.0), (480.0, 900.0)),
        Phase((120.0, 250.0), (600.0, 1200.0), alt_level_w=(400.0, 600.0), alt_period_s=(60.0, 120.0)),
        Phase((300.0, 500.0), (240.0, 480.0)),
    ]
    return ApplianceProfile("washing_machine", "phased", gap_s=(6 * 3600.0, 20 * 3600.0),
                            phases=phases, category="multi_state")


def _dishwasher():
    phases = [
        Phase((1800.0, 2100.0), (600.0, 1200.0)),
        Phase((60.0, 120.0), (900.0, 1800.0)),
        Phase((1800.0, 2100.0), (600.0, 900.0)),
        Phase((15.0, 40.0), (600.0, 1200.0)),
    ]
    return ApplianceProfile("dishwasher", "phased", gap_s=(12 * 3600.0, 30 * 3600.0),
                            phases=phases, category="multi_state")


PROFILES = {
    "kettle": _kettle,
    "fridge": _fridge,
    "microwave": _microwave,
    "washing_machine": _washing_machine,
    "dishwasher": _dishwasher,
}


@dataclass
class SyntheticHouseConfig:
    duration: int
    appliances: list
    distractors: int = 3
    noise_std: float = 5.0
    seed: int = 0
    house_id: str = "synthetic"
    start_time: int = 0
    period: int = PERIOD_S

    def __post_init__(self):
        if self.noise_std < 0:
            raise ContractError("noise_std must be nonnegative")
        if self.duration < 1:
            raise ContractError("duration must be at least one sample")
        if not self.appliances:
            raise ContractError("at least one appliance must be configured")
        self.appliances = [PROFILES[a]() if isinstance(a, str) else a for a in self.appliances]


def _samples(rng, range_s, period):
    lo, hi = range_s
    return max(1, int(round(rng.uniform(lo, hi) / period)))


def _render_activation(profile, rng, period):
    if profile.kind == "rectangular":
        n = _samples(rng, profile.duration_s, period)
        return np.full(n, rng.uniform(*profile.amplitude_w))
    parts = []
    for ph in profile.phases:
        n = _samples(rng, ph.duration_s, period)
        level = rng.uniform(*ph.level_w)
        if ph.alt_level_w is None:
            parts.append(np.full(n, level))
            continue
        alt = rng.uniform(*ph.alt_level_w)
        seg = np.empty(n)
        i, use_alt = 0, False
        while i < n:
            k = _samples(rng, ph.alt_period_s, period)
            seg[i:i + k] = alt if use_alt else level
            i += k
            use_alt = not use_alt
        parts.append(seg)
    return np.concatenate(parts)


def _render_profile(profile, duration, rng, period):
    out = np.zeros(duration)
    if profile.kind == "periodic":
        t = int(rng.integers(0, _samples(rng, profile.gap_s, period) + 1))
        while t < duration:
            on = _samples(rng, profile.duration_s, period)
            out[t:t + on] = rng.uniform(*profile.amplitude_w)
            t += on + _samples(rng, profile.gap_s, period)
        return out
    t = _samples(rng, (0.0, profile.gap_s[1]), period)
    while t < duration:
        act = _render_activation(profile, rng, period)
        out[t:t + act.size] = act[:max(0, duration - t)]
        t += act.size + _samples(rng, profile.gap_s, period)
    return out


def _random_distractor(rng, i):
    amp = rng.uniform(50.0, 1500.0)
    dur = rng.uniform(300.0, 3600.0)
    return ApplianceProfile(f"distractor_{i}", "rectangular", (0.8 * amp, 1.2 * amp),
                            (0.5 * dur, 1.5 * dur), (2 * 3600.0, 10 * 3600.0))


def synth_house(cfg):
    """Generate a :class:`HouseRecord`; fully determined by ``cfg.seed``."""
    root = np.random.SeedSequence(cfg.seed)
    app_seeds, distractor_seeds, noise_seed = root.spawn(3)
    app_rngs = [np.random.default_rng(s) for s in app_seeds.spawn(len(cfg.appliances))]
    appliances = {}
    total = np.zeros(cfg.duration)
    for profile, rng in zip(cfg.appliances, app_rngs):
        trace = _render_profile(profile, cfg.duration, rng, cfg.period)
        appliances[profile.name] = PowerTrace(cfg.start_time, trace, None, cfg.period)
        total += trace
    for i, s in enumerate(distractor_seeds.spawn(cfg.distractors)):
        rng = np.random.default_rng(s)
        total += _render_profile(_random_distractor(rng, i), cfg.duration, rng, cfg.period)
    if cfg.noise_std > 0:
        total = total + np.random.default_rng(noise_seed).normal(0.0, cfg.noise_std, cfg.duration)
        total = np.maximum(total, 0.0)
    return HouseRecord(cfg.house_id, PowerTrace(cfg.start_time, total, None, cfg.period), appliances)
