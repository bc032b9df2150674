"""Command-line entry point: ``vaenilm {synth,train,disagg,eval,gradcheck}``.

Exit codes: 0 success, 1 verification failure, 2 user/config/data error,
3 numerical failure. Settings come from an optional TOML (or JSON) file given
with ``--config``; command-line flags override file keys.
"""

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, ModelCheckpoint, atomic_write
from .evaluation import MetricsReport, ScenarioResult, disaggregate, evaluate
from .ndkernel import ContractError, EvaluationError
from .pipeline import (
    APPLIANCES,
    PERIOD_S,
    ApplianceSpec,
    HouseRecord,
    SyntheticHouseConfig,
    TraceFormatError,
    align_house,
    concat_windows,
    load_trace,
    make_windows,
    read_trace_csv,
    resample_align,
    split_train_val,
    standardize_fit,
    subsample_fraction,
    synth_house,
    write_trace_csv,
)
from .trainer import NumericalError, TrainConfig, train
from .vae import ModelConfig, VaeNilm

__all__ = ["ConfigError", "RunConfig", "load_config", "derive_seed", "main"]

log = logging.getLogger("vaenilm")

EXIT_OK, EXIT_VERIFY, EXIT_USER, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.vnlm"
PREDICTION_NAME = "prediction.csv"
METRICS_NAME = "metrics.json"
_REP_DIR = re.compile(r"^rep_\d+$")
_SECTIONS = {"seed", "out", "synth", "data", "scenario", "appliance", "model", "train", "disagg", "eval"}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def derive_seed(seed, *keys):
    """Independent 63-bit seed for a (run seed, key...) tuple."""
    state = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


# ----------------------------------------------------------------------------
# Configuration


def load_config(path):
    """Parse a TOML file (JSON when the suffix is ``.json``) into a dict."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if path.suffix.lower() == ".json":
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _dataclass_from(cls, section, what, **defaults):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(sorted(unknown))}")
    kwargs = {**defaults, **section}
    if "channels" in kwargs:
        kwargs["channels"] = tuple(kwargs["channels"])
    try:
        return cls(**kwargs)
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from None


@dataclasses.dataclass
class RunConfig:
    """Validated settings for one CLI invocation."""

    seed: int = 0
    out: Path = Path("out")
    base_dir: Path = Path(".")
    synth: dict = dataclasses.field(default_factory=dict)
    data_dir: Path = None
    houses: dict = dataclasses.field(default_factory=dict)
    appliance: ApplianceSpec = None
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    train_houses: list = dataclasses.field(default_factory=list)
    test_house: str = None
    oversized: set = dataclasses.field(default_factory=set)
    repetitions: int = 10
    val_ratio: float = 0.8
    oversized_fraction: float = 0.15
    window_len_override: int = None
    train_log_time: bool = False
    disagg: dict = dataclasses.field(default_factory=dict)
    eval: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, base_dir="."):
        unknown = set(d) - _SECTIONS
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        scenario = dict(d.get("scenario", {}))
        known = {"appliance", "train_houses", "test_house", "oversized", "repetitions",
                 "val_ratio", "oversized_fraction"}
        if set(scenario) - known:
            raise ConfigError(f"unknown scenario keys: {', '.join(sorted(set(scenario) - known))}")

        appliance = None
        name = scenario.get("appliance")
        overrides = dict(d.get("appliance", {}))
        if name is not None:
            base = APPLIANCES[name].to_dict() if name in APPLIANCES else {"name": name}
            appliance = _dataclass_from(ApplianceSpec, {**base, **overrides}, "appliance")
        elif overrides:
            raise ConfigError("appliance overrides given without scenario.appliance")

        model_section = dict(d.get("model", {}))
        model = _dataclass_from(ModelConfig, model_section, "model")
        train_section = dict(d.get("train", {}))
        train_defaults = {"seed": seed}
        if appliance is not None:
            train_defaults["batch_size"] = appliance.batch_size
        train_defaults["beta_kl"] = model.beta_kl
        train_cfg = _dataclass_from(TrainConfig, train_section, "train", **train_defaults)

        data = dict(d.get("data", {}))
        base_dir = Path(base_dir)
        data_dir = data.get("dir")
        window_len = d.get("disagg", {}).get("window_len", model_section.get("window_len"))
        rc = cls(
            seed=seed,
            out=Path(d.get("out", "out")),
            base_dir=base_dir,
            synth=dict(d.get("synth", {})),
            data_dir=None if data_dir is None else base_dir / data_dir,
            houses={str(k): dict(v) for k, v in data.get("houses", {}).items()},
            appliance=appliance,
            model=model,
            train=train_cfg,
            train_houses=[str(h) for h in scenario.get("train_houses", [])],
            test_house=None if scenario.get("test_house") is None else str(scenario["test_house"]),
            oversized={str(h) for h in scenario.get("oversized", [])},
            repetitions=int(scenario.get("repetitions", 10)),
            val_ratio=float(scenario.get("val_ratio", 0.8)),
            oversized_fraction=float(scenario.get("oversized_fraction", 0.15)),
            window_len_override=window_len,
            disagg=dict(d.get("disagg", {})),
            eval=dict(d.get("eval", {})),
        )
        rc.validate()
        return rc

    def validate(self):
        if self.test_house is not None and self.test_house in self.train_houses:
            raise ConfigError(f"test house {self.test_house!r} is also a training house")
        if len(set(self.train_houses)) != len(self.train_houses):
            raise ConfigError("training houses must be distinct")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not 0 < self.val_ratio < 1:
            raise ConfigError("val_ratio must lie in (0, 1)")
        if not 0 < self.oversized_fraction <= 1:
            raise ConfigError("oversized_fraction must lie in (0, 1]")
        stray = self.oversized - set(self.train_houses)
        if stray and self.train_houses:
            raise ConfigError(f"oversized houses not in train_houses: {', '.join(sorted(stray))}")

    def require_appliance(self):
        if self.appliance is None:
            raise ConfigError("no appliance configured (scenario.appliance or --appliance)")
        return self.appliance


# ----------------------------------------------------------------------------
# Data access


def _path(rc, p):
    p = Path(p)
    return p if p.is_absolute() else rc.base_dir / p


def load_house(rc, house_id, channels):
    """Load one house with the requested appliance channels.

    A ``[data.houses.<id>]`` entry with ``mains`` names raw per-channel files
    (aligned here onto the 6 s grid); otherwise ``<data.dir>/<id>/`` must hold
    gridded ``aggregate.csv`` and ``<channel>.csv`` files.
    """
    entry = rc.houses.get(house_id, {})
    if "mains" in entry:
        fmt = entry.get("format", "csv")
        files = entry.get("channels", {})
        missing = [c for c in channels if c not in files]
        if missing:
            raise ContractError(f"house {house_id!r}: missing appliance channel {missing[0]!r}")
        mains = load_trace(_path(rc, entry["mains"]), fmt)
        apps = {c: load_trace(_path(rc, files[c]), fmt) for c in channels}
        return align_house(house_id, mains, apps)
    directory = _path(rc, entry["dir"]) if "dir" in entry else None
    if directory is None:
        if rc.data_dir is None:
            raise ConfigError(f"no data location for house {house_id!r} (data.dir or data.houses)")
        directory = rc.data_dir / house_id
    agg_file = directory / "aggregate.csv"
    if not agg_file.is_file():
        raise ContractError(f"house {house_id!r}: missing aggregate trace {agg_file}")
    agg = read_trace_csv(agg_file)
    apps = {}
    for c in channels:
        f = directory / f"{c}.csv"
        if not f.is_file():
            raise ContractError(f"house {house_id!r}: missing appliance channel {c!r} ({f})")
        apps[c] = read_trace_csv(f)
    return HouseRecord(house_id, agg, apps)


def _read_any_trace(rc, path, fmt="csv"):
    path = Path(path)
    if fmt == "whitespace_pairs":
        return resample_align(*load_trace(path, fmt))
    return read_trace_csv(path)


def _expand(paths, filename):
    """Files stay as given; directories expand to every ``filename`` below them."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            found = sorted(p.rglob(filename))
            if not found:
                raise ContractError(f"no {filename} under {p}")
            out.extend(found)
        elif p.is_file():
            out.append(p)
        else:
            raise ContractError(f"no such file or directory: {p}")
    return out


def _rep_name(path, i):
    parent = Path(path).parent.name
    return parent if _REP_DIR.match(parent) else f"rep_{i:02d}"


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n", mode="w")


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ContractError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise ContractError(f"output directory {path} is not writable")


def write_svg(path, series, period=PERIOD_S, width=1200, height=300, max_points=4000):
    """Minimal line plot: one polyline per named series."""
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    n = max(len(v) for v in series.values())
    step = max(1, -(-n // max_points))
    top = max(float(np.max(v)) for v in series.values()) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 20}" '
        f'viewBox="0 0 {width} {height + 20}">',
        f'<rect width="{width}" height="{height + 20}" fill="white"/>',
    ]
    for k, (name, values) in enumerate(series.items()):
        v = np.asarray(values, dtype=np.float64)[::step]
        xs = np.arange(v.size) * step * (width - 1) / max(n - 1, 1)
        ys = height - v / top * (height - 10)
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        c = colours[k % len(colours)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1" points="{pts}"/>')
        parts.append(f'<text x="{10 + 150 * k}" y="{height + 15}" font-size="12" fill="{c}">{name}</text>')
    parts.append("</svg>")
    atomic_write(path, "\n".join(parts) + "\n", mode="w")


# ----------------------------------------------------------------------------
# Commands


def cmd_synth(rc):
    s = dict(rc.synth)
    houses = s.pop("houses", 3)
    ids = [f"house_{i + 1}" for i in range(houses)] if isinstance(houses, int) else [str(h) for h in houses]
    days = s.pop("days", 2)
    samples = int(s.pop("samples", round(days * 86400 / PERIOD_S)))
    appliances = list(s.pop("appliances", ["kettle", "washing_machine"]))
    kwargs = {k: s.pop(k) for k in ("distractors", "noise_std", "start_time") if k in s}
    if s:
        raise ConfigError(f"unknown synth keys: {', '.join(sorted(s))}")
    if not ids:
        raise ConfigError("synth needs at least one house")
    if not appliances:
        raise ConfigError("synth needs at least one appliance")
    bad = [a for a in appliances if a not in APPLIANCES]
    if bad:
        raise ConfigError(f"unknown synthetic appliance {bad[0]!r}")
    _mkdir(rc.out)
    manifest = {"seed": rc.seed, "samples": samples, "period_s": PERIOD_S, "appliances": appliances, "houses": {}}
    for i, hid in enumerate(ids):
        try:
            cfg = SyntheticHouseConfig(samples, appliances, seed=derive_seed(rc.seed, i), house_id=hid, **kwargs)
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
        house = synth_house(cfg)
        d = rc.out / hid
        _mkdir(d)
        write_trace_csv(d / "aggregate.csv", house.aggregate)
        for name, tr in house.appliances.items():
            write_trace_csv(d / f"{name}.csv", tr)
        manifest["houses"][hid] = {
            "seed": cfg.seed,
            "files": ["aggregate.csv"] + [f"{a}.csv" for a in appliances],
        }
        log.info("wrote %s (%d samples)", d, samples)
    _write_json(rc.out / "manifest.json", manifest)
    return EXIT_OK


def _training_windows(rc, spec):
    T = rc.model.window_len
    spec.check_window(T)
    if not rc.train_houses:
        raise ConfigError("no training houses configured (scenario.train_houses)")
    houses = [load_house(rc, h, [spec.name]) for h in rc.train_houses]
    stats = standardize_fit([h.aggregate for h in houses], [h.appliance(spec.name) for h in houses])
    sets = []
    for i, h in enumerate(houses):
        ws = make_windows(h, spec.name, T, spec.window_stride, stats)
        if h.house_id in rc.oversized:
            ws = subsample_fraction(ws, rc.oversized_fraction, seed=derive_seed(rc.seed, 1, i))
        log.info("house %s: %d windows", h.house_id, len(ws))
        sets.append(ws)
    return concat_windows(sets), stats


def cmd_train(rc):
    spec = rc.require_appliance()
    windows, stats = _training_windows(rc, spec)
    _mkdir(rc.out)
    for r in range(rc.repetitions):
        rep_seed = derive_seed(rc.seed, 2, r)
        tr, va = split_train_val(windows, rc.val_ratio, seed=rep_seed)
        model = VaeNilm(rc.model, seed=rep_seed)
        ck, tlog = train(model, tr, va, dataclasses.replace(rc.train, seed=rep_seed), stats, spec)
        ck.extra = {"train_houses": rc.train_houses, "repetition": r, "best_epoch": tlog.best_epoch}
        d = rc.out / f"rep_{r:02d}"
        _mkdir(d)
        ck.save(d / CHECKPOINT_NAME)
        blob = ck.to_bytes()
        if ModelCheckpoint.load(d / CHECKPOINT_NAME).to_bytes() != blob:
            print(f"checkpoint round trip failed for {d / CHECKPOINT_NAME}", file=sys.stderr)
            return EXIT_VERIFY
        tlog.write_csv(d / "train_log.csv", include_time=bool(rc.train_log_time))
        print(f"rep {r}: best epoch {tlog.best_epoch}, val loss {min(tlog.val_loss):.6g} -> {d / CHECKPOINT_NAME}")
    return EXIT_OK


def _target_trace(rc, section, key, channel):
    """Aggregate (``key="input"``) or appliance (``key="truth"``) trace from a file or a configured house."""
    if section.get(key):
        return _read_any_trace(rc, _path(rc, section[key]), section.get("format", "csv"))
    house = section.get("house") or rc.test_house
    if house is None:
        raise ConfigError(f"no {key} trace given (--{key} or --house)")
    rec = load_house(rc, str(house), [channel])
    return rec.aggregate if key == "input" else rec.appliance(channel)


def cmd_disagg(rc):
    paths = rc.disagg.get("checkpoints") or []
    if not paths:
        raise ConfigError("no checkpoint given (--checkpoint)")
    ckpts = [(p, ModelCheckpoint.load(p)) for p in _expand([_path(rc, p) for p in paths], CHECKPOINT_NAME)]
    names = {ck.appliance.name for _, ck in ckpts if ck.appliance is not None}
    if len(names) > 1:
        raise ContractError(f"checkpoints disagree on the appliance: {sorted(names)}")
    channel = names.pop() if names else rc.require_appliance().name
    aggregate = _target_trace(rc, rc.disagg, "input", channel)
    _mkdir(rc.out)
    for i, (p, ck) in enumerate(ckpts):
        T = ck.config.window_len
        if rc.window_len_override is not None and int(rc.window_len_override) != T:
            raise ContractError(f"{p}: checkpoint window length {T} != requested {rc.window_len_override}")
        spec = ck.appliance or rc.require_appliance()
        pred = disaggregate(ck, aggregate, spec, stride=rc.disagg.get("stride"))
        d = rc.out / _rep_name(p, i)
        _mkdir(d)
        write_trace_csv(d / PREDICTION_NAME, pred)
        print(f"{p} -> {d / PREDICTION_NAME} ({len(pred)} samples)")
    return EXIT_OK


def _load_reports(paths):
    reports = []
    for p in _expand(paths, METRICS_NAME):
        with open(p, encoding="utf-8") as fh:
            d = json.load(fh)
        try:
            reports.append(MetricsReport.from_dict(d))
        except (KeyError, TypeError):
            raise ContractError(f"{p} is not a metrics report") from None
    return reports


def cmd_eval(rc):
    spec = rc.require_appliance()
    paths = rc.eval.get("predictions") or []
    if not paths:
        raise ConfigError("no prediction traces given (--pred)")
    preds = _expand([_path(rc, p) for p in paths], PREDICTION_NAME)
    truth = _target_trace(rc, rc.eval, "truth", spec.name)
    _mkdir(rc.out)
    reports = []
    for i, p in enumerate(preds):
        pred = read_trace_csv(p)
        report = evaluate(pred, truth, spec)
        d = rc.out / _rep_name(p, i)
        _mkdir(d)
        _write_json(d / METRICS_NAME, report.to_dict())
        if rc.eval.get("plot"):
            write_svg(d / "prediction.svg", {"truth": truth.filled(), "prediction": pred.filled()}, truth.period)
        reports.append(report)
        print(f"{p}: mae {report.mae:.3f} W  f1 {report.f1:.3f}")
    result = ScenarioResult(reports)
    compare = rc.eval.get("compare")
    other = ScenarioResult(_load_reports([_path(rc, c) for c in compare])) if compare else None
    summary = result.to_dict(other)
    summary["appliance"] = spec.name
    _write_json(rc.out / "scenario.json", summary)
    return EXIT_OK


def cmd_gradcheck(rc, only=None):
    from .gradcheck import CHECKS, run_suite

    names = [c[0] for c in CHECKS]
    if only:
        bad = [n for n in only if n not in names]
        if bad:
            raise ConfigError(f"unknown check {bad[0]!r}; choose from: {', '.join(names)}")
    results = run_suite(seed=rc.seed, checks=only)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# ----------------------------------------------------------------------------
# Argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="TOML or JSON settings file")
    common.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="vaenilm", parents=[common],
                                     description="Energy disaggregation with a convolutional VAE.")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("synth", parents=[common], help="generate synthetic houses")
    p.add_argument("--houses", type=int, default=S, help="number of houses")
    p.add_argument("--days", type=float, default=S)
    p.add_argument("--samples", type=int, default=S, help="samples per trace (overrides --days)")
    p.add_argument("--appliances", nargs="+", default=S)

    p = sub.add_parser("train", parents=[common], help="train one model per repetition")
    p.add_argument("--data", default=S, help="directory of house folders")
    p.add_argument("--appliance", default=S)
    p.add_argument("--train-houses", nargs="+", default=S)
    p.add_argument("--test-house", default=S)
    p.add_argument("--oversized", nargs="+", default=S, help="houses reduced to 15%% of their windows")
    p.add_argument("--repetitions", type=int, default=S)
    p.add_argument("--epochs", type=int, default=S, help="maximum epochs")
    p.add_argument("--log-time", action="store_true", default=S, help="add wall-clock seconds to the log")

    p = sub.add_parser("disagg", parents=[common], help="predict an appliance trace")
    p.add_argument("--checkpoint", nargs="+", default=S, help="checkpoint files or run directories")
    p.add_argument("--input", default=S, help="aggregate trace CSV")
    p.add_argument("--format", choices=["csv", "whitespace_pairs"], default=S)
    p.add_argument("--house", default=S, help="take the aggregate of this configured house")
    p.add_argument("--data", default=S)
    p.add_argument("--stride", type=int, default=S)
    p.add_argument("--window-len", type=int, default=S, help="expected checkpoint window length")
    p.add_argument("--appliance", default=S)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--pred", nargs="+", default=S, help="prediction files or directories")
    p.add_argument("--truth", default=S, help="ground-truth appliance trace CSV")
    p.add_argument("--format", choices=["csv", "whitespace_pairs"], default=S)
    p.add_argument("--house", default=S)
    p.add_argument("--data", default=S)
    p.add_argument("--appliance", default=S)
    p.add_argument("--compare", nargs="+", default=S, help="metrics files or directories of another run")
    p.add_argument("--plot", action="store_true", default=S, help="write SVG line plots")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all backward passes")
    p.add_argument("--only", nargs="+", default=S, help="run only the named checks")
    return parser


def _merge(cfg, args):
    """Fold command-line flags into the config dict (flags win)."""
    a = dict(vars(args))
    # flag paths are relative to the working directory, config paths to the config file
    for k in ("data", "input", "truth", "out"):
        if k in a:
            a[k] = str(Path(a[k]).absolute())
    for k in ("checkpoint", "pred", "compare"):
        if k in a:
            a[k] = [str(Path(x).absolute()) for x in a[k]]
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in cfg.items()}
    for key in ("seed", "out"):
        if key in a:
            cfg[key] = a[key]
    sec = lambda name: cfg.setdefault(name, {})
    cmd = a["command"]
    if cmd == "synth":
        for k in ("houses", "days", "samples", "appliances"):
            if k in a:
                sec("synth")[k] = a[k]
    if "data" in a:
        sec("data")["dir"] = a["data"]
    if "appliance" in a:
        sec("scenario")["appliance"] = a["appliance"]
    for k in ("train_houses", "test_house", "oversized", "repetitions"):
        if k in a:
            sec("scenario")[k] = a[k]
    if "epochs" in a:
        train_sec = sec("train")
        train_sec["max_epochs"] = a["epochs"]
        train_sec["patience"] = min(train_sec.get("patience", TrainConfig.patience), a["epochs"])
    if cmd == "disagg":
        d = sec("disagg")
        for src, dst in (("checkpoint", "checkpoints"), ("input", "input"), ("house", "house"),
                         ("stride", "stride"), ("window_len", "window_len"), ("format", "format")):
            if src in a:
                d[dst] = a[src]
    if cmd == "eval":
        e = sec("eval")
        for src, dst in (("pred", "predictions"), ("truth", "truth"), ("house", "house"),
                         ("compare", "compare"), ("plot", "plot"), ("format", "format")):
            if src in a:
                e[dst] = a[src]
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        base = Path(".")
        cfg = {}
        if "config" in vars(args):
            cfg = load_config(args.config)
            base = Path(args.config).parent
        cfg = _merge(cfg, args)
        rc = RunConfig.from_dict(cfg, base_dir=base)
        rc.out = _path(rc, rc.out)
        rc.train_log_time = bool(getattr(args, "log_time", False))
        command = args.command
        if command == "synth":
            return cmd_synth(rc)
        if command == "train":
            return cmd_train(rc)
        if command == "disagg":
            return cmd_disagg(rc)
        if command == "eval":
            return cmd_eval(rc)
        return cmd_gradcheck(rc, getattr(args, "only", None))
    except (NumericalError, EvaluationError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ContractError, TraceFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
