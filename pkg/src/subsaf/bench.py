"""Experiment runner: scenario configuration, Monte-Carlo averaging and CSV output."""

from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import filterbank, signals
from .adaptive import GrSafParams, GrSafState, MnsafState, SubbandTick, make_gate, msd_from_sq
from .echo import EchoCanceler, ErleTracker, GeigelDtd
from .robustness import ScalingRule

log = logging.getLogger(__name__)

SCENARIOS = ("sysid", "nec", "aec")
ALGORITHMS = ("nsaf", "mnsaf", "grsaf_mh", "grsaf_mcc")
BUILTIN_CHANNELS = ("sparse128", "dispersive128", "sparse512", "dispersive512")

# parameter table keys with their defaults (system-identification setup)
DEFAULT_PARAMS = {
    "mu": 1.0,
    "reg": 0.0,
    "silence_guard": False,
    "kappa": 2.576,
    "kernel_width": 1.0,
    "tau": 2.0,
    "n_window": 20,
    "theta": None,
    "eps1": 1.0,
    "eps2": 1e-5,
    "gamma": 0.95,
    "varrho": 2.0,
    "beta": None,
    "phi_floor": 1e-12,
    "dense": False,
    "track_uncertainty": True,
    "avg_uncertainty_floor": True,
}


class ConfigError(ValueError):
    pass


def builtin_channels(name):
    if not name:
        raise ValueError("empty channel name")
    if name not in BUILTIN_CHANNELS:
        raise ValueError(f"unknown channel {name!r}; known: {', '.join(BUILTIN_CHANNELS)}")
    text = resources.files("subsaf").joinpath("data", f"{name}.txt").read_text()
    return np.loadtxt(io.StringIO(text))


def load_channel(name_or_path):
    if name_or_path in BUILTIN_CHANNELS:
        return builtin_channels(name_or_path)
    path = Path(name_or_path)
    if not path.is_file():
        raise ConfigError(f"channel {name_or_path!r} is neither builtin nor an existing file")
    h = np.loadtxt(path, ndmin=1)
    if h.size == 0:
        raise ConfigError(f"{path}: empty impulse response")
    return h


@dataclass
class NearEnd:
    """Near-end talker bursts: (start, length) in fullband samples."""

    bursts: list = field(default_factory=list)
    gain: float = 1.0
    source: signals.SignalSource = field(default_factory=lambda: signals.SignalSource("speechlike"))

    def generate(self, n, seed):
        z = np.zeros(n)
        if not self.bursts:
            return z
        src = self.source.generate(n, seed + 7919) if self.source.kind != "speechlike" else \
            signals.gen_speechlike(n, seed, syllable=400, gap_prob=0.0, stream=signals.STREAM_NEAR_END)
        for start, length in self.bursts:
            z[start:start + length] = src[start:start + length]
        return self.gain * z


@dataclass
class DtdConfig:
    threshold: float = 0.45
    t_hold: int = 40
    hold_unit: str = "samples"


@dataclass
class ExperimentConfig:
    scenario: str = "sysid"
    algorithm: str = "grsaf_mh"
    n_subbands: int = 4
    filter_len: int = 128
    proto_length: int | None = None
    prototype_file: str | None = None
    channel: str = "sparse128"
    # scales the true echo path; values < 1 model echo return loss
    channel_gain: float = 1.0
    input: signals.SignalSource = field(default_factory=signals.SignalSource)
    noise: signals.NoiseSpec = field(default_factory=signals.NoiseSpec)
    near_end: NearEnd | None = None
    dtd: DtdConfig | None = None
    runs: int = 1
    total_samples: int = 50_000
    seed: int = 1
    flip_at: int | None = None
    params: dict = field(default_factory=dict)
    record_erle: bool = False
    output: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.n_subbands < 1:
            raise ConfigError("n_subbands must be >= 1")
        if self.total_samples < self.filter_len:
            raise ConfigError("total_samples must be >= filter_len")
        if not np.isfinite(self.channel_gain) or self.channel_gain == 0.0:
            raise ConfigError("channel gain must be finite and nonzero")
        if self.flip_at is not None and not 0 <= self.flip_at < self.total_samples:
            raise ConfigError("flip_at outside the run")
        unknown = set(self.params) - set(DEFAULT_PARAMS)
        if unknown:
            raise ConfigError(f"unknown algorithm parameters: {sorted(unknown)}")
        if self.prototype_file is not None and not Path(self.prototype_file).is_file():
            raise ConfigError(f"prototype file {self.prototype_file!r} not found")
        if self.channel not in BUILTIN_CHANNELS and not Path(self.channel).is_file():
            raise ConfigError(f"channel {self.channel!r} is neither builtin nor an existing file")

    def param(self, key):
        return self.params.get(key, DEFAULT_PARAMS[key])


@dataclass
class MetricSeries:
    msd_db: np.ndarray
    erle_db: np.ndarray | None = None
    runs_msd_db: list = field(default_factory=list)
    runs_erle_db: list = field(default_factory=list)
    frozen_ticks: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def to_csv(self, path=None):
        buf = io.StringIO()
        header = "sample,msd_db" + (",erle_db" if self.erle_db is not None else "")
        buf.write(header + "\n")
        for n, m in enumerate(self.msd_db):
            line = f"{n},{m:.6f}"
            if self.erle_db is not None:
                v = self.erle_db[n]
                line += "," + ("" if np.isnan(v) else f"{v:.6f}")
            buf.write(line + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class RunDiagnostics:
    max_decrement: float = -np.inf
    min_phi: float = np.inf
    n_steps: int = 0


def make_engine(cfg):
    n, m = cfg.n_subbands, cfg.filter_len
    p = cfg.param
    gate_kw = dict(tau=p("tau"), n_window=int(p("n_window")), theta=p("theta"))
    if cfg.algorithm == "nsaf":
        rule = ScalingRule("unity")
    elif cfg.algorithm in ("mnsaf", "grsaf_mh"):
        rule = ScalingRule("modified_huber", kappa=p("kappa"))
    else:
        rule = ScalingRule("correntropy", kernel_width=p("kernel_width"))
    gate = make_gate(rule, n, m, **gate_kw)
    if cfg.algorithm in ("nsaf", "mnsaf"):
        return MnsafState(n, m, gate, mu=p("mu"), reg=p("reg"), silence_guard=bool(p("silence_guard")),
                          beta=p("beta"))
    params = GrSafParams(
        eps1=p("eps1"), eps2=p("eps2"), gamma=p("gamma"), varrho=p("varrho"), beta=p("beta"),
        phi_floor=p("phi_floor"), dense=bool(p("dense")), track_uncertainty=bool(p("track_uncertainty")),
        avg_uncertainty_floor=bool(p("avg_uncertainty_floor")),
    )
    return GrSafState(n, m, gate, params)


def make_bank(cfg):
    if cfg.prototype_file is not None:
        return filterbank.modulate(filterbank.load_prototype(cfg.prototype_file, cfg.n_subbands))
    return filterbank.make_bank(cfg.n_subbands, cfg.proto_length)


def _prepare_channel(cfg):
    w_true = load_channel(cfg.channel)
    m = cfg.filter_len
    if w_true.size > m:
        raise ConfigError(f"channel has {w_true.size} taps but filter_len is {m}")
    return cfg.channel_gain * np.pad(w_true, (0, m - w_true.size))


def build_signals(cfg, w_true, seed):
    """Fullband u, echo dbar, near-end z, noise nu for one run."""
    n = cfg.total_samples
    u = cfg.input.generate(n, seed)
    dbar = lfilter(w_true, [1.0], u)
    if cfg.flip_at is not None:
        dbar[cfg.flip_at:] *= -1.0
    r = cfg.input.autocorrelation(w_true.size)
    power = signals.output_power(w_true, r) if r is not None else float(np.mean(dbar ** 2))
    nu = signals.gen_noise(cfg.noise, power, n, seed)
    z = cfg.near_end.generate(n, seed) if cfg.near_end is not None else np.zeros(n)
    return u, dbar, z, nu


def _subband_streams(bank, u, d, m, n_ticks):
    """Batch analysis: regressors and decimated desired for every tick."""
    n = bank.n_subbands
    us = np.stack([lfilter(h, [1.0], u) for h in bank.filters])
    ds = np.stack([lfilter(h, [1.0], d) for h in bank.filters])
    padded = np.concatenate([np.zeros((n, m - 1)), us], axis=1)
    t_idx = np.arange(n_ticks) * n + n - 1
    return padded, ds[:, t_idx], t_idx


def run_single(cfg, seed, w_true=None, bank=None):
    """One Monte-Carlo run; returns (squared deviation per sample, erle or None, diagnostics)."""
    if w_true is None:
        w_true = _prepare_channel(cfg)
    if bank is None:
        bank = make_bank(cfg)
    n = cfg.n_subbands
    m = cfg.filter_len
    n_ticks = cfg.total_samples // n
    total = n_ticks * n
    u, dbar, z, nu = build_signals(cfg, w_true, seed)
    d = dbar + z + nu
    u, d = u[:total], d[:total]
    engine = make_engine(cfg)
    diag = RunDiagnostics()
    flip = cfg.flip_at
    sq = np.empty(n_ticks)
    sq_flip = np.empty(n_ticks) if flip is not None else None
    use_loop = cfg.dtd is not None or cfg.record_erle or cfg.near_end is not None
    frozen_ticks = []

    if use_loop:
        ec = EchoCanceler(engine, filterbank.SubbandDecomposer(bank, m))
        dtd = GeigelDtd(cfg.dtd.threshold, cfg.dtd.t_hold, cfg.dtd.hold_unit) if cfg.dtd is not None else None
        e_full = np.empty(total)
        for k in range(n_ticks):
            sl = slice(k * n, k * n + n)
            e_full[sl], _, frozen = ec.process_block(u[sl], d[sl], dtd)
            if frozen:
                frozen_ticks.append(k)
            else:
                _track(diag, engine, ec.last_step)
            w = ec.copied_w
            sq[k] = np.dot(w_true - w, w_true - w)
            if sq_flip is not None:
                sq_flip[k] = np.dot(w_true + w, w_true + w)
    else:
        padded, d_sub, t_idx = _subband_streams(bank, u, d, m, n_ticks)
        view = np.lib.stride_tricks.sliding_window_view(padded, m, axis=1)
        for k in range(n_ticks):
            regs = view[:, t_idx[k], ::-1]
            res = engine.step(SubbandTick(np.ascontiguousarray(regs), d_sub[:, k]))
            _track(diag, engine, res)
            w = engine.w
            diff = w_true - w
            sq[k] = np.dot(diff, diff)
            if sq_flip is not None:
                s = w_true + w
                sq_flip[k] = np.dot(s, s)

    per_sample = np.repeat(sq, n)
    if flip is not None:
        per_sample[flip:] = np.repeat(sq_flip, n)[flip:]
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise RuntimeError(f"non-finite MSD at sample {bad[0]} (seed {seed})")
    erle = None
    if cfg.record_erle:
        erle = ErleTracker().trace(d, e_full)
    return per_sample, erle, diag, frozen_ticks


def _track(diag, engine, res):
    diag.n_steps += 1
    diag.max_decrement = max(diag.max_decrement, res.msd_decrement)
    if isinstance(engine, GrSafState):
        diag.min_phi = min(diag.min_phi, float(np.min(engine.phi_diag)))


def run_experiment(cfg, write=True):
    """Average ``cfg.runs`` runs (seed = cfg.seed + r) in the linear domain."""
    w_true = _prepare_channel(cfg)
    bank = make_bank(cfg)
    acc = None
    erle_acc = None
    series = MetricSeries(np.empty(0))
    for r in range(cfg.runs):
        seed = cfg.seed + r
        sq, erle, diag, frozen = run_single(cfg, seed, w_true, bank)
        log.info("run %d/%d seed=%d final MSD %.2f dB", r + 1, cfg.runs, seed, msd_from_sq(sq[-1]))
        acc = sq.copy() if acc is None else acc + sq
        series.runs_msd_db.append(_to_db(sq))
        series.diagnostics.append(diag)
        series.frozen_ticks.append(frozen)
        if erle is not None:
            series.runs_erle_db.append(erle)
            erle_acc = erle.copy() if erle_acc is None else erle_acc + erle
    series.msd_db = _to_db(acc / cfg.runs) if cfg.runs > 1 else _to_db(acc)
    if erle_acc is not None:
        series.erle_db = erle_acc / cfg.runs
    if write and cfg.output:
        series.to_csv(cfg.output)
    return series


def _to_db(sq):
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(sq)
    return np.maximum(out, -320.0)


# -- config files -------------------------------------------------------------

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(key, raw):
    default = DEFAULT_PARAMS[key]
    if raw.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        if raw.lower() not in _BOOL:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def _bursts(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        start, length = item.split(":")
        out.append((int(start), int(length)))
    return out


def load_config(path, **overrides):
    """Parse an INI-style experiment file; keyword overrides win over file values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(path.read_text())
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    base = path.parent

    def resolve(p):
        if p is None or p in BUILTIN_CHANNELS:
            return p
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    try:
        ex = cp["experiment"] if cp.has_section("experiment") else {}
        kw = dict(
            scenario=ex.get("scenario", "sysid"),
            algorithm=ex.get("algorithm", "grsaf_mh"),
            n_subbands=int(ex.get("n_subbands", 4)),
            filter_len=int(ex.get("filter_len", 128)),
            runs=int(ex.get("runs", 1)),
            total_samples=int(ex.get("total_samples", 50_000)),
            seed=int(ex.get("seed", 1)),
            record_erle=_BOOL[ex.get("record_erle", "false").lower()],
            output=ex.get("output"),
        )
        if ex.get("flip_at"):
            kw["flip_at"] = int(ex["flip_at"])
        if ex.get("proto_length"):
            kw["proto_length"] = int(ex["proto_length"])
        if ex.get("prototype_file"):
            kw["prototype_file"] = resolve(ex["prototype_file"])

        if cp.has_section("channel"):
            kw["channel"] = resolve(cp["channel"].get("name", "sparse128"))
            kw["channel_gain"] = float(cp["channel"].get("gain", 1.0))
        if cp.has_section("input"):
            s = cp["input"]
            kw["input"] = signals.SignalSource(
                kind=s.get("kind", "ar1"), pole=float(s.get("pole", 0.95)), path=resolve(s.get("path")))
        if cp.has_section("noise"):
            s = cp["noise"]
            kw["noise"] = signals.NoiseSpec(**{f.name: (s[f.name] if f.name == "kind" else float(s[f.name]))
                                               for f in fields(signals.NoiseSpec) if f.name in s})
        if cp.has_section("near_end"):
            s = cp["near_end"]
            src = signals.SignalSource(kind=s.get("kind", "speechlike"), pole=float(s.get("pole", 0.9)),
                                       path=resolve(s.get("path")))
            kw["near_end"] = NearEnd(_bursts(s.get("bursts", "")), float(s.get("gain", 1.0)), src)
        if cp.has_section("dtd") and _BOOL[cp["dtd"].get("enabled", "true").lower()]:
            s = cp["dtd"]
            kw["dtd"] = DtdConfig(float(s.get("threshold", 0.45)), int(s.get("t_hold", 40)),
                                  s.get("hold_unit", "samples"))
        if cp.has_section("algorithm"):
            kw["params"] = {k: _coerce(k, v) for k, v in cp["algorithm"].items() if k in DEFAULT_PARAMS}
            unknown = set(cp["algorithm"]) - set(DEFAULT_PARAMS)
            if unknown:
                raise ConfigError(f"unknown algorithm keys {sorted(unknown)}")
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError, FileNotFoundError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
