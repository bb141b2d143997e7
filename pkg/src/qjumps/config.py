"""Experiment configuration.

A configuration is a small INI tree with the sections ``jc``, ``meter``,
``trajectory``, ``stage2``, ``seeds`` and ``output``. Every key has a
default, so a file only lists what differs. ``to_json`` gives the canonical
form; ``to_ini`` writes a file that loads back to an equal config.
"""

import configparser
import json
import math
import typing
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "JCSection",
    "MeterSection",
    "TrajectorySection",
    "Stage2Section",
    "SeedsSection",
    "OutputSection",
    "parse_complex",
    "format_complex",
    "list_presets",
]


class ConfigError(ValueError):
    pass


def parse_complex(text) -> complex:
    """Parse ``2.082-4.875i``, ``13.5j`` or ``(1+2j)``."""
    if isinstance(text, (int, float, complex)):
        return complex(text)
    s = str(text).strip().replace(" ", "").replace("i", "j")
    try:
        return complex(s)
    except ValueError:
        raise ConfigError(f"not a complex number: {text!r}") from None


def format_complex(z: complex) -> str:
    z = complex(z)
    sign = "-" if math.copysign(1.0, z.imag) < 0 else "+"
    return f"{z.real!r}{sign}{abs(z.imag)!r}j"


@dataclass
class JCSection:
    g_over_k: float = 60.0
    drive: complex = 13.5j
    detuning: float = -8.0
    n_max: typing.Optional[int] = None


@dataclass
class MeterSection:
    kp_over_k: float = 100.0
    kp_over_gp: float = 100.0
    # None selects the cancellation drive -alpha1_bar/2
    drive_prime: typing.Optional[complex] = None
    threshold_fraction: float = 0.05
    bright_band: float = 0.5
    bright_min_duration: float = 2.0
    classify_window: float = 2.0
    level_tolerance: float = 0.5
    spread_tolerance: float = 0.5
    coherence_span: float = 1.0
    hysteresis: float = 0.2
    crossing_cv: float = 0.25
    min_intervals: int = 3


@dataclass
class TrajectorySection:
    dt: float = 5e-5
    duration: float = 500.0
    sample_stride: int = 20
    initial_state: str = "steady-sample"
    burn_in: float = 0.0
    snapshot_window: float = 2.0
    count: int = 1


@dataclass
class Stage2Section:
    kind: str = "heterodyne"
    source: str = "explicit"
    theta: typing.Tuple[float, ...] = (0.0,)
    phi0: float = 0.0
    # homodyne cat amplitude; when unset it follows from alpha1, alpha2
    A: typing.Optional[float] = None
    alpha1: typing.Optional[complex] = None
    alpha2: typing.Optional[complex] = None
    c1: complex = complex(1 / math.sqrt(2))
    c2: complex = complex(1 / math.sqrt(2))
    dt: float = 1e-3
    t_end: float = 10.0
    d_eta: float = 1e-4
    eta_max: float = 1 - 1e-6
    N: int = 100_000
    fluctuation: str = "none"
    sigma_over_sqrtA: float = 0.0
    statistic: typing.Optional[str] = None
    threshold: typing.Optional[float] = None
    bin_width: typing.Optional[float] = None


@dataclass
class SeedsSection:
    base_seed: int = 0


@dataclass
class OutputSection:
    directory: str = "qjumps-out"
    formats: typing.Tuple[str, ...] = ("csv", "json")
    grid_spacing: float = 0.05
    normalized: bool = False


_SECTIONS = {
    "jc": JCSection,
    "meter": MeterSection,
    "trajectory": TrajectorySection,
    "stage2": Stage2Section,
    "seeds": SeedsSection,
    "output": OutputSection,
}


def _convert(tp, raw, where):
    if typing.get_origin(tp) is typing.Union:
        if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "auto")):
            return None
        tp = [a for a in typing.get_args(tp) if a is not type(None)][0]
    try:
        if typing.get_origin(tp) is tuple:
            inner = typing.get_args(tp)[0]
            items = raw if isinstance(raw, (list, tuple)) else [
                x for x in str(raw).replace(",", " ").split() if x
            ]
            return tuple(_convert(inner, x, where) for x in items)
        if tp is complex:
            if isinstance(raw, (list, tuple)):
                return complex(float(raw[0]), float(raw[1]))
            return parse_complex(raw)
        if tp is bool:
            if isinstance(raw, bool):
                return raw
            v = str(raw).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
        if tp is float:
            return _parse_float(raw)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {raw!r}") from None


def _parse_float(raw):
    if isinstance(raw, (int, float)):
        return float(raw)
    s = str(raw).strip().lower()
    # allow the odd symbolic angle in hand-written files
    for name, val in (("pi", math.pi),):
        if name in s:
            num, _, den = s.partition("/")
            coef = num.replace("*", "").replace(name, "").strip()
            v = (float(coef) if coef not in ("", "+", "-") else float(coef + "1")) * val
            return v / float(den) if den else v
    return float(s)


def _serialize(value):
    if isinstance(value, complex):
        return format_complex(value)
    if isinstance(value, tuple):
        return ", ".join(_serialize(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _jsonable(value):
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class ExperimentConfig:
    jc: JCSection = field(default_factory=JCSection)
    meter: MeterSection = field(default_factory=MeterSection)
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        self.validate()

    # -------------------------------------------------------------- loading

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        sections = {}
        for name, raw in data.items():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            sec_cls = _SECTIONS[name]
            hints = typing.get_type_hints(sec_cls)
            known = {f.name for f in fields(sec_cls)}
            kwargs = {}
            for key, val in raw.items():
                if key not in known:
                    raise ConfigError(f"unknown key {name}.{key}")
                kwargs[key] = _convert(hints[key], val, f"{name}.{key}")
            sections[name] = sec_cls(**kwargs)
        return cls(**sections)

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        return cls.from_mapping({s: dict(parser[s]) for s in parser.sections()})

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        if path.suffix == ".json":
            return cls.from_json(text)
        return cls.from_ini(text)

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        res = resources.files("qjumps.presets").joinpath(f"{name}.preset")
        if not res.is_file():
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
        return cls.from_ini(res.read_text())

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(exc)) from None
        return cls.from_mapping(data)

    # --------------------------------------------------------------- saving

    def to_dict(self) -> dict:
        return {
            name: {f.name: _jsonable(getattr(getattr(self, name), f.name))
                   for f in fields(_SECTIONS[name])}
            for name in _SECTIONS
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_ini(self) -> str:
        lines = []
        for name in _SECTIONS:
            sec = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(sec):
                lines.append(f"{f.name} = {_serialize(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with some keys changed: ``cfg.replace(seeds={"base_seed": 3})``."""
        data = self.to_dict()
        for name, upd in sections.items():
            if name not in data:
                raise ConfigError(f"unknown section [{name}]")
            data[name].update(upd)
        return ExperimentConfig.from_mapping(data)

    # ----------------------------------------------------------- validation

    def validate(self):
        jc, m, tr, s2 = self.jc, self.meter, self.trajectory, self.stage2
        checks = [
            (jc.g_over_k >= 0, "jc.g_over_k must be non-negative"),
            (jc.n_max is None or jc.n_max >= 1, "jc.n_max must be at least 1"),
            (m.kp_over_k > 0 and m.kp_over_gp > 0, "meter rates must be positive"),
            (0 < m.threshold_fraction < 1, "meter.threshold_fraction must lie in (0, 1)"),
            (m.bright_band > 0, "meter.bright_band must be positive"),
            (m.bright_min_duration > 0, "meter.bright_min_duration must be positive"),
            (m.classify_window > 0, "meter.classify_window must be positive"),
            (m.min_intervals >= 1, "meter.min_intervals must be positive"),
            (tr.dt > 0 and tr.duration > 0, "trajectory.dt and duration must be positive"),
            (tr.sample_stride >= 1, "trajectory.sample_stride must be positive"),
            (tr.count >= 1, "trajectory.count must be positive"),
            (tr.initial_state in ("vacuum", "steady-sample"),
             "trajectory.initial_state must be vacuum or steady-sample"),
            (s2.kind in ("heterodyne", "homodyne"), "stage2.kind must be heterodyne or homodyne"),
            (s2.source in ("explicit", "jumps"), "stage2.source must be explicit or jumps"),
            (s2.N >= 1, "stage2.N must be positive"),
            (s2.fluctuation in ("none", "weight_phase", "gaussian_A"),
             "stage2.fluctuation must be none, weight_phase or gaussian_A"),
            (s2.statistic in (None, "L1", "KS", "chi2"), "stage2.statistic must be L1, KS or chi2"),
            (len(s2.theta) >= 1, "stage2.theta needs at least one angle"),
            (self.seeds.base_seed >= 0, "seeds.base_seed must be non-negative"),
            (self.output.grid_spacing > 0, "output.grid_spacing must be positive"),
            (set(self.output.formats) <= {"csv", "json", "ndjson", "bin"},
             "output.formats accepts csv, json, ndjson, bin"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    # ------------------------------------------------------------- builders

    def jc_params(self):
        from .jcmodel import JCParams

        return JCParams.auto(self.jc.g_over_k, self.jc.drive, self.jc.detuning, self.jc.n_max)

    def meter_params(self, alpha1_bar=None):
        from .meter import MeterParams, cancellation_drive

        drive = self.meter.drive_prime
        if drive is None:
            if alpha1_bar is None:
                raise ConfigError("meter.drive_prime is auto but no bright amplitude was given")
            drive = cancellation_drive(alpha1_bar)
        return MeterParams(self.meter.kp_over_k, self.meter.kp_over_gp, drive)

    def detection_settings(self):
        from .meter import DetectionSettings

        m = self.meter
        return DetectionSettings(m.threshold_fraction, m.bright_band, m.bright_min_duration)

    def classifier_settings(self):
        from .meter import ClassifierSettings

        m = self.meter
        return ClassifierSettings(
            window=m.classify_window, level_tolerance=m.level_tolerance,
            spread_tolerance=m.spread_tolerance,
            coherence_span=min(m.coherence_span, m.classify_window),
            hysteresis=m.hysteresis, crossing_cv=m.crossing_cv, min_intervals=m.min_intervals,
        )

    def trajectory_config(self, seed: int, **overrides):
        from .mcwf import TrajectoryConfig

        t = self.trajectory
        kwargs = dict(dt=t.dt, duration=t.duration, seed=seed, sample_stride=t.sample_stride,
                      initial_state=t.initial_state, burn_in=t.burn_in,
                      snapshot_window=t.snapshot_window)
        kwargs.update(overrides)
        return TrajectoryConfig(**kwargs)


def list_presets():
    return sorted(
        p.name[: -len(".preset")]
        for p in resources.files("qjumps.presets").iterdir()
        if p.name.endswith(".preset")
    )
