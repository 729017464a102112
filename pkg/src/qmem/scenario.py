"""TOML scenario files.

Every key carries its unit in the name (``delta_mhz``, ``window_ns``);
dimensionless keys have none. Unknown keys and sections are rejected
before anything is computed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .afc import Cavity, CombSpec, Direction, MemorySpec, Shape
from .errors import ConfigError, RunIOError
from .montecarlo import (
    DEFAULT_BLOCK_SLOTS,
    DetectionChain,
    Detector,
    ExperimentConfig,
    LorentzianFilter,
    MemoryChannel,
    PumpGating,
)
from .spdc import SourceSpec

PRESETS = ("nd_yso", "pr_yso")
MEMORY_MODES = ("afc", "transparent", "none")

MHZ, GHZ, KHZ, NS, US, PS = 1e6, 1e9, 1e3, 1e-9, 1e-6, 1e-12


def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _numlist(v):
    if not isinstance(v, list):
        raise TypeError("expected a list of numbers")
    return [_num(x) for x in v]


def _scaled(scale: float) -> Callable[[Any], float]:
    return lambda v: _num(v) * scale


def _filters(v):
    if not isinstance(v, list):
        raise TypeError("expected a list of tables")
    out = []
    for item in v:
        if not isinstance(item, dict) or set(item) != {"center_offset_mhz", "fwhm_mhz"}:
            raise TypeError("each filter needs exactly center_offset_mhz and fwhm_mhz")
        out.append(LorentzianFilter(_num(item["center_offset_mhz"]) * MHZ, _num(item["fwhm_mhz"]) * MHZ))
    return tuple(out)


# key -> (field name, converter); values are stored in SI units
SCHEMA: dict[str, dict[str, tuple[str, Callable]]] = {
    "source": {
        "pump_power_mw": ("pump_power", _num),
        "spectral_brightness_per_mw_mhz_s": ("spectral_brightness", _num),
        "signal_linewidth_mhz": ("signal_linewidth", _scaled(MHZ)),
        "idler_linewidth_mhz": ("idler_linewidth", _scaled(MHZ)),
        "fsr_signal_mhz": ("fsr_signal", _scaled(MHZ)),
        "fsr_idler_mhz": ("fsr_idler", _scaled(MHZ)),
        "transit_offset_ns": ("transit_offset", _scaled(NS)),
        "phase_matching_bandwidth_ghz": ("phase_matching_bandwidth", _scaled(GHZ)),
        "n_modes_per_cluster": ("n_modes_per_cluster", _int),
        "filter_bandwidth_mhz": ("filter_bandwidth", _scaled(MHZ)),
        "broadband_noise_rate_hz_per_mw": ("broadband_noise_rate", _num),
    },
    "memory": {
        "mode": ("mode", _str),
        "peak_optical_depth": ("d", _num),
        "delta_mhz": ("delta", _scaled(MHZ)),
        "finesse": ("finesse", _num),
        "tooth_shape": ("kind", _str),
        "bandwidth_mhz": ("bandwidth", _scaled(MHZ)),
        "direction": ("direction", _str),
        "eta_control": ("eta_control", _num),
        "spin_linewidth_khz": ("spin_linewidth", _scaled(KHZ)),
        "spin_wave_time_us": ("spin_wave_time", _scaled(US)),
        "spin_decay_model": ("spin_decay_model", _str),
        "cavity_mirror_reflectivity": ("mirror_reflectivity", _num),
        "cavity_round_trip_loss": ("round_trip_loss", _num),
    },
    "chain": {
        "transmissions": ("transmissions", _numlist),
        "filters": ("filters", _filters),
        "detector_efficiency": ("efficiency", _num),
        "dark_rate_hz": ("dark_rate", _num),
        "jitter_sigma_ps": ("jitter_sigma", _scaled(PS)),
        "dead_time_ns": ("dead_time", _scaled(NS)),
    },
    "run": {
        "duration_s": ("duration", _num),
        "seed": ("seed", _int),
        "slot_width_ns": ("slot_width", _scaled(NS)),
        "block_slots": ("block_slots", _int),
        "pump_gating": ("gating_mode", _str),
        "off_delay_ns": ("off_delay", _scaled(NS)),
        "recovery_us": ("recovery", _scaled(US)),
        "window_ns": ("window", _scaled(NS)),
        "bin_width_ns": ("bin_width", _scaled(NS)),
        "tau_min_ns": ("tau_min", _scaled(NS)),
        "tau_max_ns": ("tau_max", _scaled(NS)),
        "g2_normalization": ("g2_normalization", _str),
        "floor_offset_ns": ("floor_offset", _scaled(NS)),
        "floor_width_ns": ("floor_width", _scaled(NS)),
    },
}

SECTIONS = ("source", "memory", "chains.signal", "chains.idler", "run")


def _schema_for(section: str) -> dict[str, tuple[str, Callable]]:
    return SCHEMA["chain"] if section.startswith("chains.") else SCHEMA[section]


@dataclass(frozen=True)
class AnalysisDefaults:
    window: float = 10e-9
    bin_width: float = 1e-9
    tau_min: float = -100e-9
    tau_max: float = 200e-9
    g2_normalization: str = "singles"
    floor_offset: Optional[float] = None
    floor_width: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    source: SourceSpec
    memory_mode: str
    memory_spec: Optional[MemorySpec]
    signal_chain: DetectionChain
    idler_chain: DetectionChain
    gating: PumpGating
    duration: float
    seed: int
    slot_width: Optional[float]
    block_slots: int = DEFAULT_BLOCK_SLOTS
    analysis: AnalysisDefaults = field(default_factory=AnalysisDefaults)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def memory(self) -> Union[MemorySpec, MemoryChannel, None]:
        """What the simulation puts in the signal path."""
        if self.memory_mode == "afc":
            return self.memory_spec
        if self.memory_mode == "transparent":
            return MemoryChannel.transparent()
        return None

    def afc(self) -> MemorySpec:
        if self.memory_spec is None:
            raise ConfigError("scenario has no AFC description in [memory]")
        return self.memory_spec

    def experiment(self, seed: Optional[int] = None) -> ExperimentConfig:
        return ExperimentConfig(
            source=self.source,
            signal_chain=self.signal_chain,
            idler_chain=self.idler_chain,
            memory=self.memory,
            gating=self.gating,
            duration=self.duration,
            seed=self.seed if seed is None else seed,
            slot_width=self.slot_width,
            block_slots=self.block_slots,
        )


def _flatten_sections(doc: dict) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for name, body in doc.items():
        if name == "chains":
            if not isinstance(body, dict):
                raise ConfigError("[chains] must contain [chains.signal] and/or [chains.idler]")
            for ch, sub in body.items():
                out[f"chains.{ch}"] = sub
        else:
            out[name] = body
    for name, body in out.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table")
    return out


def _convert(section: str, body: dict) -> dict[str, Any]:
    schema = _schema_for(section)
    out = {}
    for key, value in body.items():
        if key not in schema:
            raise ConfigError(f"unknown key {section}.{key}")
        name, conv = schema[key]
        try:
            out[name] = conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None
    return out


def parse_override(text: str) -> tuple[str, str, Any]:
    """Split ``section.key=value``; the value is read as a TOML value, else as a bare string."""
    path, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    section, _, key = path.strip().rpartition(".")
    if not section:
        raise ConfigError(f"override {text!r} needs a section, e.g. run.seed=3")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, key, value


def _build_memory(m: dict[str, Any]) -> tuple[str, Optional[MemorySpec]]:
    """Memory mode plus the AFC description, which may accompany any mode."""
    mode = m.pop("mode", "afc")
    if mode not in MEMORY_MODES:
        raise ConfigError(f"memory.mode must be one of {', '.join(MEMORY_MODES)}, got {mode!r}")
    if not m:
        if mode == "afc":
            raise ConfigError("memory.mode='afc' needs the comb keys")
        return mode, None
    cavity = None
    if "mirror_reflectivity" in m:
        cavity = Cavity(m.pop("mirror_reflectivity"), m.pop("round_trip_loss", 0.0))
    elif "round_trip_loss" in m:
        raise ConfigError("cavity_round_trip_loss needs cavity_mirror_reflectivity")
    for key in ("d", "delta", "finesse"):
        if key not in m:
            raise ConfigError(f"memory section is missing {key}")
    comb = CombSpec(
        m.pop("d"), m.pop("delta"), m.pop("finesse"),
        kind=Shape(m.pop("kind", "square")), bandwidth=m.pop("bandwidth", None),
    )
    spec = MemorySpec(comb, direction=Direction(m.pop("direction", "forward")), cavity=cavity, **m)
    return mode, spec


def _build_chain(c: dict[str, Any]) -> DetectionChain:
    det = {k: c.pop(k) for k in ("efficiency", "dark_rate", "jitter_sigma", "dead_time") if k in c}
    return DetectionChain(tuple(c.pop("transmissions", ())), c.pop("filters", ()), Detector(**det))


def from_dict(doc: dict, overrides: tuple[str, ...] = ()) -> Scenario:
    sections = _flatten_sections(doc)
    sections = {k: dict(v) for k, v in sections.items()}
    for text in overrides:
        section, key, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] in override")
        sections.setdefault(section, {})[key] = value
    conv = {name: _convert(name, body) for name, body in sections.items()}
    if "source" not in conv:
        raise ConfigError("scenario needs a [source] section")
    try:
        source = SourceSpec(**conv["source"])
        memory_mode, memory_spec = _build_memory(conv["memory"]) if "memory" in conv else ("none", None)
        signal_chain = _build_chain(conv.get("chains.signal", {}))
        idler_chain = _build_chain(conv.get("chains.idler", {}))
        run = conv.get("run", {})
        gating = PumpGating(run.pop("gating_mode", "cw"), run.pop("off_delay", 0.0), run.pop("recovery", 0.0))
        analysis = AnalysisDefaults(**{k: run.pop(k) for k in list(run) if k in AnalysisDefaults.__dataclass_fields__})
        if analysis.g2_normalization not in ("singles", "floor"):
            raise ConfigError("run.g2_normalization must be singles or floor")
        scenario = Scenario(
            source=source,
            memory_mode=memory_mode,
            memory_spec=memory_spec,
            signal_chain=signal_chain,
            idler_chain=idler_chain,
            gating=gating,
            duration=run.pop("duration", 1e-3),
            seed=run.pop("seed", 0),
            slot_width=run.pop("slot_width", None),
            block_slots=run.pop("block_slots", DEFAULT_BLOCK_SLOTS),
            analysis=analysis,
            raw=sections,
        )
        scenario.experiment()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return scenario


def loads(text: str, overrides: tuple[str, ...] = ()) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario is not valid TOML: {exc}") from None
    return from_dict(doc, overrides)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("qmem.presets").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def load(path_or_preset: Union[str, Path], overrides: tuple[str, ...] = ()) -> Scenario:
    """Load a scenario from a file path, or a bundled preset by name."""
    if str(path_or_preset) in PRESETS:
        return loads(preset_text(str(path_or_preset)), overrides)
    try:
        text = Path(path_or_preset).read_text(encoding="utf-8")
    except OSError as exc:
        raise RunIOError(f"cannot read scenario {path_or_preset}: {exc}") from exc
    return loads(text, overrides)
