"""Event-level simulation of a heralded pair source, an AFC memory and detectors.

Time is cut into slots of ``slot_width``. Every slot holds a geometric
number of pairs, all emitted at the slot centre: the idler leaves at the
centre and its signal partner follows after a two-sided exponential delay.
With a coincidence window equal to the slot width this reproduces
g2_si = 1 + 1/p and g2_auto = 2 of a two-mode squeezed state.

Randomness comes from counter-based Philox streams keyed by
(seed, stage, block). Blocks have a fixed number of slots that does not
depend on the worker count, so output is bit-identical for any number of
threads.
"""

from __future__ import annotations

import bisect
import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import afc
from .afc import MemorySpec
from .errors import ConfigError, RunIOError
from .spdc import SourceSpec, cluster_mode_indices, coherence_time, pair_probability
from .tags import ORIGINS, TimeTags

PAIR, DARK, LEAK, NOISE = (ORIGINS.index(o) for o in ("pair", "dark", "leak", "noise"))

_STAGE_PAIRS = 1
_STAGE_NOISE = 2
_STAGE_MEMORY = 3
_STAGE_CHAIN = {"signal": 10, "idler": 11}
_STAGE_DARK = {"signal": 20, "idler": 21}

DEFAULT_BLOCK_SLOTS = 1 << 18


def stream(seed: int, stage: int, block: int = 0) -> np.random.Generator:
    """Independent Philox generator for one (seed, stage, block) triple."""
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stage, block))
    return np.random.Generator(np.random.Philox(ss))


def _unit(x: float, name: str) -> None:
    if not 0 <= x <= 1:
        raise ConfigError(f"{name} must be in [0, 1], got {x}")


@dataclass(frozen=True)
class LorentzianFilter:
    center_offset: float
    fwhm: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ConfigError(f"filter fwhm must be > 0, got {self.fwhm}")

    def weight(self, offsets: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + (2 * (np.asarray(offsets) - self.center_offset) / self.fwhm) ** 2)


@dataclass(frozen=True)
class Detector:
    efficiency: float = 1.0
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        _unit(self.efficiency, "detector efficiency")
        for name in ("dark_rate", "jitter_sigma", "dead_time"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass(frozen=True)
class DetectionChain:
    transmissions: tuple[float, ...] = ()
    filters: tuple[LorentzianFilter, ...] = ()
    detector: Detector = field(default_factory=Detector)

    def __post_init__(self):
        object.__setattr__(self, "transmissions", tuple(float(t) for t in self.transmissions))
        object.__setattr__(self, "filters", tuple(self.filters))
        for t in self.transmissions:
            _unit(t, "transmission")

    @property
    def transmission(self) -> float:
        """Frequency-independent detection probability."""
        return math.prod(self.transmissions) * self.detector.efficiency

    def detection_probability(self, offsets: np.ndarray) -> np.ndarray:
        """Per-photon detection probability; NaN offsets (broadband light) skip the filters."""
        offsets = np.asarray(offsets, dtype=float)
        prob = np.full(offsets.shape, self.transmission)
        labelled = ~np.isnan(offsets)
        for f in self.filters:
            prob[labelled] *= f.weight(offsets[labelled])
        return prob


@dataclass(frozen=True)
class MemoryChannel:
    """What the memory does to one signal photon: recall, leak or loss."""

    efficiency: float
    transmission: float
    delay: float

    def __post_init__(self):
        _unit(self.efficiency, "memory efficiency")
        _unit(self.transmission, "memory transmission")
        if self.efficiency + self.transmission > 1 + 1e-12:
            raise ConfigError("memory efficiency + transmission exceeds 1")
        if not self.delay >= 0:
            raise ConfigError("memory delay must be >= 0")

    @classmethod
    def from_spec(cls, spec: MemorySpec) -> "MemoryChannel":
        eta = afc.total_efficiency(spec).eta_total
        if spec.cavity is not None:
            c = spec.cavity
            leak = 1 - afc.cavity_absorption(afc.effective_depth(spec.comb), c.mirror_reflectivity, c.round_trip_loss)
        else:
            leak = afc.transmission(spec.comb)
        return cls(eta, min(leak, 1 - eta), afc.echo_times(spec.comb, spec.spin_wave_time)[0])

    @classmethod
    def transparent(cls) -> "MemoryChannel":
        return cls(0.0, 1.0, 0.0)


@dataclass(frozen=True)
class PumpGating:
    """``off_after_herald`` removes pairs created in (h + off_delay, h + recovery]."""

    mode: str = "cw"
    off_delay: float = 0.0
    recovery: float = 0.0

    def __post_init__(self):
        if self.mode not in ("cw", "off_after_herald"):
            raise ConfigError(f"unknown pump gating mode {self.mode!r}")
        if self.mode == "off_after_herald":
            if not self.off_delay >= 0:
                raise ConfigError("off_delay must be >= 0")
            if not self.recovery > self.off_delay:
                raise ConfigError("recovery must be later than off_delay")


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceSpec
    signal_chain: DetectionChain = field(default_factory=DetectionChain)
    idler_chain: DetectionChain = field(default_factory=DetectionChain)
    memory: Union[MemorySpec, MemoryChannel, None] = None
    gating: PumpGating = field(default_factory=PumpGating)
    duration: float = 1e-3
    seed: int = 0
    slot_width: Optional[float] = None
    block_slots: int = DEFAULT_BLOCK_SLOTS

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration must be > 0")
        if self.slot_width is not None and not self.slot_width > 0:
            raise ConfigError("slot_width must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.block_slots < 1:
            raise ConfigError("block_slots must be >= 1")
        if self.source.filter_bandwidth is None:
            raise ConfigError("source needs a filter bandwidth to fix the pair probability")

    @property
    def slot(self) -> float:
        if self.slot_width is not None:
            return self.slot_width
        return coherence_time(self.source.idler_linewidth)

    @property
    def pair_probability(self) -> float:
        return pair_probability(self.source, window=self.slot)

    @property
    def memory_channel(self) -> Optional[MemoryChannel]:
        if isinstance(self.memory, MemorySpec):
            return MemoryChannel.from_spec(self.memory)
        return self.memory

    @property
    def n_slots(self) -> int:
        return int(math.floor(self.duration / self.slot * (1 + 1e-12)))

    @property
    def n_blocks(self) -> int:
        return max(1, -(-self.n_slots // self.block_slots))

    def block_slots_range(self, b: int) -> tuple[int, int]:
        return b * self.block_slots, min((b + 1) * self.block_slots, self.n_slots)

    def block_time_range(self, b: int) -> tuple[float, float]:
        t0 = b * self.block_slots * self.slot
        t1 = self.duration if b == self.n_blocks - 1 else (b + 1) * self.block_slots * self.slot
        return t0, t1


@dataclass
class PairEvents:
    created: np.ndarray
    t_signal: np.ndarray
    t_idler: np.ndarray
    mode: np.ndarray

    def __len__(self) -> int:
        return self.created.size


@dataclass
class PhotonEvents:
    """Photons of one channel; ``created`` is NaN for detector dark counts."""

    time: np.ndarray
    origin: np.ndarray
    created: np.ndarray
    offset: np.ndarray

    def __len__(self) -> int:
        return self.time.size

    @classmethod
    def empty(cls) -> "PhotonEvents":
        z = np.empty(0)
        return cls(z, np.empty(0, dtype=np.int8), z, z)

    def take(self, idx) -> "PhotonEvents":
        return PhotonEvents(self.time[idx], self.origin[idx], self.created[idx], self.offset[idx])

    @classmethod
    def concat(cls, parts: list["PhotonEvents"]) -> "PhotonEvents":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.time for p in parts]),
            np.concatenate([p.origin for p in parts]),
            np.concatenate([p.created for p in parts]),
            np.concatenate([p.offset for p in parts]),
        )


def _occupied_slots(rng: np.random.Generator, p: float, n: int) -> np.ndarray:
    """Indices of slots holding at least one pair; gaps are geometric(p)."""
    mean = n * p
    chunk = int(mean + 6 * math.sqrt(mean) + 16)
    found, last = [], -1
    while True:
        pos = last + np.cumsum(rng.geometric(p, size=chunk))
        found.append(pos[pos < n])
        if pos[-1] >= n:
            break
        last = int(pos[-1])
    return np.concatenate(found)


def _pairs_block(config: ExperimentConfig, p: float, b: int) -> PairEvents:
    s0, s1 = config.block_slots_range(b)
    n = s1 - s0
    if p == 0 or n <= 0:
        z = np.empty(0)
        return PairEvents(z, z, z, np.empty(0, dtype=np.int64))
    rng = stream(config.seed, _STAGE_PAIRS, b)
    occupied = _occupied_slots(rng, p, n)
    per_slot = rng.geometric(1 - p, size=occupied.size)
    slots = s0 + np.repeat(occupied, per_slot)
    created = (slots + 0.5) * config.slot
    src = config.source
    g_s = 2 * math.pi * src.signal_linewidth
    g_i = 2 * math.pi * src.idler_linewidth
    late = rng.random(slots.size) < (1 / g_s) / (1 / g_s + 1 / g_i)
    e = rng.exponential(1.0, size=slots.size)
    delay = np.where(late, e / g_s, -e / g_i)
    K = int(src.n_modes_per_cluster)
    if K > 1:
        mode = cluster_mode_indices(K)[rng.integers(0, K, size=slots.size)]
    else:
        mode = np.zeros(slots.size, dtype=np.int64)
    return PairEvents(created, created + delay, created.copy(), mode)


def _noise_block(config: ExperimentConfig, b: int) -> PhotonEvents:
    rate = config.source.broadband_noise_rate * config.source.pump_power
    if rate == 0:
        return PhotonEvents.empty()
    t0, t1 = config.block_time_range(b)
    rng = stream(config.seed, _STAGE_NOISE, b)
    t = np.sort(rng.uniform(t0, t1, size=rng.poisson(rate * (t1 - t0))))
    return PhotonEvents(t, np.full(t.size, NOISE, dtype=np.int8), t.copy(), np.full(t.size, np.nan))


def _dark_block(config: ExperimentConfig, channel: str, chain: DetectionChain, b: int) -> PhotonEvents:
    rate = chain.detector.dark_rate
    if rate == 0:
        return PhotonEvents.empty()
    t0, t1 = config.block_time_range(b)
    return dark_counts(rate, t0, t1, stream(config.seed, _STAGE_DARK[channel], b))


def generate_pairs(config: ExperimentConfig, workers: Optional[int] = None) -> PairEvents:
    """All pair emissions of a run, in creation order."""
    p = config.pair_probability
    blocks = _map_blocks(lambda b: _pairs_block(config, p, b), config.n_blocks, workers)
    return PairEvents(*(np.concatenate([getattr(x, f) for x in blocks]) for f in ("created", "t_signal", "t_idler", "mode")))


def pair_photons(pairs: PairEvents, source: SourceSpec) -> tuple[PhotonEvents, PhotonEvents]:
    """Split pairs into signal and idler photons with their spectral offsets."""
    n = len(pairs)
    origin = np.full(n, PAIR, dtype=np.int8)
    signal = PhotonEvents(pairs.t_signal, origin, pairs.created, pairs.mode * source.fsr_signal)
    idler = PhotonEvents(pairs.t_idler, origin.copy(), pairs.created, -pairs.mode * source.fsr_idler)
    return signal, idler


def apply_memory(events: PhotonEvents, memory: Optional[MemoryChannel], rng: np.random.Generator) -> PhotonEvents:
    """Recall (delayed), leak (undelayed, origin=leak) or absorb each pair photon.

    Broadband noise is outside the comb and passes unchanged.
    """
    if memory is None or len(events) == 0:
        return events
    u = rng.random(len(events))
    is_pair = events.origin == PAIR
    echo = is_pair & (u < memory.efficiency)
    leak = is_pair & ~echo & (u < memory.efficiency + memory.transmission)
    out = events.take(echo | leak | ~is_pair)
    time = np.where(echo, events.time + memory.delay, events.time)[echo | leak | ~is_pair]
    origin = np.where(leak, LEAK, events.origin).astype(np.int8)[echo | leak | ~is_pair]
    return PhotonEvents(time, origin, out.created, out.offset)


def thin_and_jitter(events: PhotonEvents, chain: DetectionChain, rng: np.random.Generator) -> PhotonEvents:
    if len(events) == 0:
        return events
    keep = rng.random(len(events)) < chain.detection_probability(events.offset)
    out = events.take(keep)
    sigma = chain.detector.jitter_sigma
    if sigma > 0 and len(out):
        out.time = out.time + rng.normal(0.0, sigma, size=len(out))
    return out


def dark_counts(rate: float, t0: float, t1: float, rng: np.random.Generator) -> PhotonEvents:
    t = np.sort(rng.uniform(t0, t1, size=rng.poisson(rate * (t1 - t0))))
    return PhotonEvents(t, np.full(t.size, DARK, dtype=np.int8), np.full(t.size, np.nan), np.full(t.size, np.nan))


def apply_dead_time(times: np.ndarray, dead_time) -> np.ndarray:
    """Non-paralyzable dead time on sorted times; returns the index of kept tags."""
    n = times.size
    if n == 0 or dead_time <= 0 or not np.any(np.diff(times) < dead_time):
        return np.arange(n)
    kept = []
    next_free = times[0] - dead_time
    for k, t in enumerate(times.tolist()):
        if t >= next_free:
            kept.append(k)
            next_free = t + dead_time
    return np.asarray(kept, dtype=np.int64)


def apply_chain(events: PhotonEvents, chain: DetectionChain, rng: np.random.Generator, t0: float, t1: float) -> PhotonEvents:
    """Thinning, filters, jitter, dark counts and dead time, in that order.

    Result is sorted in time; times are kept in seconds.
    """
    out = thin_and_jitter(events, chain, rng)
    if chain.detector.dark_rate > 0:
        out = PhotonEvents.concat([out, dark_counts(chain.detector.dark_rate, t0, t1, rng)])
    out = out.take(np.argsort(out.time, kind="stable"))
    return out.take(apply_dead_time(out.time, chain.detector.dead_time))


def pump_off_windows(herald_times: np.ndarray, herald_created: np.ndarray, gating: PumpGating) -> tuple[np.ndarray, np.ndarray]:
    """Merged pump-off intervals (start, end] opened by heralds, scanned in time order.

    A herald whose own pair was created while the pump was off never
    existed and opens no window. A window never starts before the herald's
    own creation time, so pairs already emitted are kept. Dark counts
    (created = NaN) always herald.
    """
    order = np.argsort(herald_times, kind="stable")
    starts: list[float] = []
    ends: list[float] = []
    for h, c in zip(herald_times[order].tolist(), herald_created[order].tolist()):
        s, e = h + gating.off_delay, h + gating.recovery
        if c == c:
            i = bisect.bisect_left(starts, c) - 1
            if i >= 0 and c <= ends[i]:
                continue
            s = max(s, c)
        if ends and s <= ends[-1]:
            ends[-1] = max(ends[-1], e)
        else:
            starts.append(s)
            ends.append(e)
    return np.asarray(starts), np.asarray(ends)


def _inside(created: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    if starts.size == 0:
        return np.zeros(created.shape, dtype=bool)
    i = np.searchsorted(starts, created, side="left") - 1
    ok = (i >= 0) & ~np.isnan(created)
    return ok & (created <= ends[np.clip(i, 0, None)])


def gate_pump(signal: PhotonEvents, idler: PhotonEvents, gating: PumpGating) -> tuple[PhotonEvents, PhotonEvents]:
    """Drop everything the pump would not have created after a herald.

    ``idler`` must hold the detected idler stream, which provides the
    heralds. Removal is decided by creation time, so it commutes with
    memory and thinning applied earlier.
    """
    if gating.mode == "cw":
        return signal, idler
    starts, ends = pump_off_windows(idler.time, idler.created, gating)
    return signal.take(~_inside(signal.created, starts, ends)), idler.take(~_inside(idler.created, starts, ends))


def resolve_workers(workers: Optional[int] = None) -> int:
    env = os.environ.get("QMEM_THREADS")
    n = workers if workers is not None else (os.cpu_count() or 1)
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"QMEM_THREADS must be an integer, got {env!r}") from None
    return max(1, int(n))


def _map_blocks(fn, n_blocks: int, workers: Optional[int]) -> list:
    n = min(resolve_workers(workers), n_blocks)
    if n == 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, range(n_blocks)))


def _detected_block(config: ExperimentConfig, p: float, memory: Optional[MemoryChannel], b: int):
    pairs = _pairs_block(config, p, b)
    signal, idler = pair_photons(pairs, config.source)
    signal = PhotonEvents.concat([signal, _noise_block(config, b)])
    signal = apply_memory(signal, memory, stream(config.seed, _STAGE_MEMORY, b))
    signal = thin_and_jitter(signal, config.signal_chain, stream(config.seed, _STAGE_CHAIN["signal"], b))
    idler = thin_and_jitter(idler, config.idler_chain, stream(config.seed, _STAGE_CHAIN["idler"], b))
    idler = PhotonEvents.concat([idler, _dark_block(config, "idler", config.idler_chain, b)])
    return len(pairs), signal, idler, _dark_block(config, "signal", config.signal_chain, b)


def _to_tags(events: PhotonEvents, chain: DetectionChain, duration_ps: int) -> tuple[np.ndarray, np.ndarray]:
    ps = np.rint(events.time * 1e12)
    ok = (ps >= 0) & (ps <= duration_ps)
    ps = ps[ok].astype(np.int64)
    origin = events.origin[ok]
    order = np.argsort(ps, kind="stable")
    ps, origin = ps[order], origin[order]
    keep = apply_dead_time(ps, int(round(chain.detector.dead_time * 1e12)))
    return ps[keep], origin[keep]


def simulate(config: ExperimentConfig, workers: Optional[int] = None) -> tuple[TimeTags, int]:
    """Full pipeline in memory; returns the tags and the number of emitted pairs."""
    p = config.pair_probability
    memory = config.memory_channel
    blocks = _map_blocks(lambda b: _detected_block(config, p, memory, b), config.n_blocks, workers)
    n_pairs = sum(x[0] for x in blocks)
    signal = PhotonEvents.concat([x[1] for x in blocks])
    idler = PhotonEvents.concat([x[2] for x in blocks])
    signal, idler = gate_pump(signal, idler, config.gating)
    signal = PhotonEvents.concat([signal] + [x[3] for x in blocks])
    duration_ps = int(round(config.duration * 1e12))
    s_t, s_o = _to_tags(signal, config.signal_chain, duration_ps)
    i_t, i_o = _to_tags(idler, config.idler_chain, duration_ps)
    tags = TimeTags(duration_ps, int(config.seed), {"signal": s_t, "idler": i_t}, {"signal": s_o, "idler": i_o})
    return tags, n_pairs


def _flatten(obj, prefix: str, out: dict[str, str]) -> None:
    if is_dataclass(obj):
        obj = asdict(obj)
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(v, f"{prefix}.{k}" if prefix else str(k), out)
    elif isinstance(obj, (list, tuple)):
        for k, v in enumerate(obj):
            _flatten(v, f"{prefix}.{k}", out)
    else:
        if isinstance(obj, Enum):
            obj = obj.value
        out[prefix] = repr(obj) if isinstance(obj, float) else str(obj)


def config_echo(config: ExperimentConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    _flatten(config, "config", out)
    return out


@dataclass
class RunResult:
    tags: TimeTags
    n_pairs: int
    pair_probability: float
    manifest: dict[str, str]
    tag_path: Optional[Path] = None
    manifest_path: Optional[Path] = None


def manifest_path_for(tag_path) -> Path:
    tag_path = Path(tag_path)
    return tag_path.with_name(tag_path.name + ".manifest")


def run(config: ExperimentConfig, out=None, workers: Optional[int] = None) -> RunResult:
    """Simulate, then optionally write the tag file and its manifest next to it."""
    tags, n_pairs = simulate(config, workers)
    data = tags.to_text().encode("ascii")
    echo = config_echo(config)
    config_hash = hashlib.sha256("\n".join(f"{k}={v}" for k, v in sorted(echo.items())).encode()).hexdigest()
    manifest = {
        "format": "qmemtags v1",
        "seed": str(config.seed),
        "config_sha256": config_hash,
        "tag_sha256": hashlib.sha256(data).hexdigest(),
        "pair_probability": repr(config.pair_probability),
        "n_slots": str(config.n_slots),
        "n_pairs_emitted": str(n_pairs),
    }
    for ch, counts in tags.counts_by_origin().items():
        for origin, n in counts.items():
            manifest[f"counts.{ch}.{origin}"] = str(n)
    manifest.update(echo)
    result = RunResult(tags, n_pairs, config.pair_probability, manifest)
    if out is not None:
        tag_path = Path(out)
        man_path = manifest_path_for(tag_path)
        try:
            tag_path.write_bytes(data)
            man_path.write_text("".join(f"{k} = {v}\n" for k, v in manifest.items()), encoding="utf-8")
        except OSError as exc:
            raise RunIOError(f"cannot write run output: {exc}") from exc
        result.tag_path, result.manifest_path = tag_path, man_path
    return result


def read_manifest(path) -> dict[str, str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RunIOError(f"cannot read manifest: {exc}") from exc
    out = {}
    for line in lines:
        if line.strip():
            k, _, v = line.partition(" = ")
            out[k] = v
    return out


def multimode_thermal_counts(n_modes: int, mean: float, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    """Per-slot photon numbers of ``n_modes`` equally populated thermal modes."""
    if n_modes < 1 or not mean > 0:
        raise ValueError("need n_modes >= 1 and mean > 0")
    return rng.negative_binomial(n_modes, n_modes / (n_modes + mean), size=n_slots)
