"""Closed-form efficiency model of atomic frequency comb (AFC) memories.

Frequencies are in Hz and times in seconds throughout. The comb is a
periodic train of absorbing teeth with peak optical depth ``d``, period
``delta`` and finesse ``F = delta / width``.

Effective depth and dephasing factor are computed from Fourier
coefficients of the *periodic* comb. By Poisson summation these are equal
to the integrals of a single tooth over the whole frequency axis, which is
why the closed forms below do not depend on where one period is cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from .errors import RegimeError

LN2 = math.log(2.0)


class Shape(str, Enum):
    SQUARE = "square"
    GAUSSIAN = "gaussian"
    LORENTZIAN = "lorentzian"


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class ToothShape:
    """Single tooth; ``width`` is FWHM (gaussian, lorentzian) or full width (square)."""

    kind: Shape
    width: float

    def __post_init__(self):
        object.__setattr__(self, "kind", Shape(self.kind))
        if not self.width > 0:
            raise ValueError(f"tooth width must be > 0, got {self.width}")


@dataclass(frozen=True)
class CombSpec:
    """AFC geometry.

    Build it either from the finesse (``CombSpec(d, delta, finesse)``) or
    from the tooth width (``CombSpec.from_width``). The value that was given
    is stored verbatim and the other one is derived, so both constructors
    round-trip exactly.
    """

    d: float
    delta: float
    finesse: float
    kind: Shape = Shape.SQUARE
    bandwidth: Optional[float] = None
    width: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", Shape(self.kind))
        if not self.d >= 0:
            raise ValueError(f"peak optical depth must be >= 0, got {self.d}")
        if not self.delta > 0:
            raise ValueError(f"comb periodicity must be > 0, got {self.delta}")
        if not self.finesse >= 1:
            raise ValueError(f"finesse must be >= 1, got {self.finesse}")
        # gaussian/lorentzian teeth overlap their neighbours below F=2
        if self.kind is not Shape.SQUARE and self.finesse < 2:
            raise ValueError(f"{self.kind.value} teeth need finesse >= 2, got {self.finesse}")
        if self.bandwidth is None:
            object.__setattr__(self, "bandwidth", self.delta)
        if not self.bandwidth >= self.delta:
            raise ValueError("comb bandwidth must be >= periodicity")
        if self.width is None:
            object.__setattr__(self, "width", self.delta / self.finesse)
        elif not math.isclose(self.width * self.finesse, self.delta, rel_tol=1e-12):
            raise ValueError("tooth width inconsistent with delta / finesse")

    @classmethod
    def from_width(cls, d, delta, width, kind=Shape.SQUARE, bandwidth=None) -> "CombSpec":
        if not width > 0:
            raise ValueError(f"tooth width must be > 0, got {width}")
        return cls(d, delta, delta / width, kind, bandwidth, width)

    @property
    def shape(self) -> ToothShape:
        return ToothShape(self.kind, self.width)


def _gaussian_spin_decay(linewidth: float, t: float) -> float:
    return math.exp(-((math.pi * linewidth * t) ** 2) / (2 * LN2))


def _exponential_spin_decay(linewidth: float, t: float) -> float:
    return math.exp(-math.pi * linewidth * t)


SPIN_DECAY_MODELS: dict[str, Callable[[float, float], float]] = {
    "gaussian": _gaussian_spin_decay,
    "exponential": _exponential_spin_decay,
}


@dataclass(frozen=True)
class Cavity:
    mirror_reflectivity: float
    round_trip_loss: float = 0.0

    def __post_init__(self):
        for name in ("mirror_reflectivity", "round_trip_loss"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class MemorySpec:
    comb: CombSpec
    direction: Direction = Direction.FORWARD
    eta_control: float = 1.0
    spin_linewidth: float = 0.0
    spin_wave_time: float = 0.0
    cavity: Optional[Cavity] = None
    spin_decay_model: str = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if not 0 <= self.eta_control <= 1:
            raise ValueError(f"eta_control must be in [0, 1], got {self.eta_control}")
        if not self.spin_linewidth >= 0:
            raise ValueError("spin_linewidth must be >= 0")
        if not self.spin_wave_time >= 0:
            raise ValueError("spin_wave_time must be >= 0")
        if self.direction is Direction.BACKWARD and self.spin_wave_time == 0:
            raise ValueError("backward recall needs spin-wave storage (spin_wave_time > 0)")
        if self.spin_decay_model not in SPIN_DECAY_MODELS:
            raise ValueError(f"unknown spin decay model {self.spin_decay_model!r}")

    @property
    def spin_wave(self) -> bool:
        return self.spin_wave_time > 0


@dataclass(frozen=True)
class EfficiencyBudget:
    eta_afc: float
    eta_deph: float
    d_eff: float
    eta_spin: float = 1.0
    eta_control: float = 1.0
    eta_total: float = float("nan")

    def __post_init__(self):
        if math.isnan(self.eta_total):
            object.__setattr__(self, "eta_total", self.eta_afc * self.eta_control**2 * self.eta_spin)


def effective_depth(comb: CombSpec) -> float:
    """Period-averaged optical depth of the comb."""
    if comb.kind is Shape.SQUARE:
        return comb.d / comb.finesse
    if comb.kind is Shape.GAUSSIAN:
        return comb.d / comb.finesse * math.sqrt(math.pi / (4 * LN2))
    return comb.d * math.pi / (2 * comb.finesse)


def dephasing_factor(comb: CombSpec) -> float:
    """Squared Fourier transform of the normalised tooth, taken at the echo time 1/delta."""
    x = math.pi / comb.finesse
    if comb.kind is Shape.SQUARE:
        return (math.sin(x) / x) ** 2
    if comb.kind is Shape.GAUSSIAN:
        return math.exp(-(x**2) / (2 * LN2))
    return math.exp(-2 * x)


def forward_efficiency(d_eff: float, eta_deph: float = 1.0) -> float:
    return d_eff**2 * math.exp(-d_eff) * eta_deph


def backward_efficiency(d_eff: float, eta_deph: float = 1.0) -> float:
    return (-math.expm1(-d_eff)) ** 2 * eta_deph


def echo_efficiency(spec: MemorySpec) -> EfficiencyBudget:
    """AFC echo efficiency without a cavity, by recall direction."""
    if spec.cavity is not None:
        raise RegimeError("memory has a cavity; use cavity_echo_efficiency")
    d_eff = effective_depth(spec.comb)
    eta_deph = dephasing_factor(spec.comb)
    if spec.direction is Direction.FORWARD:
        eta = forward_efficiency(d_eff, eta_deph)
    else:
        eta = backward_efficiency(d_eff, eta_deph)
    return EfficiencyBudget(eta_afc=eta, eta_deph=eta_deph, d_eff=d_eff)


def impedance_match_reflectivity(d_eff: float) -> float:
    if not 0 <= d_eff < 1:
        raise RegimeError(f"impedance matching needs 0 <= d_eff < 1, got {d_eff}")
    return math.exp(-2 * d_eff)


def cavity_absorption(d_eff: float, reflectivity: float, round_trip_loss: float = 0.0) -> float:
    """Probability that light entering an asymmetric cavity is absorbed by the atoms.

    Back mirror is perfect; single-pass amplitude transmission is
    exp(-d_eff/2), other intracavity loss enters as an intensity factor per
    round trip. Reflected power follows the usual Fabry-Perot expression.
    """
    r = math.sqrt(reflectivity)
    a = math.exp(-d_eff) * math.sqrt(1.0 - round_trip_loss)
    if r * a == 1.0:
        return 0.0
    reflected = ((r - a) / (1.0 - r * a)) ** 2
    internal = 1.0 - math.exp(-2 * d_eff) * (1.0 - round_trip_loss)
    if internal == 0.0:
        return 0.0
    atomic_share = -math.expm1(-2 * d_eff) / internal
    return (1.0 - reflected) * atomic_share


def cavity_echo_efficiency(spec: MemorySpec) -> EfficiencyBudget:
    """Echo efficiency of a cavity-assisted memory.

    Re-emission leaves through the input mirror with the same coupling that
    governs absorption, so the echo efficiency is absorption squared times
    the dephasing factor. It equals the dephasing factor at impedance match.
    """
    if spec.cavity is None:
        raise RegimeError("memory has no cavity; use echo_efficiency")
    d_eff = effective_depth(spec.comb)
    if not d_eff < 1:
        raise RegimeError(f"cavity model assumes d_eff < 1, got {d_eff:.4g}")
    eta_deph = dephasing_factor(spec.comb)
    absorbed = cavity_absorption(d_eff, spec.cavity.mirror_reflectivity, spec.cavity.round_trip_loss)
    return EfficiencyBudget(eta_afc=absorbed**2 * eta_deph, eta_deph=eta_deph, d_eff=d_eff)


def spin_decay(spec: MemorySpec) -> float:
    return SPIN_DECAY_MODELS[spec.spin_decay_model](spec.spin_linewidth, spec.spin_wave_time)


def total_efficiency(spec: MemorySpec) -> EfficiencyBudget:
    echo = cavity_echo_efficiency(spec) if spec.cavity is not None else echo_efficiency(spec)
    if not spec.spin_wave:
        return echo
    return replace(
        echo,
        eta_spin=spin_decay(spec),
        eta_control=spec.eta_control,
        eta_total=float("nan"),
    )


def transmission(comb: CombSpec) -> float:
    """Fraction of light leaking straight through the comb (no storage)."""
    return math.exp(-effective_depth(comb))


def echo_times(comb: CombSpec, spin_wave_time: float = 0.0) -> list[float]:
    if spin_wave_time < 0:
        raise ValueError("spin_wave_time must be >= 0")
    return [1.0 / comb.delta + spin_wave_time]


def dual_comb_echo_times(delta1: float, delta2: float) -> tuple[float, float, float]:
    """Echo times of a two-comb structure and the resulting interferometer delay."""
    if not (delta1 > 0 and delta2 > 0):
        raise ValueError("comb periodicities must be > 0")
    if delta1 == delta2:
        raise ValueError("the two combs need different periodicities")
    t1, t2 = 1.0 / delta1, 1.0 / delta2
    return t1, t2, abs(t1 - t2)


def multimode_capacity(comb: CombSpec) -> int:
    # tiny tolerance so that e.g. 120 MHz / 20 MHz is not floored to 5
    return int(math.floor(comb.bandwidth / comb.delta * (1 + 1e-12)))


def min_comb_spacing(gamma_h: float, finesse: float) -> float:
    if not gamma_h > 0:
        raise ValueError("homogeneous linewidth must be > 0")
    if not finesse >= 1:
        raise ValueError("finesse must be >= 1")
    return 2.0 * gamma_h * finesse


def max_echo_time(gamma_h: float, finesse: float) -> float:
    return 1.0 / min_comb_spacing(gamma_h, finesse)
