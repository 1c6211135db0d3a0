"""Steady-state element models: pipes, compressor stations and valves.

Flows are in Mm3/d at standard conditions (273 K, 1.013 bar), pressures in
bar, lengths in km.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import brentq

from .errors import (ChokedFlow, ClosedValveFlow, InvalidScheme, LaminarRegime,
                     NonConvergence, PressureCollapse)

R_AIR = 287.0          # J/(kg K)
RHO_AIR = 1.293        # kg/m3 at standard conditions
SECONDS_PER_DAY = 86400.0
DEFAULT_ROUGHNESS = 1.2e-5   # m (0.012 mm)
DEFAULT_VISCOSITY = 1.1e-5   # Pa s, typical natural gas


@dataclass(frozen=True)
class GasProperties:
    specific_density_on_air: float = 0.6
    compressibility: float = 0.9
    temperature: float = 283.15
    calorific_value: float = 38.0
    composition: tuple | None = None

    def __post_init__(self):
        if self.specific_density_on_air <= 0:
            raise ValueError("G must be positive")
        if not 0 < self.compressibility <= 1.2:
            raise ValueError("compressibility must lie in (0, 1.2]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive (K)")

    @property
    def gas_constant(self) -> float:
        return R_AIR / self.specific_density_on_air

    def mass_flow(self, q) -> float:
        """Mm3/d at standard conditions -> kg/s."""
        return q * 1e6 * self.specific_density_on_air * RHO_AIR / SECONDS_PER_DAY


@dataclass(frozen=True)
class PipeSpec:
    length: float
    diameters: tuple = (1.0,)
    efficiency: float = 0.92
    roughness: float = DEFAULT_ROUGHNESS
    k_D_override: float | None = None

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("pipe length must be positive")
        if not self.diameters or any(d <= 0 for d in self.diameters):
            raise ValueError("pipe diameters must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError("pipe efficiency must lie in (0, 1]")


def colebrook_residual(lam, reynolds, roughness, diameter) -> float:
    x = 1.0 / math.sqrt(lam)
    return x + 2.0 * math.log10(roughness / (3.71 * diameter) + 2.51 * x / reynolds)


def friction_factor(reynolds, roughness=DEFAULT_ROUGHNESS, diameter=1.0,
                    tol=1e-10, max_iter=200, damping=0.7) -> float:
    """Colebrook-White friction factor by damped fixed-point iteration on 1/sqrt(lambda)."""
    if reynolds <= 2300:
        raise LaminarRegime(f"Re={reynolds:g} is laminar; use 64/Re")
    if diameter <= 0 or roughness < 0:
        raise ValueError("diameter must be positive and roughness non-negative")
    rel = roughness / (3.71 * diameter)
    x = 8.0   # 1/sqrt(0.0156)
    for _ in range(max_iter):
        g = -2.0 * math.log10(rel + 2.51 * x / reynolds)
        x = (1 - damping) * x + damping * g
        lam = 1.0 / (x * x)
        if abs(colebrook_residual(lam, reynolds, roughness, diameter)) < tol:
            return lam
    raise NonConvergence(f"Colebrook-White did not converge for Re={reynolds:g}")


def reynolds_number(q, diameter, gas: GasProperties, viscosity=DEFAULT_VISCOSITY) -> float:
    return 4.0 * abs(gas.mass_flow(q)) / (math.pi * diameter * viscosity)


def pipe_coefficient(spec: PipeSpec, gas: GasProperties, friction=None, reynolds=None,
                     pi4_squared=False) -> float:
    """Composite resistance k_D of a (possibly parallel) pipe section.

    The friction factor is taken from `friction` if given, else from
    Colebrook-White at `reynolds` (fully rough limit when that is None too).
    By default the pi/4 factor enters the denominator once, as the formula is
    usually printed; `pi4_squared=True` squares it as the area derivation
    would suggest.
    """
    if spec.k_D_override is not None:
        return spec.k_D_override
    d = max(spec.diameters)
    if friction is None:
        if reynolds is None:
            x = -2.0 * math.log10(spec.roughness / (3.71 * d))
            friction = 1.0 / (x * x)
        else:
            friction = friction_factor(reynolds, spec.roughness, d)
    s = sum(di ** 2.5 for di in spec.diameters)
    pi4 = (math.pi / 4) ** (2 if pi4_squared else 1)
    num = R_AIR * RHO_AIR ** 2 * 1e-1 * friction * gas.compressibility \
        * gas.specific_density_on_air * gas.temperature
    return num / (spec.efficiency ** 2 * pi4 * s * s)


def pipe_outlet_pressure(inlet_pressure, flow, k_D, length) -> float:
    rad = inlet_pressure ** 2 - k_D * length * flow * abs(flow)
    if inlet_pressure <= 0 or rad <= 0:
        raise PressureCollapse(f"pressure collapses (P_i={inlet_pressure:g}, q={flow:g})")
    return math.sqrt(rad)


def pipe_inlet_pressure(outlet_pressure, flow, k_D, length) -> float:
    """Inverse of pipe_outlet_pressure for a given outlet pressure."""
    rad = outlet_pressure ** 2 + k_D * length * flow * abs(flow)
    if outlet_pressure <= 0 or rad <= 0:
        raise PressureCollapse(f"pressure collapses (P_e={outlet_pressure:g}, q={flow:g})")
    return math.sqrt(rad)


@dataclass(frozen=True)
class MachineGroup:
    driver_type: str
    unit_power: float        # MW
    units_available: int
    parallel: int = 0
    serial: int = 0
    efficiency: float = 1.0
    max_string_flow: float | None = None   # Mm3/d per parallel string

    def __post_init__(self):
        if self.driver_type not in ("turbine", "electro"):
            raise InvalidScheme(f"unknown driver {self.driver_type!r}")
        if self.unit_power <= 0:
            raise InvalidScheme("unit power must be positive")
        if self.parallel < 0 or self.serial < 0 or (self.parallel == 0) != (self.serial == 0):
            raise InvalidScheme(f"bad wiring {self.parallel} x {self.serial}")
        if self.units_running > self.units_available:
            raise InvalidScheme(f"{self.units_running} running > {self.units_available} available")

    @property
    def units_running(self) -> int:
        return self.parallel * self.serial

    @property
    def active(self) -> bool:
        return self.units_running > 0

    @property
    def label(self) -> str:
        return f"{self.parallel}x{self.serial}" if self.active else "-"


@dataclass(frozen=True)
class CompressorScheme:
    groups: tuple = ()
    station_efficiency: float = 1.0
    gas_inlet_temperature: float = 15.0   # degC
    polytropic_exponent: float = 1.3
    max_ratio: float = 2.0

    def __post_init__(self):
        if not 0 < self.station_efficiency <= 1:
            raise InvalidScheme("station efficiency must lie in (0, 1]")
        if self.polytropic_exponent <= 1:
            raise InvalidScheme("polytropic exponent must exceed 1")
        if self.max_ratio < 1:
            raise InvalidScheme("max ratio must be at least 1")

    @property
    def active_groups(self) -> list:
        return [g for g in self.groups if g.active]

    @property
    def is_bypass(self) -> bool:
        return not self.active_groups

    @property
    def rated_power(self) -> float:
        return sum(g.units_running * g.unit_power for g in self.groups)

    @property
    def machines(self) -> int:
        return sum(g.units_running for g in self.groups)

    @property
    def label(self) -> str:
        return "/".join(g.label for g in self.groups) or "bypass"


@dataclass(frozen=True)
class CompressorResult:
    outlet_pressure: float
    power: float
    pressure_ratio: float
    specific_polytropic_head: float   # kJ/kg, whole station


def polytropic_head(ratio, gas: GasProperties, temperature, n=1.3) -> float:
    """Specific polytropic work in J/kg for pressure ratio `ratio`."""
    e = (n - 1) / n
    return gas.compressibility * gas.gas_constant * temperature / e * (ratio ** e - 1)


def _stage_ratio(power_w, mass, gas, temperature, n) -> float:
    # closed-form inverse of power = mass * H_p(x)
    e = (n - 1) / n
    base = gas.compressibility * gas.gas_constant * temperature / e
    return (1 + power_w / (mass * base)) ** (1 / e)


def full_ratio(flow, gas: GasProperties, scheme: CompressorScheme) -> float:
    """Pressure ratio the running machines reach at full load, uncapped."""
    groups = scheme.active_groups
    if not groups:
        return 1.0
    if flow < 0:
        raise InvalidScheme("active station cannot pass reverse flow")
    for g in groups:
        if g.max_string_flow is not None and flow / g.parallel > g.max_string_flow + 1e-12:
            raise ChokedFlow(f"flow {flow:g} exceeds {g.parallel} x {g.max_string_flow:g}")
    if flow == 0:
        return math.inf
    T = scheme.gas_inlet_temperature + 273.15
    n = scheme.polytropic_exponent
    m = gas.mass_flow(flow)
    eff = [scheme.station_efficiency * g.efficiency for g in groups]
    if len(groups) == 1:
        g = groups[0]
        x = _stage_ratio(g.unit_power * 1e6 * eff[0], m / g.parallel, gas, T, n)
        return x ** g.serial

    # common ratio S for parallel groups: sum of group mass flows equals m
    def excess(log_s):
        s = math.exp(log_s)
        tot = 0.0
        for g, ef in zip(groups, eff):
            h = polytropic_head(s ** (1.0 / g.serial), gas, T, n)
            tot += g.parallel * g.unit_power * 1e6 * ef / h
        return tot - m

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2
    return math.exp(brentq(excess, 1e-12, hi, xtol=1e-14, rtol=1e-14))


def capped_ratio(flow, gas, scheme, max_ratio=None) -> float:
    cap = scheme.max_ratio if max_ratio is None else max_ratio
    return min(full_ratio(flow, gas, scheme), cap) if not scheme.is_bypass else 1.0


def compressor_outlet(inlet_pressure, flow, gas: GasProperties, scheme: CompressorScheme,
                      control=1.0, max_ratio=None) -> CompressorResult:
    """Outlet pressure and power of a station running `scheme`.

    Running machines are fully loaded. The control u in [0, 1] throttles the
    achieved ratio to 1 + u (S_cap - 1), where S_cap is the full-load ratio
    limited by the station's maximum ratio.
    """
    if scheme.is_bypass:
        return CompressorResult(inlet_pressure, 0.0, 1.0, 0.0)
    if not 0 <= control <= 1:
        raise InvalidScheme(f"control {control} outside [0, 1]")
    s_cap = capped_ratio(flow, gas, scheme, max_ratio)
    s = 1 + control * (s_cap - 1)
    T = scheme.gas_inlet_temperature + 273.15
    head = polytropic_head(s, gas, T, scheme.polytropic_exponent) / 1e3
    return CompressorResult(inlet_pressure * s, scheme.rated_power, s, head)


def _station_max_ratio(edge):
    box = edge.side.get("ratio") if edge.side else None
    return box[1] if box else None


def edge_ratio(edge, flow, gas, choice=None, control=None) -> float:
    """Multiplicative pressure ratio of a station edge in its forward direction."""
    scheme = edge.choices[edge.choice if choice is None else choice]
    if scheme.is_bypass:
        return 1.0
    u = 1.0 if control is None and edge.control is None else (
        edge.control if control is None else control)
    s_cap = capped_ratio(flow, gas, scheme, _station_max_ratio(edge))
    return 1 + u * (s_cap - 1)


def edge_pipe_coefficient(edge, gas, flow=0.0) -> float:
    spec = edge.pipe
    if spec.k_D_override is not None:
        return spec.k_D_override
    d = max(spec.diameters)
    re = reynolds_number(flow, d, gas) if flow else None
    if re is not None and re <= 2300:
        re = None
    return pipe_coefficient(spec, gas, reynolds=re)


def _valve_state(edge, choice):
    c = edge.choice if choice is None else choice
    return edge.choices[c] if edge.choices else "open"


def edge_transfer(edge, inlet_pressure, flow, gas: GasProperties, choice=None, control=None) -> float:
    """Pressure at edge.k given the pressure at edge.i and the flow i -> k."""
    kind = edge.kind
    if kind == "pipe":
        return pipe_outlet_pressure(inlet_pressure, flow, edge_pipe_coefficient(edge, gas, flow),
                                    edge.pipe.length)
    if kind == "compressor_station":
        return inlet_pressure * edge_ratio(edge, flow, gas, choice, control)
    if kind == "control_valve":
        sp = edge.control if control is None else control
        if flow < 0:
            raise PressureCollapse(f"control valve {edge.id} cannot pass reverse flow", edge.id)
        if inlet_pressure < sp - 1e-12:
            raise PressureCollapse(f"control valve {edge.id}: inlet {inlet_pressure:g} below set-point {sp:g}",
                                   edge.id)
        return sp
    if kind == "shutoff_valve":
        if _valve_state(edge, choice) == "closed" and flow != 0:
            raise ClosedValveFlow(f"valve {edge.id} is closed but carries {flow:g}")
        return inlet_pressure
    return inlet_pressure   # contract link


def edge_inverse_transfer(edge, outlet_pressure, flow, gas, choice=None, control=None) -> float:
    """Pressure at edge.i given the pressure at edge.k and the flow i -> k.

    A control valve pins its outlet to the set-point and leaves the inlet free
    above it; the smallest admissible inlet (the set-point) is returned.
    """
    kind = edge.kind
    if kind == "pipe":
        return pipe_inlet_pressure(outlet_pressure, flow, edge_pipe_coefficient(edge, gas, flow),
                                   edge.pipe.length)
    if kind == "compressor_station":
        return outlet_pressure / edge_ratio(edge, flow, gas, choice, control)
    if kind == "control_valve":
        sp = edge.control if control is None else control
        if flow < 0 or abs(outlet_pressure - sp) > 1e-9:
            raise PressureCollapse(f"control valve {edge.id} cannot deliver {outlet_pressure:g}", edge.id)
        return outlet_pressure
    if kind == "shutoff_valve" and _valve_state(edge, choice) == "closed" and flow != 0:
        raise ClosedValveFlow(f"valve {edge.id} is closed but carries {flow:g}")
    return outlet_pressure


def edge_power(edge, flow, gas, choice=None) -> float:
    if edge.kind != "compressor_station":
        return 0.0
    return edge.choices[edge.choice if choice is None else choice].rated_power
