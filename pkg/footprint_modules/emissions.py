"""Turns measured energy and traffic into kgCO2e.

User-side use phase goes through the grid intensity. Network and server shares,
use phase and embodied/end-of-life alike, are allocated per GB of traffic: they
are averages attributed by data volume, not metered. The user device's embodied
share is amortized linearly over the run's wall-clock duration.
"""
import math
from dataclasses import dataclass, fields
from typing import Dict, Optional

from .analysis import UnitStats, add_stats
from .errors import InvalidQuantityError
from .model import MACHINE_CHANNEL, EmissionFactors, MachineProfile, bytes_to_gb, joules_to_kwh

COMPONENTS = ('user_use', 'network_use', 'server_use', 'network_embodied_eol', 'server_embodied_eol', 'user_embodied')


@dataclass(frozen=True)
class EmissionBreakdown:
    user_use: float
    network_use: float
    server_use: float
    network_embodied_eol: float
    server_embodied_eol: float
    user_embodied: float
    total: float

    @classmethod
    def from_components(cls, **components: float) -> 'EmissionBreakdown':
        values = {name: float(components.get(name, 0.0)) for name in COMPONENTS}
        for name, value in values.items():
            if not math.isfinite(value) or value < 0:
                raise InvalidQuantityError(f"Emission component {name} must be >= 0, got {value!r}", field=name)
        return cls(total=math.fsum(values.values()), **values)

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _non_negative(value: float, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
        raise InvalidQuantityError(f"{name} must be finite and >= 0, got {value!r}", field=name)
    return value


def use_phase_emissions(energy_kwh: float, factors: EmissionFactors) -> float:
    _non_negative(energy_kwh, 'energy_kwh')
    return energy_kwh * factors.grid_intensity


def network_server_emissions(n_bytes: float, factors: EmissionFactors) -> Dict[str, float]:
    gb = bytes_to_gb(_non_negative(n_bytes, 'bytes'))
    return {
        'network_use': gb * factors.network_use_per_gb,
        'server_use': gb * factors.server_use_per_gb,
    }


def embodied_eol_emissions(n_bytes: float, factors: EmissionFactors) -> Dict[str, float]:
    gb = bytes_to_gb(_non_negative(n_bytes, 'bytes'))
    return {
        'network_embodied_eol': gb * factors.network_embodied_per_gb,
        'server_embodied_eol': gb * factors.server_embodied_per_gb,
    }


def user_embodied_share(machine: MachineProfile, duration_s: float) -> float:
    _non_negative(duration_s, 'duration_s')
    return machine.embodied_total * machine.usage_share * duration_s / machine.lifetime


def _machine_energy(stats: UnitStats):
    if MACHINE_CHANNEL not in stats.per_channel_energy:
        raise InvalidQuantityError(
            f"Unit '{stats.unit}' has no '{MACHINE_CHANNEL}' channel energy to convert", field=MACHINE_CHANNEL)
    return stats.per_channel_energy[MACHINE_CHANNEL]


def sum_stats(a: UnitStats, b: UnitStats) -> UnitStats:
    """Stats of running a then b back to back"""
    return add_stats(f"{a.unit}+{b.unit}", [a, b])


def total_footprint(stats: UnitStats, factors: EmissionFactors, machine: MachineProfile) -> EmissionBreakdown:
    """All components from the unit's mean energy, bytes and duration"""

    energy = _machine_energy(stats)
    return EmissionBreakdown.from_components(
        user_use=use_phase_emissions(joules_to_kwh(energy.mean), factors),
        user_embodied=user_embodied_share(machine, stats.duration.mean),
        **network_server_emissions(stats.bytes.mean, factors),
        **embodied_eol_emissions(stats.bytes.mean, factors),
    )


def footprint_std(stats: UnitStats, factors: EmissionFactors,
                  machine: MachineProfile) -> Optional[Dict[str, float]]:
    """Per-component std, propagated linearly from the energy, bytes and duration stds.

    No total: the per-GB components share one input and are fully correlated.
    """

    energy = _machine_energy(stats)
    if energy.sample_std is None or stats.bytes.sample_std is None or stats.duration.sample_std is None:
        return None
    gb_std = bytes_to_gb(stats.bytes.sample_std)
    return {
        'user_use': joules_to_kwh(energy.sample_std) * factors.grid_intensity,
        'network_use': gb_std * factors.network_use_per_gb,
        'server_use': gb_std * factors.server_use_per_gb,
        'network_embodied_eol': gb_std * factors.network_embodied_per_gb,
        'server_embodied_eol': gb_std * factors.server_embodied_per_gb,
        'user_embodied': user_embodied_share(machine, stats.duration.sample_std),
    }
