import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import integrate
from scipy import stats as scipy_stats

from .errors import (
    AdjustmentUnavailableError,
    AggregationError,
    ComparisonError,
    CompositionError,
    InvalidQuantityError,
    TraceTooShortError,
)
from .model import MACHINE_CHANNEL, FunctionalUnit, ResourceTrace, RunRecord

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365


@dataclass(frozen=True)
class SummaryStat:
    mean: float
    sample_std: Optional[float]  # None when n == 1
    n: int


@dataclass(frozen=True)
class UnitStats:
    unit: str
    per_channel_energy: Dict[str, SummaryStat]  # J
    bytes: SummaryStat
    duration: SummaryStat  # s
    absent_channels: FrozenSet[str] = frozenset()
    composite_of: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.duration.n


@dataclass(frozen=True)
class IdleAdjustment:
    raw: float  # J
    adjusted: float  # J
    floored: bool
    idle_power_w: float


@dataclass(frozen=True)
class UnitComparison:
    delta_energy: Dict[str, float]  # J, right - left
    relative_delta: Dict[str, Optional[float]]
    welch_t: Dict[str, Optional[float]]
    delta_bytes: float
    relative_delta_bytes: Optional[float]
    delta_duration: float  # s
    delta_emissions: Dict[str, float] = field(default_factory=dict)  # kgCO2e
    p_value: Dict[str, Optional[float]] = field(default_factory=dict)
    significant: Dict[str, Optional[bool]] = field(default_factory=dict)


@dataclass(frozen=True)
class ComparisonReport:
    left: str
    right: str
    per_unit: Dict[str, UnitComparison]
    alpha: Optional[float] = None


@dataclass(frozen=True)
class Extrapolation:
    per_interaction_energy_kwh: float
    per_interaction_emissions_kgco2e: float
    daily_volume: float
    days_per_year: int
    annual_energy_kwh: float
    annual_emissions_kgco2e: float


def integrate_energy_detailed(trace: ResourceTrace) -> Tuple[Dict[str, float], Set[str]]:
    """Trapezoidal energy per channel plus the channels that were not present in every sample"""

    if len(trace.power) < 2:
        raise TraceTooShortError(f"Integration needs at least 2 power samples, got {len(trace.power)}")

    t_s = np.array([sample.t for sample in trace.power], dtype=float) / 1000.0
    energies: Dict[str, float] = {}
    partial: Set[str] = set()

    for channel in trace.channels:
        watts = np.array([sample.channels.get(channel, np.nan) for sample in trace.power], dtype=float)
        present = ~np.isnan(watts)
        if present.all():
            energies[channel] = float(integrate.trapezoid(watts, x=t_s))
            continue
        # Only intervals with the channel at both ends count
        partial.add(channel)
        both = present[:-1] & present[1:]
        segments = 0.5 * (watts[:-1] + watts[1:]) * np.diff(t_s)
        energies[channel] = float(np.sum(segments[both])) if both.any() else 0.0

    return energies, partial


def integrate_energy(trace: ResourceTrace) -> Dict[str, float]:
    energies, _ = integrate_energy_detailed(trace)
    return energies


def _summary(values: Sequence[float]) -> SummaryStat:
    values = [float(value) for value in values]
    mean = float(statistics.mean(values))
    std = float(statistics.stdev(values)) if len(values) > 1 else None
    return SummaryStat(mean=mean, sample_std=std, n=len(values))


def aggregate_runs(records: Sequence[RunRecord]) -> UnitStats:
    """Mean and sample standard deviation (n-1) per channel, bytes and duration"""

    if not records:
        raise AggregationError("Cannot aggregate an empty list of runs")
    units = {record.unit for record in records}
    configurations = {record.configuration for record in records}
    if len(units) > 1:
        raise AggregationError(f"Cannot aggregate runs of different units: {', '.join(sorted(units))}")
    if len(configurations) > 1:
        raise AggregationError(
            f"Cannot aggregate runs of different configurations: {', '.join(sorted(configurations))}")

    channels: List[str] = []
    for record in records:
        for channel in record.energy_joules:
            if channel not in channels:
                channels.append(channel)
    complete = [channel for channel in channels if all(channel in record.energy_joules for record in records)]
    absent = set(channels) - set(complete)
    for record in records:
        absent.update(record.trace.absent_channels)
    absent -= set(complete)

    return UnitStats(
        unit=records[0].unit,
        per_channel_energy={channel: _summary([record.energy_joules[channel] for record in records])
                            for channel in complete},
        bytes=_summary([record.bytes_total for record in records]),
        duration=_summary([record.duration_s for record in records]),
        absent_channels=frozenset(absent),
    )


def _add_summaries(summaries: Sequence[SummaryStat]) -> SummaryStat:
    if len(summaries) == 1:
        return summaries[0]
    mean = math.fsum(summary.mean for summary in summaries)
    if any(summary.sample_std is None for summary in summaries):
        std = None
    else:
        # Independent members: variances add
        std = math.sqrt(math.fsum(summary.sample_std ** 2 for summary in summaries))
    return SummaryStat(mean=mean, sample_std=std, n=min(summary.n for summary in summaries))


def add_stats(name: str, members: Sequence[UnitStats]) -> UnitStats:
    """Stats of running the member units back to back"""
    channels = [channel for channel in members[0].per_channel_energy
                if all(channel in member.per_channel_energy for member in members)]
    absent: Set[str] = set()
    for member in members:
        absent.update(member.absent_channels)
        absent.update(set(member.per_channel_energy) - set(channels))
    return UnitStats(
        unit=name,
        per_channel_energy={channel: _add_summaries([member.per_channel_energy[channel] for member in members])
                            for channel in channels},
        bytes=_add_summaries([member.bytes for member in members]),
        duration=_add_summaries([member.duration for member in members]),
        absent_channels=frozenset(absent),
        composite_of=tuple(member.unit for member in members),
    )


def compose_units(stats: Mapping[str, UnitStats], composite: FunctionalUnit) -> UnitStats:
    if not composite.composite_of:
        raise CompositionError(f"Composite unit '{composite.name}' has no members", field='composite_of')
    missing = [member for member in composite.composite_of if member not in stats]
    if missing:
        raise CompositionError(
            f"Composite unit '{composite.name}' references unmeasured unit '{missing[0]}'", field=missing[0])
    return add_stats(composite.name, [stats[member] for member in composite.composite_of])


def stats_power(stats: UnitStats, channel: str = MACHINE_CHANNEL) -> float:
    """Mean power of a unit, derived as mean energy over mean duration"""
    if channel not in stats.per_channel_energy:
        raise AdjustmentUnavailableError(f"Unit '{stats.unit}' has no '{channel}' energy", field=channel)
    if stats.duration.mean <= 0:
        raise AdjustmentUnavailableError(f"Unit '{stats.unit}' has zero mean duration")
    return stats.per_channel_energy[channel].mean / stats.duration.mean


def idle_adjust(unit_energy: float, idle_stats: Optional[UnitStats], duration: float) -> IdleAdjustment:
    """Subtract the idle baseline (idle power x duration), floored at zero"""

    if idle_stats is None:
        raise AdjustmentUnavailableError("No Idle unit was measured; idle adjustment unavailable")
    if unit_energy < 0 or duration < 0:
        raise InvalidQuantityError(f"Energy and duration must be >= 0, got {unit_energy}, {duration}")
    idle_power = stats_power(idle_stats)
    adjusted = unit_energy - idle_power * duration
    floored = adjusted < 0
    if floored:
        logger.warning(f"Idle-adjusted energy {adjusted:.3f} J floored at 0")
    return IdleAdjustment(raw=unit_energy, adjusted=max(adjusted, 0.0), floored=floored, idle_power_w=idle_power)


def _relative(delta: float, left_mean: float) -> Optional[float]:
    return delta / left_mean if left_mean > 0 else None


def welch_t(left: SummaryStat, right: SummaryStat) -> Tuple[Optional[float], Optional[float]]:
    """Welch's t statistic (right - left) and its two-sided p-value"""

    if left.sample_std is None or right.sample_std is None:
        return None, None
    if left.sample_std == 0 and right.sample_std == 0:
        if right.mean == left.mean:
            return 0.0, 1.0
        return None, None
    result = scipy_stats.ttest_ind_from_stats(
        right.mean, right.sample_std, right.n,
        left.mean, left.sample_std, left.n,
        equal_var=False,
    )
    return float(result.statistic), float(result.pvalue)


def compare(left_label: str, left: Mapping[str, UnitStats], right_label: str, right: Mapping[str, UnitStats],
            left_emissions: Optional[Mapping[str, Mapping[str, float]]] = None,
            right_emissions: Optional[Mapping[str, Mapping[str, float]]] = None,
            alpha: Optional[float] = None) -> ComparisonReport:
    """Per shared unit, right minus left for every channel, bytes, duration and emission component"""

    shared = [unit for unit in left if unit in right]
    if not shared:
        raise ComparisonError(f"Campaigns '{left_label}' and '{right_label}' share no functional units")
    if alpha is not None and not 0 < alpha < 1:
        raise ComparisonError(f"Significance threshold must be in (0, 1), got {alpha}", field='alpha')

    per_unit = {}
    for unit in shared:
        a, b = left[unit], right[unit]
        channels = [channel for channel in a.per_channel_energy if channel in b.per_channel_energy]

        delta_energy, relative, t_stats, p_values, verdicts = {}, {}, {}, {}, {}
        for channel in channels:
            delta = b.per_channel_energy[channel].mean - a.per_channel_energy[channel].mean
            delta_energy[channel] = delta
            relative[channel] = _relative(delta, a.per_channel_energy[channel].mean)
            t_value, p_value = welch_t(a.per_channel_energy[channel], b.per_channel_energy[channel])
            t_stats[channel] = t_value
            if alpha is not None:
                p_values[channel] = p_value
                verdicts[channel] = None if p_value is None else p_value < alpha

        delta_emissions = {}
        if left_emissions and right_emissions and unit in left_emissions and unit in right_emissions:
            delta_emissions = {component: right_emissions[unit][component] - left_emissions[unit][component]
                               for component in left_emissions[unit] if component in right_emissions[unit]}

        delta_bytes = b.bytes.mean - a.bytes.mean
        per_unit[unit] = UnitComparison(
            delta_energy=delta_energy,
            relative_delta=relative,
            welch_t=t_stats,
            delta_bytes=delta_bytes,
            relative_delta_bytes=_relative(delta_bytes, a.bytes.mean),
            delta_duration=b.duration.mean - a.duration.mean,
            delta_emissions=delta_emissions,
            p_value=p_values,
            significant=verdicts,
        )

    return ComparisonReport(left=left_label, right=right_label, per_unit=per_unit, alpha=alpha)


def extrapolate(per_interaction_kwh: float, per_interaction_kgco2e: float, daily_volume: float,
                days_per_year: int = DAYS_PER_YEAR) -> Extrapolation:
    """Scale a per-interaction footprint to a year of global usage"""

    for name, value in (('per_interaction_kwh', per_interaction_kwh),
                        ('per_interaction_kgco2e', per_interaction_kgco2e),
                        ('daily_volume', daily_volume)):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
            raise InvalidQuantityError(f"{name} must be finite and >= 0, got {value!r}", field=name)

    interactions = daily_volume * days_per_year
    return Extrapolation(
        per_interaction_energy_kwh=per_interaction_kwh,
        per_interaction_emissions_kgco2e=per_interaction_kgco2e,
        daily_volume=daily_volume,
        days_per_year=days_per_year,
        annual_energy_kwh=per_interaction_kwh * interactions,
        annual_emissions_kgco2e=per_interaction_kgco2e * interactions,
    )
