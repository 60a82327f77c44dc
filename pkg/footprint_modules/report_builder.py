import json
import logging
import sys
from datetime import datetime
from typing import Any, Dict, List, Mapping, Optional

from dateutil import parser as date_parser
from dateutil import tz

from .analysis import (
    Extrapolation,
    SummaryStat,
    UnitStats,
    aggregate_runs,
    compare,
    compose_units,
    idle_adjust,
)
from .emissions import COMPONENTS, footprint_std, total_footprint
from .errors import AdjustmentUnavailableError, ComparisonError, CompositionError, ReportFormatError
from .model import MACHINE_CHANNEL, CampaignRecord, EmissionFactors, MachineProfile, read_text
from .scenario.scenario_parser import ScenarioSpec

logger = logging.getLogger(__name__)

SCHEMA_VERSION = '1.0'
UNDEFINED = 'undefined'

METHODOLOGY = {
    'energy': 'Trapezoidal integration of sampled power over the driver-reported run window.',
    'statistics': 'Mean and sample standard deviation (n-1) over runs; a single run has an undefined std.',
    'idle_adjustment': 'Machine energy minus idle power (Idle mean energy / mean duration) x unit duration, '
                       'floored at 0 and flagged when floored.',
    'composites': 'Composite units are the sum of their members; variances add, assuming independent members.',
    'allocation': 'Network and server components are allocated per GB of traffic (10^9 bytes), not metered.',
    'user_embodied': 'Device embodied emissions x usage share x run duration / device lifetime.',
    'uncertainty': 'Per-component std propagated linearly from energy, bytes and duration stds.',
}


def utc_timestamp() -> str:
    return datetime.now(tz.UTC).isoformat()


def _undefined(value: Any) -> Any:
    """None becomes the 'undefined' marker, recursively"""
    if value is None:
        return UNDEFINED
    if isinstance(value, dict):
        return {key: _undefined(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_undefined(item) for item in value]
    return value


def _defined(value: Any) -> Any:
    return None if value == UNDEFINED else value


def _stat(summary: SummaryStat) -> Dict[str, Any]:
    return {'mean': summary.mean, 'sample_std': summary.sample_std, 'n': summary.n}


def _flag(kind: str, unit: Optional[str] = None, **detail) -> Dict[str, Any]:
    flag: Dict[str, Any] = {'kind': kind}
    if unit is not None:
        flag['unit'] = unit
    flag.update(detail)
    return flag


def _unit_document(stats: UnitStats, idle_stats: Optional[UnitStats], factors: EmissionFactors,
                   machine: MachineProfile, flags: List[Dict[str, Any]]) -> Dict[str, Any]:
    document: Dict[str, Any] = {
        'composite': bool(stats.composite_of),
        'composite_of': list(stats.composite_of),
        'n_runs': stats.n,
        'energy_j': {channel: _stat(summary) for channel, summary in stats.per_channel_energy.items()},
        'bytes': _stat(stats.bytes),
        'duration_s': _stat(stats.duration),
        'absent_channels': sorted(stats.absent_channels),
    }
    for channel in sorted(stats.absent_channels):
        flags.append(_flag('absent_channel', stats.unit, channel=channel))

    if MACHINE_CHANNEL not in stats.per_channel_energy:
        document['machine_energy_j'] = {'raw': None, 'adjusted': None, 'floored': None, 'idle_power_w': None}
        document['emissions_kgco2e'] = None
        document['emissions_std_kgco2e'] = None
        return document

    raw = stats.per_channel_energy[MACHINE_CHANNEL].mean
    try:
        adjustment = idle_adjust(raw, idle_stats, stats.duration.mean)
        document['machine_energy_j'] = {
            'raw': raw,
            'adjusted': adjustment.adjusted,
            'floored': adjustment.floored,
            'idle_power_w': adjustment.idle_power_w,
        }
        if adjustment.floored:
            flags.append(_flag('floored_adjustment', stats.unit, unadjusted_j=raw))
    except AdjustmentUnavailableError as e:
        document['machine_energy_j'] = {'raw': raw, 'adjusted': None, 'floored': None, 'idle_power_w': None}
        flags.append(_flag('adjustment_unavailable', stats.unit, reason=str(e)))

    document['emissions_kgco2e'] = total_footprint(stats, factors, machine).as_dict()
    document['emissions_std_kgco2e'] = footprint_std(stats, factors, machine)
    return document


def _run_document(record) -> Dict[str, Any]:
    # Wall-clock metadata stays out so reports are reproducible
    return {
        'run_index': record.run_index,
        'energy_j': dict(record.energy_joules),
        'bytes': record.bytes_total,
        'duration_s': record.duration_s,
        'network_source': record.metadata.get('network_source', 'none'),
        'partial_channels': sorted(record.partial_channels),
    }


def build_report(spec: ScenarioSpec, campaign: CampaignRecord, factors: EmissionFactors,
                 machine: MachineProfile, generated_at: Optional[str] = None) -> Dict[str, Any]:
    """Assemble the report document for one campaign"""

    flags: List[Dict[str, Any]] = []
    stats: Dict[str, UnitStats] = {}
    for name, records in campaign.runs.items():
        if records:
            stats[name] = aggregate_runs(records)

    for composite in spec.composite_units():
        try:
            stats[composite.name] = compose_units(stats, composite)
        except CompositionError as e:
            logger.warning(f"Skipping composite '{composite.name}': {e}")
            flags.append(_flag('incomplete_campaign', composite.name, reason=str(e)))

    idle_stats = stats.get(spec.idle_unit)
    units: Dict[str, Any] = {}
    for name, unit_stats in stats.items():
        document = _unit_document(unit_stats, idle_stats, factors, machine, flags)
        records = campaign.runs.get(name, ())
        if records:
            document['runs'] = [_run_document(record) for record in records]
            for channel in sorted({channel for record in records for channel in record.partial_channels}):
                flags.append(_flag('partial_channel', name, channel=channel))
            deviations = [record.run_index for record in records if record.metadata.get('duration_deviation_flag')]
            if deviations:
                flags.append(_flag('duration_deviation', name, run_indices=deviations))
            if all(record.metadata.get('network_source', 'none') == 'none' for record in records):
                flags.append(_flag('no_network_source', name))
        units[name] = document

    if not campaign.complete:
        flags.append(_flag('incomplete_campaign', failures=len(campaign.failures)))

    report: Dict[str, Any] = {
        'schema_version': SCHEMA_VERSION,
        'scenario': spec.as_dict(),
        'campaign': {
            'configuration': campaign.configuration.as_dict(),
            'n_runs_per_unit': campaign.n_runs_per_unit,
            'complete': campaign.complete,
            'failures': [dict(failure) for failure in campaign.failures],
        },
        'factors': factors.as_dict(),
        'machine': machine.as_dict(),
        'methodology': dict(METHODOLOGY),
        'units': units,
        'flags': sorted(flags, key=lambda flag: json.dumps(flag, sort_keys=True)),
    }
    if generated_at is not None:
        report['generated_at'] = generated_at
    return _undefined(report)


def render_document(document: Mapping[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + '\n'


def write_document(document: Mapping[str, Any], path: str):
    """Write a JSON document to path, or to standard output for '-'"""
    text = render_document(document)
    if path == '-':
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)


def load_report(path: str) -> Dict[str, Any]:
    content = read_text(path, ReportFormatError, 'Report')
    try:
        document = json.loads(content)
    except json.JSONDecodeError as e:
        raise ReportFormatError(f"Report {path} is not valid JSON: {e}")
    if not isinstance(document, dict) or 'schema_version' not in document:
        raise ReportFormatError(f"Report {path} has no schema_version", field='schema_version')
    if not isinstance(document.get('units'), dict):
        raise ReportFormatError(f"Report {path} has no units section", field='units')
    return document


def _summary_from(raw: Mapping[str, Any]) -> SummaryStat:
    return SummaryStat(mean=float(raw['mean']), sample_std=_defined(raw['sample_std']), n=int(raw['n']))


def stats_from_report(document: Mapping[str, Any]) -> Dict[str, UnitStats]:
    """Rebuild per-unit stats from a report's units section"""
    stats = {}
    try:
        for name, unit in document['units'].items():
            stats[name] = UnitStats(
                unit=name,
                per_channel_energy={channel: _summary_from(raw) for channel, raw in unit['energy_j'].items()},
                bytes=_summary_from(unit['bytes']),
                duration=_summary_from(unit['duration_s']),
                absent_channels=frozenset(unit.get('absent_channels', [])),
                composite_of=tuple(unit.get('composite_of', [])),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise ReportFormatError(f"Malformed unit entry in report: {e}")
    return stats


def _emissions_from_report(document: Mapping[str, Any]) -> Dict[str, Dict[str, float]]:
    return {name: unit['emissions_kgco2e'] for name, unit in document['units'].items()
            if isinstance(unit.get('emissions_kgco2e'), dict)}


def _label(document: Mapping[str, Any]) -> str:
    return document.get('campaign', {}).get('configuration', {}).get('label', 'unknown')


def _normalized_timestamp(document: Mapping[str, Any]) -> Optional[str]:
    value = document.get('generated_at')
    if not value:
        return None
    try:
        return date_parser.isoparse(value).astimezone(tz.UTC).isoformat()
    except (ValueError, OverflowError):
        raise ReportFormatError(f"Unreadable generated_at timestamp {value!r}", field='generated_at')


def build_comparison(left: Mapping[str, Any], right: Mapping[str, Any], alpha: Optional[float] = None,
                     generated_at: Optional[str] = None) -> Dict[str, Any]:
    """Comparison document for two reports; every delta is right (B) minus left (A)"""

    if left.get('schema_version') != right.get('schema_version'):
        raise ComparisonError(
            f"Schema versions differ: {left.get('schema_version')} vs {right.get('schema_version')}",
            field='schema_version')

    result = compare(
        _label(left), stats_from_report(left),
        _label(right), stats_from_report(right),
        left_emissions=_emissions_from_report(left),
        right_emissions=_emissions_from_report(right),
        alpha=alpha,
    )

    units = {}
    for name, delta in result.per_unit.items():
        entry = {
            'delta_energy_j': delta.delta_energy,
            'relative_delta': delta.relative_delta,
            'welch_t': delta.welch_t,
            'delta_bytes': delta.delta_bytes,
            'relative_delta_bytes': delta.relative_delta_bytes,
            'delta_duration_s': delta.delta_duration,
            'delta_emissions_kgco2e': delta.delta_emissions,
        }
        if alpha is not None:
            entry['p_value'] = delta.p_value
            entry['significant'] = delta.significant
        units[name] = entry

    document: Dict[str, Any] = {
        'schema_version': left['schema_version'],
        'kind': 'comparison',
        'sign_convention': 'B - A (second report minus first)',
        'left': {'configuration': result.left, 'generated_at': _normalized_timestamp(left)},
        'right': {'configuration': result.right, 'generated_at': _normalized_timestamp(right)},
        'alpha': alpha,
        'units': units,
    }
    if generated_at is not None:
        document['generated_at'] = generated_at
    return _undefined(document)


def build_extrapolation(result: Extrapolation, generated_at: Optional[str] = None) -> Dict[str, Any]:
    document: Dict[str, Any] = {
        'schema_version': SCHEMA_VERSION,
        'kind': 'extrapolation',
        'per_interaction_energy_kwh': result.per_interaction_energy_kwh,
        'per_interaction_emissions_kgco2e': result.per_interaction_emissions_kgco2e,
        'daily_volume': result.daily_volume,
        'days_per_year': result.days_per_year,
        'annual_energy_kwh': result.annual_energy_kwh,
        'annual_emissions_kgco2e': result.annual_emissions_kgco2e,
    }
    if generated_at is not None:
        document['generated_at'] = generated_at
    return document


SCORECARD_HEADERS = (
    ['Unit', 'Composite', 'Runs', 'Machine Energy (J)', 'Idle-adjusted (J)', 'Bytes', 'Duration (s)']
    + [f"{component} (kgCO2e)" for component in COMPONENTS]
    + ['Total (kgCO2e)']
)


def export_scorecard(report: Mapping[str, Any], path: str):
    """Flat spreadsheet scorecard, one row per unit"""
    from openpyxl import Workbook
    from openpyxl.styles import Alignment, Font, PatternFill
    from openpyxl.utils import get_column_letter

    wb = Workbook()
    ws = wb.active
    ws.title = "Footprint Scorecard"

    header_fill = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")
    header_font = Font(bold=True, color="FFFFFF")
    for col, header in enumerate(SCORECARD_HEADERS, 1):
        cell = ws.cell(row=1, column=col, value=header)
        cell.fill = header_fill
        cell.font = header_font
        cell.alignment = Alignment(horizontal='center', vertical='center')

    for row_idx, name in enumerate(sorted(report['units']), 2):
        unit = report['units'][name]
        energy = unit.get('machine_energy_j', {})
        emissions = unit.get('emissions_kgco2e')
        if not isinstance(emissions, dict):
            emissions = {}
        values = [
            name,
            'Y' if unit.get('composite') else 'N',
            unit.get('n_runs'),
            energy.get('raw', UNDEFINED),
            energy.get('adjusted', UNDEFINED),
            unit['bytes']['mean'],
            unit['duration_s']['mean'],
        ] + [emissions.get(component, UNDEFINED) for component in COMPONENTS] + [emissions.get('total', UNDEFINED)]
        for col, value in enumerate(values, 1):
            ws.cell(row=row_idx, column=col, value=value)

    for col in range(1, len(SCORECARD_HEADERS) + 1):
        ws.column_dimensions[get_column_letter(col)].width = 18

    wb.save(path)
