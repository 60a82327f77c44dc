import math
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from ..errors import ScenarioValidationError, ValidationError
from ..model import Configuration, FunctionalUnit, read_text
from ..sampling.providers import ProviderSpec, parse_provider_spec
from ..sampling.sampler import DEFAULT_INTERVAL_MS, MIN_INTERVAL_MS

DEFAULT_RUNS = 5
DEFAULT_DURATION_TOLERANCE = 0.10
DEFAULT_IDLE_UNIT = 'Idle'


@dataclass(frozen=True)
class ScenarioSpec:
    services: Tuple[str, ...]
    configurations: Tuple[Configuration, ...]
    units: Tuple[FunctionalUnit, ...]
    driver_command: str
    n_runs: int = DEFAULT_RUNS
    sampling_interval: float = DEFAULT_INTERVAL_MS  # ms
    power_provider: Optional[ProviderSpec] = None
    network_provider: Optional[ProviderSpec] = None
    cooldown_s: float = 5.0
    enforce_duration: bool = True
    duration_tolerance: float = DEFAULT_DURATION_TOLERANCE
    idle_unit: str = DEFAULT_IDLE_UNIT
    seed: int = 0

    def basic_units(self) -> List[FunctionalUnit]:
        return [unit for unit in self.units if not unit.is_composite]

    def composite_units(self) -> List[FunctionalUnit]:
        return [unit for unit in self.units if unit.is_composite]

    def unit(self, name: str) -> FunctionalUnit:
        for unit in self.units:
            if unit.name == name:
                return unit
        raise ScenarioValidationError(f"Unknown functional unit '{name}'", field='units')

    def configuration(self, label: str) -> Configuration:
        for configuration in self.configurations:
            if configuration.label == label:
                return configuration
        known = ', '.join(c.label for c in self.configurations)
        raise ScenarioValidationError(f"Unknown configuration '{label}' (known: {known})", field='configurations')

    def as_dict(self) -> Dict[str, Any]:
        """Echo for reports"""
        return {
            'services': list(self.services),
            'configurations': [configuration.as_dict() for configuration in self.configurations],
            'units': [{
                'name': unit.name,
                'steps': list(unit.steps),
                'target_duration_s': unit.target_duration,
                'composite_of': list(unit.composite_of),
            } for unit in self.units],
            'n_runs': self.n_runs,
            'sampling_interval_ms': self.sampling_interval,
            'driver_command': self.driver_command,
            'power_provider': self.power_provider.as_dict() if self.power_provider else None,
            'network_provider': self.network_provider.as_dict() if self.network_provider else None,
            'cooldown_s': self.cooldown_s,
            'enforce_duration': self.enforce_duration,
            'duration_tolerance': self.duration_tolerance,
            'idle_unit': self.idle_unit,
            'seed': self.seed,
        }


def _require(raw: Mapping[str, Any], key: str, where: str = ''):
    if key not in raw or raw[key] is None:
        raise ScenarioValidationError(f"Missing required field '{where}{key}'", field=f'{where}{key}')
    return raw[key]


def _number(value: Any, name: str, minimum: float, inclusive: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioValidationError(f"'{name}' must be a number, got {value!r}", field=name)
    if value < minimum or (not inclusive and value == minimum):
        bound = '>=' if inclusive else '>'
        raise ScenarioValidationError(f"'{name}' must be {bound} {minimum}, got {value!r}", field=name)
    return value


def _bool(value: Any, name: str) -> bool:
    if not isinstance(value, bool):
        raise ScenarioValidationError(f"'{name}' must be true or false, got {value!r}", field=name)
    return value


def _parse_configurations(raw_list: Any, base_dir: str) -> Tuple[Configuration, ...]:
    if not isinstance(raw_list, list) or not raw_list:
        raise ScenarioValidationError("'configurations' must be a non-empty list", field='configurations')
    configurations = []
    seen = set()
    for index, raw in enumerate(raw_list):
        where = f'configurations[{index}].'
        if not isinstance(raw, Mapping):
            raise ScenarioValidationError(f"'{where[:-1]}' must be a mapping", field='configurations')
        label = str(_require(raw, 'label', where)).strip()
        if not label:
            raise ScenarioValidationError(f"'{where}label' must be non-empty", field=f'{where}label')
        if label in seen:
            raise ScenarioValidationError(f"Duplicate configuration label '{label}'", field=f'{where}label')
        seen.add(label)
        power = raw.get('power_provider')
        configurations.append(Configuration(
            label=label,
            ad_blocker=_bool(raw.get('ad_blocker', False), f'{where}ad_blocker'),
            cookie_blocking=_bool(raw.get('cookie_blocking', False), f'{where}cookie_blocking'),
            provider=str(raw.get('provider', '')),
            power_provider=parse_provider_spec(power, 'power', base_dir) if power is not None else None,
        ))
    return tuple(configurations)


def _parse_units(raw_list: Any) -> Tuple[FunctionalUnit, ...]:
    if not isinstance(raw_list, list) or not raw_list:
        raise ScenarioValidationError("'units' must be a non-empty list", field='units')

    raw_units: Dict[str, Mapping[str, Any]] = {}
    for index, raw in enumerate(raw_list):
        where = f'units[{index}].'
        if not isinstance(raw, Mapping):
            raise ScenarioValidationError(f"'units[{index}]' must be a mapping", field='units')
        name = str(_require(raw, 'name', where)).strip()
        if not name:
            raise ScenarioValidationError(f"'{where}name' must be non-empty", field=f'{where}name')
        if name in raw_units:
            raise ScenarioValidationError(f"Duplicate unit name '{name}'", field=f'{where}name')
        raw_units[name] = raw

    # Basic units first, so composite defaults only ever read validated members
    basic: Dict[str, FunctionalUnit] = {}
    members_of: Dict[str, Tuple[str, ...]] = {}
    for name, raw in raw_units.items():
        members = _name_list(raw.get('composite_of'), f'units.{name}.composite_of')
        if members:
            members_of[name] = members
            continue
        steps = _name_list(raw.get('steps'), f'units.{name}.steps') or (name,)
        basic[name] = _build_unit(name, steps=steps, target_duration=_require(raw, 'target_duration_s', f'units.{name}.'))

    composites: Dict[str, FunctionalUnit] = {}
    for name, members in members_of.items():
        for member in members:
            if member in members_of:
                raise ScenarioValidationError(
                    f"Composite unit '{name}' references composite unit '{member}'; only basic units compose",
                    field=f'units.{name}.composite_of')
            if member not in basic:
                raise ScenarioValidationError(
                    f"Composite unit '{name}' references unknown unit '{member}'", field=f'units.{name}.composite_of')
        duration = raw_units[name].get('target_duration_s')
        if duration is None:
            duration = math.fsum(basic[member].target_duration for member in members)
        steps = tuple(step for member in members for step in basic[member].steps)
        composites[name] = _build_unit(name, steps=steps, target_duration=duration, composite_of=members)

    return tuple(basic[name] if name in basic else composites[name] for name in raw_units)


def _name_list(value: Any, field: str) -> Tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise ScenarioValidationError(f"'{field}' must be a list of names, got {value!r}", field=field)
    return tuple(str(item) for item in value)


def _build_unit(name: str, **fields) -> FunctionalUnit:
    try:
        return FunctionalUnit(name=name, **fields)
    except ValidationError as e:
        raise ScenarioValidationError(str(e), field=f'units.{name}.{e.field}' if e.field else f'units.{name}')


def parse_scenario(content: Union[str, Mapping[str, Any]], base_dir: str = '.') -> ScenarioSpec:
    """Parse and validate a scenario file (YAML or JSON text, or an already-loaded mapping)"""

    if isinstance(content, str):
        try:
            raw = yaml.safe_load(content)
        except yaml.YAMLError as e:
            raise ScenarioValidationError(f"Scenario file is not valid YAML: {e}")
    else:
        raw = content
    if not isinstance(raw, Mapping):
        raise ScenarioValidationError("Scenario file must be a mapping")

    driver_command = _require(raw, 'driver_command')
    if not isinstance(driver_command, str) or not driver_command.strip():
        raise ScenarioValidationError("'driver_command' must be a non-empty command line", field='driver_command')

    n_runs = raw.get('n_runs', DEFAULT_RUNS)
    if isinstance(n_runs, bool) or not isinstance(n_runs, int) or n_runs < 1:
        raise ScenarioValidationError(f"'n_runs' must be an integer >= 1, got {n_runs!r}", field='n_runs')

    services = raw.get('services') or []
    if not isinstance(services, list):
        raise ScenarioValidationError("'services' must be a list", field='services')

    power = raw.get('power_provider')
    network = raw.get('network_provider')
    idle_unit = str(raw.get('idle_unit', DEFAULT_IDLE_UNIT))
    seed = raw.get('seed', 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioValidationError(f"'seed' must be an integer, got {seed!r}", field='seed')

    configurations = _parse_configurations(raw.get('configurations'), base_dir)
    if power is None and any(configuration.power_provider is None for configuration in configurations):
        raise ScenarioValidationError("Missing required field 'power_provider'", field='power_provider')

    return ScenarioSpec(
        services=tuple(str(service) for service in services),
        configurations=configurations,
        units=_parse_units(raw.get('units')),
        driver_command=driver_command,
        n_runs=n_runs,
        sampling_interval=_number(raw.get('sampling_interval_ms', DEFAULT_INTERVAL_MS),
                                  'sampling_interval_ms', MIN_INTERVAL_MS),
        power_provider=parse_provider_spec(power, 'power', base_dir) if power is not None else None,
        network_provider=parse_provider_spec(network, 'network', base_dir) if network is not None else None,
        cooldown_s=_number(raw.get('cooldown_s', float(os.getenv('FOOTPRINT_COOLDOWN_S', '5'))), 'cooldown_s', 0),
        enforce_duration=_bool(raw.get('enforce_duration', True), 'enforce_duration'),
        duration_tolerance=_number(raw.get('duration_tolerance', DEFAULT_DURATION_TOLERANCE),
                                   'duration_tolerance', 0),
        idle_unit=idle_unit,
        seed=seed,
    )


def load_scenario(path: str) -> ScenarioSpec:
    content = read_text(path, ScenarioValidationError, 'Scenario')
    return parse_scenario(content, base_dir=os.path.dirname(os.path.abspath(path)))
