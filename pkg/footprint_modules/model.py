import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, FrozenSet, List, Mapping, Optional, Tuple

import yaml

from .errors import (
    FactorValidationError,
    InvalidQuantityError,
    MonotonicityError,
    SamplingError,
    TraceTooShortError,
    ValidationError,
)

if TYPE_CHECKING:
    from .sampling.providers import ProviderSpec

JOULES_PER_KWH = 3.6e6
BYTES_PER_GB = 1e9  # SI gigabyte, the unit life-cycle studies publish per-GB factors in

RESERVED_CHANNELS = ('cpu', 'memory', 'machine')
MACHINE_CHANNEL = 'machine'

# Factor-file key -> EmissionFactors attribute
FACTOR_FIELDS = {
    'grid_intensity_kgco2e_per_kwh': 'grid_intensity',
    'network_use_kgco2e_per_gb': 'network_use_per_gb',
    'server_use_kgco2e_per_gb': 'server_use_per_gb',
    'network_embodied_kgco2e_per_gb': 'network_embodied_per_gb',
    'server_embodied_kgco2e_per_gb': 'server_embodied_per_gb',
}

MACHINE_FIELDS = {
    'embodied_total_kgco2e': 'embodied_total',
    'lifetime_s': 'lifetime',
    'usage_share': 'usage_share',
}


def _check_quantity(value: float, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidQuantityError(f"{name} must be a number, got {value!r}", field=name)
    if not math.isfinite(value) or value < 0:
        raise InvalidQuantityError(f"{name} must be finite and >= 0, got {value!r}", field=name)
    return value


def joules_to_kwh(e: float) -> float:
    _check_quantity(e, 'energy_j')
    return e / JOULES_PER_KWH


def kwh_to_joules(kwh: float) -> float:
    _check_quantity(kwh, 'energy_kwh')
    return kwh * JOULES_PER_KWH


def bytes_to_gb(b: float) -> float:
    _check_quantity(b, 'bytes')
    return b / BYTES_PER_GB


def gb_to_bytes(gb: float) -> float:
    _check_quantity(gb, 'gb')
    return gb * BYTES_PER_GB


@dataclass(frozen=True)
class FunctionalUnit:
    name: str
    steps: Tuple[str, ...]
    target_duration: float  # seconds
    composite_of: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise ValidationError("Functional unit name must be non-empty", field='name')
        if isinstance(self.target_duration, bool) or not isinstance(self.target_duration, (int, float)) \
                or not math.isfinite(self.target_duration) or self.target_duration <= 0:
            raise ValidationError(
                f"Unit '{self.name}': target_duration_s must be > 0, got {self.target_duration!r}",
                field='target_duration_s')

    @property
    def is_composite(self) -> bool:
        return bool(self.composite_of)


@dataclass(frozen=True)
class Configuration:
    label: str
    ad_blocker: bool = False
    cookie_blocking: bool = False
    provider: str = ''
    power_provider: Optional['ProviderSpec'] = None

    def as_dict(self) -> Dict[str, Any]:
        return {
            'label': self.label,
            'ad_blocker': self.ad_blocker,
            'cookie_blocking': self.cookie_blocking,
            'provider': self.provider,
        }


@dataclass(frozen=True)
class PowerSample:
    t: float  # ms, monotonic, per-run origin
    channels: Dict[str, float]  # watts

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0:
            raise SamplingError(f"Power sample timestamp must be finite and >= 0, got {self.t!r}")
        for channel, watts in self.channels.items():
            if not isinstance(watts, (int, float)) or not math.isfinite(watts) or watts < 0:
                raise SamplingError(f"Power on channel '{channel}' must be finite and >= 0, got {watts!r}")


@dataclass(frozen=True)
class NetworkCounters:
    t: float  # ms
    bytes_in: int  # cumulative
    bytes_out: int  # cumulative

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0:
            raise SamplingError(f"Network sample timestamp must be finite and >= 0, got {self.t!r}")
        if self.bytes_in < 0 or self.bytes_out < 0:
            raise SamplingError(f"Network counters must be >= 0, got ({self.bytes_in}, {self.bytes_out})")

    @property
    def total(self) -> int:
        return self.bytes_in + self.bytes_out


def check_network_monotonic(network: List[NetworkCounters]):
    """Raise MonotonicityError on the first counter that went backwards"""
    for index in range(1, len(network)):
        previous, current = network[index - 1], network[index]
        if current.bytes_in < previous.bytes_in or current.bytes_out < previous.bytes_out:
            raise MonotonicityError(
                f"Network counters decreased at sample {index} "
                f"({previous.bytes_in},{previous.bytes_out}) -> ({current.bytes_in},{current.bytes_out})",
                index=index)


@dataclass(frozen=True)
class ResourceTrace:
    power: Tuple[PowerSample, ...]
    network: Tuple[NetworkCounters, ...]
    start_t: float
    end_t: float
    absent_channels: FrozenSet[str] = frozenset()

    def __post_init__(self):
        if len(self.power) < 2:
            raise TraceTooShortError(
                f"A trace needs at least 2 power samples, got {len(self.power)}")
        for samples, kind in ((self.power, 'power'), (self.network, 'network')):
            for index in range(1, len(samples)):
                if samples[index].t <= samples[index - 1].t:
                    raise SamplingError(
                        f"{kind} timestamps must be strictly increasing (sample {index}: "
                        f"{samples[index - 1].t} -> {samples[index].t})")
            if samples and (samples[0].t < self.start_t or samples[-1].t > self.end_t):
                raise SamplingError(
                    f"{kind} samples fall outside the trace window [{self.start_t}, {self.end_t}]")
        check_network_monotonic(list(self.network))

    @property
    def channels(self) -> List[str]:
        seen: Dict[str, None] = {}
        for sample in self.power:
            for channel in sample.channels:
                seen.setdefault(channel, None)
        return list(seen)

    @property
    def duration_s(self) -> float:
        return (self.end_t - self.start_t) / 1000.0

    def bytes_total(self) -> int:
        if len(self.network) < 2:
            return 0
        return self.network[-1].total - self.network[0].total


@dataclass(frozen=True)
class EmissionFactors:
    grid_intensity: float  # kgCO2e / kWh
    network_use_per_gb: float
    server_use_per_gb: float
    network_embodied_per_gb: float
    server_embodied_per_gb: float
    source_label: str

    def as_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {key: getattr(self, attr) for key, attr in FACTOR_FIELDS.items()}
        result['source_label'] = self.source_label
        return result


def validate_factors(raw: Mapping[str, Any]) -> EmissionFactors:
    """Check a parsed factor file and build EmissionFactors from it"""

    if not isinstance(raw, Mapping):
        raise FactorValidationError("Factor file must be a mapping of factor names to values")

    values = {}
    for key, attr in FACTOR_FIELDS.items():
        if key not in raw or raw[key] is None:
            raise FactorValidationError(f"Missing factor '{key}'", field=key)
        value = raw[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FactorValidationError(f"Factor '{key}' must be a decimal number, got {value!r}", field=key)
        if not math.isfinite(value) or value < 0:
            raise FactorValidationError(f"Factor '{key}' must be finite and >= 0, got {value!r}", field=key)
        values[attr] = float(value)

    source_label = raw.get('source_label')
    if not isinstance(source_label, str) or not source_label.strip():
        raise FactorValidationError("Factor 'source_label' must be non-empty text", field='source_label')

    return EmissionFactors(source_label=source_label, **values)


@dataclass(frozen=True)
class MachineProfile:
    embodied_total: float  # kgCO2e
    lifetime: float  # s
    usage_share: float

    def __post_init__(self):
        _check_quantity(self.embodied_total, 'embodied_total_kgco2e')
        if isinstance(self.lifetime, bool) or not isinstance(self.lifetime, (int, float)) \
                or not math.isfinite(self.lifetime) or self.lifetime <= 0:
            raise ValidationError(f"lifetime_s must be > 0, got {self.lifetime!r}", field='lifetime_s')
        _check_quantity(self.usage_share, 'usage_share')
        if self.usage_share > 1:
            raise ValidationError(f"usage_share must be in [0, 1], got {self.usage_share!r}", field='usage_share')

    def as_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, attr) for key, attr in MACHINE_FIELDS.items()}


def validate_machine(raw: Mapping[str, Any]) -> MachineProfile:
    if not isinstance(raw, Mapping):
        raise ValidationError("Machine file must be a mapping")
    missing = [key for key in MACHINE_FIELDS if raw.get(key) is None]
    if missing:
        raise ValidationError(f"Missing machine field '{missing[0]}'", field=missing[0])
    return MachineProfile(**{attr: raw[key] for key, attr in MACHINE_FIELDS.items()})


@dataclass(frozen=True)
class RunRecord:
    unit: str
    configuration: str
    trace: ResourceTrace
    energy_joules: Dict[str, float]
    bytes_total: int
    run_index: int
    partial_channels: FrozenSet[str] = frozenset()
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for channel, joules in self.energy_joules.items():
            if not math.isfinite(joules) or joules < 0:
                raise ValidationError(f"Run energy on '{channel}' must be >= 0, got {joules!r}")
        if self.bytes_total < 0:
            raise ValidationError(f"Run bytes_total must be >= 0, got {self.bytes_total}")

    @property
    def duration_s(self) -> float:
        return self.trace.duration_s


@dataclass(frozen=True)
class CampaignRecord:
    configuration: Configuration
    runs: Dict[str, Tuple[RunRecord, ...]]
    n_runs_per_unit: int = 5
    failures: Tuple[Dict[str, Any], ...] = ()

    @property
    def complete(self) -> bool:
        return not self.failures and all(len(records) == self.n_runs_per_unit for records in self.runs.values())

    def all_runs(self) -> List[RunRecord]:
        return [record for records in self.runs.values() for record in records]


def decode_position(data: bytes, error: UnicodeDecodeError) -> int:
    """1-based line number of the first undecodable byte"""
    return data[:error.start].count(b'\n') + 1


def read_text(path: str, error_class, what: str) -> str:
    """UTF-8 file contents; undecodable bytes raise error_class naming the path"""
    with open(path, 'rb') as f:
        data = f.read()
    try:
        return data.decode('utf-8')
    except UnicodeDecodeError as e:
        raise error_class(f"{what} file {path} is not valid UTF-8 "
                          f"(line {decode_position(data, e)}, byte offset {e.start})") from e


def _load_mapping(path: str, error_class, what: str) -> Mapping[str, Any]:
    content = read_text(path, error_class, what)
    try:
        return yaml.safe_load(content)
    except yaml.YAMLError as e:
        raise error_class(f"{what} file {path} is not valid YAML: {e}")


def load_factors(path: str) -> EmissionFactors:
    return validate_factors(_load_mapping(path, FactorValidationError, 'Factor'))


def load_machine(path: str) -> MachineProfile:
    return validate_machine(_load_mapping(path, ValidationError, 'Machine'))
