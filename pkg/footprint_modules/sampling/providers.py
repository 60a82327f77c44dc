import bisect
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import psutil

from ..errors import MonotonicityError, ProviderError, ProviderExhausted, SamplingError, ScenarioValidationError
from ..model import NetworkCounters, PowerSample

logger = logging.getLogger(__name__)

POWER_KINDS = ('synthetic', 'replay', 'sensor')
NETWORK_KINDS = ('replay', 'platform', 'none')
WAVEFORM_SHAPES = ('constant', 'ramp', 'step')

# Default powercap zone per reserved channel
DEFAULT_SENSOR_ZONES = {
    'cpu': 'package-0',
    'memory': 'dram',
    'machine': 'psys',
}


@dataclass(frozen=True)
class WaveformSpec:
    shape: str
    amplitude_start: float  # W
    amplitude_end: float  # W
    period: float = 0.0  # s; ramp length for ramp, half-cycle for step

    def __post_init__(self):
        if self.shape not in WAVEFORM_SHAPES:
            raise ScenarioValidationError(f"Unknown waveform shape '{self.shape}'", field='shape')
        for name in ('amplitude_start', 'amplitude_end'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                raise ScenarioValidationError(f"Waveform {name} must be finite and >= 0, got {value!r}", field=name)
        if self.shape in ('ramp', 'step') and not (isinstance(self.period, (int, float)) and self.period > 0):
            raise ScenarioValidationError(
                f"Waveform period must be > 0 for shape '{self.shape}', got {self.period!r}", field='period')

    def value_at(self, t_s: float) -> float:
        if self.shape == 'constant':
            return float(self.amplitude_start)
        if self.shape == 'ramp':
            if t_s >= self.period:
                return float(self.amplitude_end)
            fraction = max(t_s, 0.0) / self.period
            return self.amplitude_start + (self.amplitude_end - self.amplitude_start) * fraction
        # step: alternate between the two levels every period
        return float(self.amplitude_start if int(t_s // self.period) % 2 == 0 else self.amplitude_end)


@dataclass(frozen=True)
class ProviderSpec:
    kind: str
    parameters: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {'kind': self.kind}
        for key, value in self.parameters.items():
            if key == 'waveforms':
                value = {channel: {
                    'shape': wave.shape,
                    'amplitude_start': wave.amplitude_start,
                    'amplitude_end': wave.amplitude_end,
                    'period': wave.period,
                } for channel, wave in value.items()}
            result[key] = value
        return result


def parse_waveform(raw: Mapping[str, Any], channel: str) -> WaveformSpec:
    if not isinstance(raw, Mapping) or 'shape' not in raw or 'amplitude_start' not in raw:
        raise ScenarioValidationError(
            f"Waveform for channel '{channel}' needs at least shape and amplitude_start", field='waveforms')
    return WaveformSpec(
        shape=raw['shape'],
        amplitude_start=raw['amplitude_start'],
        amplitude_end=raw.get('amplitude_end', raw['amplitude_start']),
        period=raw.get('period', 0.0),
    )


def parse_provider_spec(raw: Mapping[str, Any], role: str, base_dir: str = '.') -> ProviderSpec:
    """Validate a provider block from a scenario file; role is 'power' or 'network'"""

    allowed = POWER_KINDS if role == 'power' else NETWORK_KINDS
    field_name = f'{role}_provider'
    if not isinstance(raw, Mapping) or raw.get('kind') not in allowed:
        kind = raw.get('kind') if isinstance(raw, Mapping) else raw
        raise ScenarioValidationError(
            f"{field_name}.kind must be one of {', '.join(allowed)}, got {kind!r}", field=field_name)

    kind = raw['kind']
    parameters: Dict[str, Any] = {}

    if kind == 'synthetic':
        waveforms = raw.get('waveforms')
        if not isinstance(waveforms, Mapping) or not waveforms:
            raise ScenarioValidationError(f"{field_name}: synthetic provider needs waveforms", field=field_name)
        parameters['waveforms'] = {str(channel): parse_waveform(spec, channel) for channel, spec in waveforms.items()}
        noise = raw.get('noise_std_w', 0.0)
        if isinstance(noise, bool) or not isinstance(noise, (int, float)) or noise < 0:
            raise ScenarioValidationError(f"{field_name}.noise_std_w must be >= 0", field=field_name)
        parameters['noise_std_w'] = float(noise)
    elif kind == 'replay':
        path = raw.get('path')
        if not isinstance(path, str) or not path:
            raise ScenarioValidationError(f"{field_name}: replay provider needs a path", field=field_name)
        parameters['path'] = path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))
    elif kind == 'sensor':
        parameters['powercap_root'] = raw.get('powercap_root', '/sys/class/powercap')
        parameters['channels'] = dict(raw.get('channels') or DEFAULT_SENSOR_ZONES)
    elif kind == 'platform':
        if raw.get('interface'):
            parameters['interface'] = raw['interface']

    return ProviderSpec(kind=kind, parameters=parameters)


class PowerProvider:
    """Base power provider; subclasses implement _read"""

    def __init__(self):
        self._last_t: Optional[float] = None

    def open(self, interval_ms: float):
        self._last_t = None

    def poll(self, t_ms: float) -> PowerSample:
        try:
            sample = self._read(t_ms)
        except ProviderError as e:
            if e.partial is not None:
                self._check_order(e.partial)
            raise
        self._check_order(sample)
        return sample

    def _check_order(self, sample: PowerSample):
        if self._last_t is not None and sample.t <= self._last_t:
            raise SamplingError(f"Power provider went back in time: {self._last_t} -> {sample.t}")
        self._last_t = sample.t

    def _read(self, t_ms: float) -> PowerSample:
        raise NotImplementedError

    def close(self):
        pass


class SyntheticPowerProvider(PowerProvider):
    def __init__(self, waveforms: Mapping[str, WaveformSpec], noise_std_w: float = 0.0, seed: Optional[int] = None):
        super().__init__()
        self.waveforms = dict(waveforms)
        self.noise_std_w = noise_std_w
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def open(self, interval_ms: float):
        super().open(interval_ms)
        self._rng = np.random.default_rng(self.seed)

    def _read(self, t_ms: float) -> PowerSample:
        channels = {}
        for channel, waveform in self.waveforms.items():
            watts = waveform.value_at(t_ms / 1000.0)
            if self.noise_std_w > 0:
                watts = max(0.0, watts + float(self._rng.normal(0.0, self.noise_std_w)))
            channels[channel] = watts
        return PowerSample(t=t_ms, channels=channels)


class _RecordingCursor:
    """Timestamp lookup over a recording sorted by t"""

    def __init__(self, samples):
        self.samples = list(samples)
        self.times = [sample.t for sample in self.samples]
        self.final_sent = False

    def reset(self):
        self.final_sent = False

    def locate(self, t_ms: float, what: str):
        """(exact, before, after) for t_ms; exact is set on a recorded timestamp.

        The first request past the end hands back the final sample once, so
        the tail of a recording is never dropped; later requests exhaust it.
        """
        index = bisect.bisect_left(self.times, t_ms)
        if index < len(self.times) and self.times[index] == t_ms:
            if index == len(self.times) - 1:
                self.final_sent = True
            return self.samples[index], None, None
        if index == len(self.times):
            if self.final_sent or not self.samples:
                raise ProviderExhausted(f"Replay {what} samples exhausted")
            self.final_sent = True
            return self.samples[-1], None, None
        before = self.samples[index - 1] if index > 0 else None
        return None, before, self.samples[index]


class ReplayPowerProvider(PowerProvider):
    """Recorded power looked up by timestamp.

    A tick on a recorded timestamp gets that sample verbatim. Between two
    recorded samples the tick gets their linear interpolation; before the
    recording starts it holds the first values.
    """

    def __init__(self, samples: List[PowerSample]):
        super().__init__()
        self._cursor = _RecordingCursor(samples)

    @property
    def samples(self) -> List[PowerSample]:
        return self._cursor.samples

    def open(self, interval_ms: float):
        super().open(interval_ms)
        self._cursor.reset()

    def _read(self, t_ms: float) -> PowerSample:
        exact, before, after = self._cursor.locate(t_ms, 'power')
        if exact is not None:
            return exact
        if before is None:
            return PowerSample(t=t_ms, channels=dict(after.channels))
        fraction = (t_ms - before.t) / (after.t - before.t)
        channels = {channel: watts + fraction * (after.channels[channel] - watts)
                    for channel, watts in before.channels.items() if channel in after.channels}
        return PowerSample(t=t_ms, channels=channels)


class SensorPowerProvider(PowerProvider):
    """Linux powercap (RAPL) energy counters turned into average power per poll"""

    def __init__(self, powercap_root: str = '/sys/class/powercap', channels: Optional[Mapping[str, str]] = None):
        super().__init__()
        self.powercap_root = powercap_root
        self.channels = dict(channels or DEFAULT_SENSOR_ZONES)
        self._zones: Dict[str, str] = {}
        self._previous: Dict[str, int] = {}
        self._previous_time = 0.0

    def _discover_zones(self) -> Dict[str, str]:
        zones = {}
        if not os.path.isdir(self.powercap_root):
            return zones
        for entry in sorted(os.listdir(self.powercap_root)):
            name_file = os.path.join(self.powercap_root, entry, 'name')
            try:
                with open(name_file, 'r') as f:
                    zones[f.read().strip()] = os.path.join(self.powercap_root, entry)
            except OSError:
                continue
        return zones

    def _read_energy_uj(self, zone_dir: str) -> int:
        with open(os.path.join(zone_dir, 'energy_uj'), 'r') as f:
            return int(f.read().strip())

    def _max_range_uj(self, zone_dir: str) -> int:
        try:
            with open(os.path.join(zone_dir, 'max_energy_range_uj'), 'r') as f:
                return int(f.read().strip())
        except (OSError, ValueError):
            return 2 ** 32

    def open(self, interval_ms: float):
        super().open(interval_ms)
        available = self._discover_zones()
        self._zones = {channel: available[zone] for channel, zone in self.channels.items() if zone in available}
        missing = sorted(set(self.channels) - set(self._zones))
        if missing:
            logger.warning(f"Power sensor zones unavailable for channels: {', '.join(missing)}")
        self._previous = {}
        for channel, zone_dir in self._zones.items():
            try:
                self._previous[channel] = self._read_energy_uj(zone_dir)
            except (OSError, ValueError):
                continue
        self._previous_time = time.monotonic()

    def _read(self, t_ms: float) -> PowerSample:
        now = time.monotonic()
        if now - self._previous_time < 0.001:
            time.sleep(0.001 - (now - self._previous_time))
            now = time.monotonic()
        elapsed = now - self._previous_time

        channels: Dict[str, float] = {}
        failed = sorted(set(self.channels) - set(self._zones))
        for channel, zone_dir in self._zones.items():
            try:
                energy = self._read_energy_uj(zone_dir)
            except (OSError, ValueError):
                failed.append(channel)
                continue
            previous = self._previous.get(channel)
            self._previous[channel] = energy
            if previous is None:
                failed.append(channel)
                continue
            delta = energy - previous
            if delta < 0:  # counter wrapped
                delta += self._max_range_uj(zone_dir)
            channels[channel] = delta / 1e6 / elapsed
        self._previous_time = now

        sample = PowerSample(t=t_ms, channels=channels)
        if failed:
            raise ProviderError(
                f"Power sensor channels unavailable: {', '.join(sorted(failed))}",
                failed_channels=sorted(failed),
                partial=sample if channels else None)
        return sample


class NetworkProvider:
    """Base network provider; enforces cumulative counters never go backwards"""

    def __init__(self):
        self._last: Optional[NetworkCounters] = None
        self._count = 0

    def open(self, interval_ms: float):
        self._last = None
        self._count = 0

    def poll(self, t_ms: float) -> NetworkCounters:
        counters = self._read(t_ms)
        if self._last is not None and (counters.bytes_in < self._last.bytes_in
                                       or counters.bytes_out < self._last.bytes_out):
            raise MonotonicityError(
                f"Network counters decreased at sample {self._count} "
                f"({self._last.bytes_in},{self._last.bytes_out}) -> ({counters.bytes_in},{counters.bytes_out})",
                index=self._count)
        self._last = counters
        self._count += 1
        return counters

    def _read(self, t_ms: float) -> NetworkCounters:
        raise NotImplementedError

    def close(self):
        pass


class ReplayNetworkProvider(NetworkProvider):
    """Recorded counters looked up by timestamp; between records the last one holds"""

    def __init__(self, samples: List[NetworkCounters]):
        super().__init__()
        self._cursor = _RecordingCursor(samples)

    @property
    def samples(self) -> List[NetworkCounters]:
        return self._cursor.samples

    def open(self, interval_ms: float):
        super().open(interval_ms)
        self._cursor.reset()

    def _read(self, t_ms: float) -> NetworkCounters:
        exact, before, after = self._cursor.locate(t_ms, 'network')
        if exact is not None:
            return exact
        held = before if before is not None else after
        return NetworkCounters(t_ms, held.bytes_in, held.bytes_out)


class PlatformNetworkProvider(NetworkProvider):
    """Host interface counters from psutil, reported relative to open()"""

    def __init__(self, interface: Optional[str] = None):
        super().__init__()
        self.interface = interface
        self._baseline = (0, 0)

    def _counters(self):
        try:
            if self.interface:
                per_nic = psutil.net_io_counters(pernic=True)
                if self.interface not in per_nic:
                    raise ProviderError(f"Network interface '{self.interface}' not found",
                                        failed_channels=[self.interface])
                counters = per_nic[self.interface]
            else:
                counters = psutil.net_io_counters()
        except ProviderError:
            raise
        except Exception as e:
            raise ProviderError(f"Network counters unavailable: {e}", failed_channels=['network'])
        if counters is None:
            raise ProviderError("Network counters unavailable on this platform", failed_channels=['network'])
        return counters.bytes_recv, counters.bytes_sent

    def open(self, interval_ms: float):
        super().open(interval_ms)
        self._baseline = self._counters()

    def _read(self, t_ms: float) -> NetworkCounters:
        received, sent = self._counters()
        return NetworkCounters(t=t_ms, bytes_in=received - self._baseline[0], bytes_out=sent - self._baseline[1])


class DriverNetworkProvider(NetworkProvider):
    """Latest cumulative totals the scenario driver reported on NET lines"""

    def __init__(self):
        super().__init__()
        self._lock = threading.Lock()
        self._totals = (0, 0)
        self.reported = False

    def report(self, bytes_in: int, bytes_out: int):
        with self._lock:
            self._totals = (bytes_in, bytes_out)
            self.reported = True

    def _read(self, t_ms: float) -> NetworkCounters:
        with self._lock:
            bytes_in, bytes_out = self._totals
        return NetworkCounters(t=t_ms, bytes_in=bytes_in, bytes_out=bytes_out)

    def window_counters(self, start_t: float, end_t: float) -> List[NetworkCounters]:
        """Two-point network trace: nothing at the window start, last totals at its end"""
        with self._lock:
            bytes_in, bytes_out = self._totals
        return [NetworkCounters(t=start_t, bytes_in=0, bytes_out=0),
                NetworkCounters(t=end_t, bytes_in=bytes_in, bytes_out=bytes_out)]


def build_power_provider(spec: ProviderSpec, seed: Optional[int] = None) -> PowerProvider:
    if spec.kind == 'synthetic':
        return SyntheticPowerProvider(spec.parameters['waveforms'], spec.parameters.get('noise_std_w', 0.0), seed)
    if spec.kind == 'replay':
        from .replay import load_replay
        return ReplayPowerProvider(load_replay(spec.parameters['path']).power)
    if spec.kind == 'sensor':
        return SensorPowerProvider(spec.parameters.get('powercap_root', '/sys/class/powercap'),
                                   spec.parameters.get('channels'))
    raise ScenarioValidationError(f"Unknown power provider kind '{spec.kind}'", field='power_provider')


def build_network_provider(spec: Optional[ProviderSpec]) -> Optional[NetworkProvider]:
    if spec is None or spec.kind == 'none':
        return None
    if spec.kind == 'replay':
        from .replay import load_replay
        return ReplayNetworkProvider(load_replay(spec.parameters['path']).network)
    if spec.kind == 'platform':
        return PlatformNetworkProvider(spec.parameters.get('interface'))
    raise ScenarioValidationError(f"Unknown network provider kind '{spec.kind}'", field='network_provider')


def poll_power(provider: PowerProvider, t_ms: float) -> PowerSample:
    return provider.poll(t_ms)


def poll_network(provider: NetworkProvider, t_ms: float) -> NetworkCounters:
    return provider.poll(t_ms)
