import logging
import threading
from typing import List, Optional, Set

from ..errors import ProviderError, ProviderExhausted, SamplingError, TraceTooShortError
from ..model import NetworkCounters, PowerSample, ResourceTrace
from .clock import MonotonicClock, StopSignal
from .providers import NetworkProvider, PowerProvider

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_MS = 100
MIN_INTERVAL_MS = 10


class _TraceBuilder:
    """In-flight trace; only the sampler appends to it"""

    def __init__(self):
        self.power: List[PowerSample] = []
        self.network: List[NetworkCounters] = []
        self.absent_channels: Set[str] = set()

    def last_t(self) -> Optional[float]:
        times = []
        if self.power:
            times.append(self.power[-1].t)
        if self.network:
            times.append(self.network[-1].t)
        return max(times) if times else None

    def freeze(self) -> ResourceTrace:
        if len(self.power) < 2:
            raise TraceTooShortError(
                f"Sampling stopped after {len(self.power)} power sample(s); at least 2 are needed")
        times = [sample.t for sample in self.power] + [counters.t for counters in self.network]
        return ResourceTrace(
            power=tuple(self.power),
            network=tuple(self.network),
            start_t=min(times),
            end_t=max(times),
            absent_channels=frozenset(self.absent_channels),
        )


class Sampler:
    """Polls a power and an optional network provider on a fixed schedule.

    Ticks are stamped at their scheduled instants k * interval, so a synthetic
    provider yields the same trace on every run. When the stop signal fires, the
    sampler catches up on overdue ticks and records one closing sample at the stop
    instant, provided it has already covered at least one full interval.
    """

    def __init__(self, power: PowerProvider, network: Optional[NetworkProvider] = None,
                 interval_ms: float = DEFAULT_INTERVAL_MS, clock=None):
        if interval_ms < MIN_INTERVAL_MS:
            raise SamplingError(f"Sampling interval must be >= {MIN_INTERVAL_MS} ms, got {interval_ms}")
        self.power = power
        self.network = network
        self.interval_ms = interval_ms
        self.clock = clock or MonotonicClock()
        self._power_done = False
        self._network_done = network is None
        self.started = threading.Event()  # set once the tick origin is fixed

    def _tick(self, builder: _TraceBuilder, t_ms: float):
        if not self._power_done:
            try:
                builder.power.append(self.power.poll(t_ms))
            except ProviderExhausted:
                self._power_done = True
            except ProviderError as e:
                if not builder.absent_channels.issuperset(e.failed_channels):
                    logger.warning(f"{e}; continuing with the remaining channels")
                builder.absent_channels.update(e.failed_channels)
                if e.partial is not None:
                    builder.power.append(e.partial)
        if not self._network_done:
            try:
                builder.network.append(self.network.poll(t_ms))
            except ProviderExhausted:
                self._network_done = True

    def run(self, stop: StopSignal) -> ResourceTrace:
        builder = _TraceBuilder()
        self.power.open(self.interval_ms)
        if self.network is not None:
            self.network.open(self.interval_ms)

        try:
            origin = self.clock.now_ms()
            self.started.set()
            k = 0
            stopped_at = None
            while not (self._power_done and self._network_done):
                deadline = k * self.interval_ms
                if stop.after_ms is not None and deadline > stop.after_ms:
                    stopped_at = stop.after_ms
                    break
                if not self.clock.sleep_until(origin + deadline, stop.event):
                    stopped_at = self.clock.now_ms() - origin
                    # Ticks that fell due before the stop was noticed still count
                    while deadline <= stopped_at and not (self._power_done and self._network_done):
                        self._tick(builder, deadline)
                        k += 1
                        deadline = k * self.interval_ms
                    break
                self._tick(builder, deadline)
                k += 1

            last_t = builder.last_t()
            if stopped_at is not None and len(builder.power) >= 2 and last_t is not None and stopped_at > last_t:
                self._tick(builder, stopped_at)
        finally:
            self.power.close()
            if self.network is not None:
                self.network.close()

        trace = builder.freeze()
        logger.debug(f"Sampled {len(trace.power)} power and {len(trace.network)} network samples "
                     f"over {trace.duration_s:.3f}s")
        return trace


def sample_run(power: PowerProvider, network: Optional[NetworkProvider], interval: float,
               stop: StopSignal, clock=None) -> ResourceTrace:
    return Sampler(power, network, interval, clock).run(stop)


def _interpolate_power(before: PowerSample, after: PowerSample, t: float) -> PowerSample:
    fraction = (t - before.t) / (after.t - before.t)
    channels = {}
    for channel, watts in before.channels.items():
        if channel in after.channels:
            channels[channel] = watts + (after.channels[channel] - watts) * fraction
    return PowerSample(t=t, channels=channels)


def _value_at(network: List[NetworkCounters], t: float) -> NetworkCounters:
    if t <= network[0].t:
        first = network[0]
        return NetworkCounters(t=t, bytes_in=first.bytes_in, bytes_out=first.bytes_out)
    for before, after in zip(network, network[1:]):
        if before.t <= t <= after.t:
            fraction = (t - before.t) / (after.t - before.t)
            return NetworkCounters(
                t=t,
                bytes_in=int(round(before.bytes_in + (after.bytes_in - before.bytes_in) * fraction)),
                bytes_out=int(round(before.bytes_out + (after.bytes_out - before.bytes_out) * fraction)),
            )
    last = network[-1]
    return NetworkCounters(t=t, bytes_in=last.bytes_in, bytes_out=last.bytes_out)


def crop_trace(trace: ResourceTrace, start_t: float, end_t: float) -> ResourceTrace:
    """Restrict a trace to [start_t, end_t], interpolating samples at both edges"""

    if end_t <= start_t:
        raise SamplingError(f"Empty run window [{start_t}, {end_t}]")
    power = list(trace.power)
    if power[0].t > start_t or power[-1].t < end_t:
        raise TraceTooShortError(
            f"Trace [{power[0].t}, {power[-1].t}] ms does not cover the run window [{start_t}, {end_t}] ms")

    cropped: List[PowerSample] = []
    for before, after in zip(power, power[1:]):
        if before.t < start_t < after.t:
            cropped.append(_interpolate_power(before, after, start_t))
        if start_t <= before.t <= end_t:
            cropped.append(before)
        if before.t < end_t < after.t:
            cropped.append(_interpolate_power(before, after, end_t))
    if power[-1].t <= end_t:
        cropped.append(power[-1])

    network = list(trace.network)
    cropped_network: List[NetworkCounters] = []
    if network:
        inside = [counters for counters in network if start_t < counters.t < end_t]
        cropped_network = [_value_at(network, start_t)] + inside + [_value_at(network, end_t)]

    return ResourceTrace(
        power=tuple(cropped),
        network=tuple(cropped_network),
        start_t=start_t,
        end_t=end_t,
        absent_channels=trace.absent_channels,
    )
