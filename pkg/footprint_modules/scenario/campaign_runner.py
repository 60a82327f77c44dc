import hashlib
import json
import logging
import os
import queue
import shlex
import subprocess
import threading
import time
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional

from dateutil import tz

from ..analysis import integrate_energy_detailed
from ..errors import (
    CampaignError,
    DriverRunError,
    DriverTimeoutError,
    DurationError,
    ProtocolError,
    RunError,
    ScenarioValidationError,
)
from ..model import CampaignRecord, Configuration, FunctionalUnit, ResourceTrace, RunRecord
from ..sampling.clock import MonotonicClock, StopSignal
from ..sampling.providers import DriverNetworkProvider, build_network_provider, build_power_provider
from ..sampling.sampler import Sampler, crop_trace
from .driver_protocol import ERR, NET, DriverProtocol, run_command
from .scenario_parser import ScenarioSpec

logger = logging.getLogger(__name__)

_EOF = None


class _SamplerThread(threading.Thread):
    def __init__(self, sampler: Sampler, stop: StopSignal):
        super().__init__(name='footprint-sampler', daemon=True)
        self.sampler = sampler
        self.stop = stop
        self.trace: Optional[ResourceTrace] = None
        self.error: Optional[BaseException] = None

    def run(self):
        try:
            self.trace = self.sampler.run(self.stop)
        except BaseException as e:
            self.error = e
        finally:
            # Never leave run_unit waiting on a sampler that failed before starting
            self.sampler.started.set()


def _pump_lines(stream, lines: 'queue.Queue[Optional[str]]'):
    try:
        for line in stream:
            lines.put(line)
    except (OSError, ValueError):
        pass
    finally:
        lines.put(_EOF)


class CampaignRunner:
    """Runs functional units through the scenario driver while the sampler records"""

    def __init__(self, spec: ScenarioSpec, clock=None, sleep: Callable[[float], None] = time.sleep,
                 startup_timeout: Optional[float] = None):
        self.spec = spec
        self.clock = clock or MonotonicClock()
        self.sleep = sleep
        self.startup_timeout = startup_timeout if startup_timeout is not None else \
            float(os.getenv('FOOTPRINT_DRIVER_STARTUP_TIMEOUT_S', '10'))

    def _create_seed(self, unit: FunctionalUnit, run_index: int) -> int:
        """Per-run seed for synthetic noise; shared across configurations so runs pair up"""
        key = f"{self.spec.seed}|{unit.name}|{run_index}"
        return int(hashlib.md5(key.encode('utf-8')).hexdigest()[:8], 16)

    def _driver_env(self, unit: FunctionalUnit, configuration: Configuration) -> Dict[str, str]:
        env = os.environ.copy()
        env.update({
            'FOOTPRINT_UNIT': unit.name,
            'FOOTPRINT_CONFIG': configuration.label,
            'FOOTPRINT_STEPS': json.dumps(list(unit.steps)),
            'FOOTPRINT_TARGET_DURATION_MS': str(int(round(unit.target_duration * 1000))),
        })
        return env

    def _launch(self, unit: FunctionalUnit, configuration: Configuration) -> subprocess.Popen:
        argv = shlex.split(self.spec.driver_command)
        logger.debug(f"Launching driver: {argv} for {unit.name} / {configuration.label}")
        try:
            return subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding='utf-8',
                bufsize=1,
                env=self._driver_env(unit, configuration),
            )
        except OSError as e:
            raise RunError(f"Could not start driver '{self.spec.driver_command}': {e}")

    def _next_line(self, lines: 'queue.Queue[Optional[str]]', timeout: float, what: str, error_class):
        if timeout <= 0:
            raise error_class(f"Timed out after {what}")
        try:
            return lines.get(timeout=timeout)
        except queue.Empty:
            raise error_class(f"Timed out after {what}")

    def _stop_driver(self, process: subprocess.Popen):
        try:
            if process.stdin and not process.stdin.closed:
                process.stdin.close()
        except OSError:
            pass
        try:
            process.wait(timeout=2)
        except subprocess.TimeoutExpired:
            process.kill()
            process.wait()
        try:
            process.stdout.close()
        except (OSError, ValueError):
            pass

    def _supervise(self, unit: FunctionalUnit, configuration: Configuration, process: subprocess.Popen,
                   sampler_thread: _SamplerThread, driver_network: DriverNetworkProvider) -> DriverProtocol:
        """Drive one run's event stream; returns the protocol state after DONE or ERR"""

        lines: 'queue.Queue[Optional[str]]' = queue.Queue()
        reader = threading.Thread(target=_pump_lines, args=(process.stdout, lines),
                                  name='footprint-driver-reader', daemon=True)
        reader.start()

        protocol = DriverProtocol(expected_steps=unit.steps)
        line = self._next_line(lines, self.startup_timeout,
                               f"waiting {self.startup_timeout:g}s for driver READY", DriverTimeoutError)
        if line is _EOF:
            protocol.finish()
        protocol.feed(line)
        logger.debug("Driver READY")

        sampler_thread.start()
        sampler_thread.sampler.started.wait()
        try:
            process.stdin.write(run_command(unit.name, configuration.label))
            process.stdin.flush()
        except OSError as e:
            raise ProtocolError(f"Driver closed its input before RUN: {e}")

        timeout_s = 2 * unit.target_duration
        deadline = time.monotonic() + timeout_s
        while True:
            line = self._next_line(lines, deadline - time.monotonic(),
                                   f"{timeout_s:g}s (2 x target duration) running '{unit.name}'",
                                   DriverTimeoutError)
            if line is _EOF:
                protocol.finish()
            event = protocol.feed(line)
            if event.kind == NET:
                driver_network.report(event.bytes_in, event.bytes_out)
            elif event.terminal:
                break
        return protocol

    def run_unit(self, unit: FunctionalUnit, configuration: Configuration, run_index: int) -> RunRecord:
        """Execute one basic unit once under one configuration"""

        if unit.is_composite:
            raise ScenarioValidationError(
                f"Composite unit '{unit.name}' is estimated from its members, not executed", field='units')
        power_spec = configuration.power_provider or self.spec.power_provider
        if power_spec is None:
            raise ScenarioValidationError("No power_provider configured", field='power_provider')

        power = build_power_provider(power_spec, seed=self._create_seed(unit, run_index))
        network = build_network_provider(self.spec.network_provider)
        driver_network = DriverNetworkProvider()
        stop = StopSignal()
        sampler_thread = _SamplerThread(Sampler(power, network, self.spec.sampling_interval, self.clock), stop)

        wall_clock_start = datetime.now(tz.UTC)
        window_start = time.monotonic()
        process = self._launch(unit, configuration)
        try:
            protocol = self._supervise(unit, configuration, process, sampler_thread, driver_network)
        finally:
            stop.set()
            if sampler_thread.ident is not None:
                sampler_thread.join()
            self._stop_driver(process)
        window_end = time.monotonic()

        outcome = protocol.finish()
        if outcome.kind == ERR:
            raise DriverRunError(outcome.message)

        if sampler_thread.error is not None:
            raise sampler_thread.error
        trace = sampler_thread.trace

        start_ms, end_ms = protocol.window
        actual = (end_ms - start_ms) / 1000.0
        deviation = abs(actual - unit.target_duration) / unit.target_duration
        metadata: Dict[str, Any] = {
            'wall_clock_start': wall_clock_start.isoformat(),
            'window_ms': (window_start * 1000.0, window_end * 1000.0),
            'duration_deviation': deviation,
            'duration_deviation_flag': False,
            'steps': [{'name': name, 'start_ms': start, 'end_ms': end} for name, start, end in protocol.steps],
        }
        if deviation > self.spec.duration_tolerance:
            message = (f"Unit '{unit.name}' ran {actual:.3f}s against a target of {unit.target_duration:g}s "
                       f"({deviation:.1%} off, tolerance {self.spec.duration_tolerance:.0%})")
            if self.spec.enforce_duration:
                raise DurationError(message)
            logger.warning(message)
            metadata['duration_deviation_flag'] = True

        cropped = crop_trace(trace, start_ms, end_ms)
        if driver_network.reported:
            metadata['network_source'] = 'driver'
            cropped = ResourceTrace(
                power=cropped.power,
                network=tuple(driver_network.window_counters(start_ms, end_ms)),
                start_t=cropped.start_t,
                end_t=cropped.end_t,
                absent_channels=cropped.absent_channels,
            )
        elif cropped.network:
            metadata['network_source'] = self.spec.network_provider.kind
        else:
            metadata['network_source'] = 'none'

        energies, partial = integrate_energy_detailed(cropped)
        logger.debug(f"{unit.name} / {configuration.label} run {run_index}: window {start_ms}-{end_ms} ms, "
                     f"energy {energies}")
        return RunRecord(
            unit=unit.name,
            configuration=configuration.label,
            trace=cropped,
            energy_joules=energies,
            bytes_total=cropped.bytes_total(),
            run_index=run_index,
            partial_channels=frozenset(partial),
            metadata=metadata,
        )

    def run_campaign(self, configuration: Configuration, keep_going: bool = False) -> CampaignRecord:
        """n_runs of every basic unit, one after another, with a cool-down in between"""

        runs: Dict[str, List[RunRecord]] = {}
        failures: List[Dict[str, Any]] = []
        first = True
        units = self.spec.basic_units()
        logger.info(f"Campaign '{configuration.label}': {len(units)} unit(s) x {self.spec.n_runs} run(s)")

        for unit in units:
            runs[unit.name] = []
            for run_index in range(self.spec.n_runs):
                if not first and self.spec.cooldown_s > 0:
                    self.sleep(self.spec.cooldown_s)
                first = False
                try:
                    runs[unit.name].append(self.run_unit(unit, configuration, run_index))
                except RunError as e:
                    if not keep_going:
                        raise CampaignError(
                            f"Run {run_index} of unit '{unit.name}' under '{configuration.label}' failed: {e}",
                            unit=unit.name, run_index=run_index) from e
                    logger.warning(f"Run {run_index} of unit '{unit.name}' failed, continuing: {e}")
                    failures.append({'unit': unit.name, 'run_index': run_index, 'error': str(e)})
            logger.info(f"{configuration.label}: {unit.name} done ({len(runs[unit.name])}/{self.spec.n_runs})")

        return CampaignRecord(
            configuration=configuration,
            runs={name: tuple(records) for name, records in runs.items()},
            n_runs_per_unit=self.spec.n_runs,
            failures=tuple(failures),
        )


def run_unit(unit: FunctionalUnit, configuration: Configuration, spec: ScenarioSpec, run_index: int) -> RunRecord:
    return CampaignRunner(spec).run_unit(unit, configuration, run_index)


def run_campaign(spec: ScenarioSpec, configuration: Configuration, keep_going: bool = False) -> CampaignRecord:
    return CampaignRunner(spec).run_campaign(configuration, keep_going=keep_going)
