"""Replay trace files.

One record per line, UTF-8, sorted by timestamp:

    P <t_ms> <channel>=<watts> [<channel>=<watts> ...]
    N <t_ms> <bytes_in> <bytes_out>
"""
import math
from dataclasses import dataclass
from typing import List

from ..errors import MonotonicityError, ReplayFormatError
from ..model import NetworkCounters, PowerSample, ResourceTrace, decode_position


@dataclass(frozen=True)
class ReplayTrace:
    power: List[PowerSample]
    network: List[NetworkCounters]


def _parse_number(token: str, what: str, line_number: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ReplayFormatError(f"{what} is not a number: {token!r}", line_number)
    if not math.isfinite(value) or value < 0:
        raise ReplayFormatError(f"{what} must be finite and >= 0: {token!r}", line_number)
    return value


def _parse_count(token: str, what: str, line_number: int) -> int:
    if not token.isascii() or not token.isdigit():
        raise ReplayFormatError(f"{what} must be a non-negative integer: {token!r}", line_number)
    return int(token)


def parse_replay(text: str) -> ReplayTrace:
    power: List[PowerSample] = []
    network: List[NetworkCounters] = []
    last_t = None

    for line_number, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind not in ('P', 'N') or len(tokens) < 2:
            raise ReplayFormatError(f"expected a P or N record, got {line!r}", line_number)

        t = _parse_number(tokens[1], 't_ms', line_number)
        if last_t is not None and t < last_t:
            raise ReplayFormatError(f"records are not sorted by t_ms ({last_t} then {t})", line_number)
        last_t = t

        if kind == 'P':
            if len(tokens) < 3:
                raise ReplayFormatError("power record has no channels", line_number)
            channels = {}
            for token in tokens[2:]:
                channel, sep, watts = token.partition('=')
                if not sep or not channel:
                    raise ReplayFormatError(f"expected <channel>=<watts>, got {token!r}", line_number)
                if channel in channels:
                    raise ReplayFormatError(f"channel '{channel}' repeated", line_number)
                channels[channel] = _parse_number(watts, f"power of '{channel}'", line_number)
            if power and power[-1].t >= t:
                raise ReplayFormatError(f"power timestamps must be strictly increasing at t={t}", line_number)
            power.append(PowerSample(t=t, channels=channels))
        else:
            if len(tokens) != 4:
                raise ReplayFormatError("network record needs <t_ms> <bytes_in> <bytes_out>", line_number)
            counters = NetworkCounters(
                t=t,
                bytes_in=_parse_count(tokens[2], 'bytes_in', line_number),
                bytes_out=_parse_count(tokens[3], 'bytes_out', line_number),
            )
            if network:
                previous = network[-1]
                if previous.t >= t:
                    raise ReplayFormatError(f"network timestamps must be strictly increasing at t={t}", line_number)
                if counters.bytes_in < previous.bytes_in or counters.bytes_out < previous.bytes_out:
                    raise MonotonicityError(
                        f"Replay line {line_number}: network counters decreased at sample {len(network)}",
                        index=len(network))
            network.append(counters)

    return ReplayTrace(power=power, network=network)


def load_replay(path: str) -> ReplayTrace:
    with open(path, 'rb') as f:
        data = f.read()
    try:
        text = data.decode('utf-8')
    except UnicodeDecodeError as e:
        raise ReplayFormatError(f"{path} is not valid UTF-8 (byte offset {e.start})",
                                decode_position(data, e)) from e
    return parse_replay(text)


def write_replay(trace: ResourceTrace) -> str:
    """Serialize a trace; parse_replay(write_replay(t)) returns the same samples"""
    records = []
    for sample in trace.power:
        channels = ' '.join(f"{channel}={float(watts)!r}" for channel, watts in sample.channels.items())
        records.append((sample.t, 0, f"P {float(sample.t)!r} {channels}"))
    for counters in trace.network:
        records.append((counters.t, 1, f"N {float(counters.t)!r} {counters.bytes_in} {counters.bytes_out}"))
    records.sort(key=lambda record: (record[0], record[1]))
    return ''.join(line + '\n' for _, _, line in records)


def save_replay(trace: ResourceTrace, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(write_replay(trace))
