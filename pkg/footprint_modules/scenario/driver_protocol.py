"""Newline protocol spoken between the harness and a scenario driver.

harness -> driver:  RUN <unit> <config>
driver -> harness:  READY
                    STEP <name> START <t_ms>
                    STEP <name> END <t_ms>
                    NET <bytes_in> <bytes_out>
                    DONE 0
                    ERR <message...>

Names are percent-encoded so they stay one token. t_ms counts from RUN and NET
carries cumulative totals since RUN.
"""
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
from urllib.parse import quote, unquote

from ..errors import ProtocolError

READY = 'READY'
STEP_START = 'STEP_START'
STEP_END = 'STEP_END'
NET = 'NET'
DONE = 'DONE'
ERR = 'ERR'

_NUMBER = re.compile(r'^[0-9]+$')


def quote_name(name: str) -> str:
    return quote(name, safe='')


def unquote_name(token: str) -> str:
    return unquote(token)


def run_command(unit: str, configuration: str) -> str:
    return f"RUN {quote_name(unit)} {quote_name(configuration)}\n"


@dataclass(frozen=True)
class DriverEvent:
    kind: str
    step: Optional[str] = None
    t_ms: Optional[int] = None
    bytes_in: Optional[int] = None
    bytes_out: Optional[int] = None
    message: Optional[str] = None
    line_number: int = 0

    @property
    def terminal(self) -> bool:
        return self.kind in (DONE, ERR)


def parse_line(line: str, line_number: int = 0) -> DriverEvent:
    """Tokenize one driver line into an event, without checking where it may occur"""

    text = line.rstrip('\r\n')
    tokens = text.split()
    if not tokens:
        raise ProtocolError(f"Driver line {line_number}: empty line", line=text, line_number=line_number)

    keyword = tokens[0]
    if keyword == 'READY' and len(tokens) == 1:
        return DriverEvent(READY, line_number=line_number)
    if keyword == 'STEP' and len(tokens) == 4 and tokens[2] in ('START', 'END') and _NUMBER.match(tokens[3]):
        kind = STEP_START if tokens[2] == 'START' else STEP_END
        return DriverEvent(kind, step=unquote_name(tokens[1]), t_ms=int(tokens[3]), line_number=line_number)
    if keyword == 'NET' and len(tokens) == 3 and _NUMBER.match(tokens[1]) and _NUMBER.match(tokens[2]):
        return DriverEvent(NET, bytes_in=int(tokens[1]), bytes_out=int(tokens[2]), line_number=line_number)
    if keyword == 'DONE' and tokens[1:] == ['0']:
        return DriverEvent(DONE, line_number=line_number)
    if keyword == 'ERR' and len(tokens) > 1:
        return DriverEvent(ERR, message=' '.join(tokens[1:]), line_number=line_number)

    raise ProtocolError(f"Driver line {line_number}: malformed event {text!r}", line=text, line_number=line_number)


class DriverProtocol:
    """Incremental checker for one run's event stream.

    feed() every line the driver prints, then finish() once the stream ends.
    Anything out of grammar raises ProtocolError carrying the offending line.
    """

    def __init__(self, expected_steps: Optional[Sequence[str]] = None):
        self.expected_steps = list(expected_steps) if expected_steps is not None else None
        self.steps: List[Tuple[str, int, int]] = []
        self.net: Optional[Tuple[int, int]] = None
        self.outcome: Optional[DriverEvent] = None
        self._ready = False
        self._open_step: Optional[Tuple[str, int]] = None
        self._line_number = 0

    def _reject(self, message: str, line: str) -> ProtocolError:
        text = line.rstrip('\r\n')
        return ProtocolError(f"Driver line {self._line_number}: {message} ({text!r})",
                             line=text, line_number=self._line_number)

    def feed(self, line: str) -> DriverEvent:
        self._line_number += 1
        if self.outcome is not None:
            raise self._reject(f"event after {self.outcome.kind}", line)
        event = parse_line(line, self._line_number)

        if not self._ready:
            if event.kind != READY:
                raise self._reject("expected READY first", line)
            self._ready = True
            return event

        if event.kind == READY:
            raise self._reject("duplicate READY", line)

        if event.kind == STEP_START:
            if self._open_step is not None:
                raise self._reject(f"step '{event.step}' started inside step '{self._open_step[0]}'", line)
            if self.steps and event.t_ms < self.steps[-1][2]:
                raise self._reject(f"step '{event.step}' starts before the previous step ended", line)
            if self.expected_steps is not None:
                index = len(self.steps)
                if index >= len(self.expected_steps):
                    raise self._reject(f"unexpected extra step '{event.step}'", line)
                if event.step != self.expected_steps[index]:
                    raise self._reject(
                        f"expected step '{self.expected_steps[index]}', got '{event.step}'", line)
            self._open_step = (event.step, event.t_ms)

        elif event.kind == STEP_END:
            if self._open_step is None:
                raise self._reject(f"step '{event.step}' ended without starting", line)
            name, start = self._open_step
            if event.step != name:
                raise self._reject(f"step '{event.step}' ended while '{name}' is open", line)
            if event.t_ms < start:
                raise self._reject(f"step '{name}' ends before it starts", line)
            self.steps.append((name, start, event.t_ms))
            self._open_step = None

        elif event.kind == NET:
            if self.net is not None and (event.bytes_in < self.net[0] or event.bytes_out < self.net[1]):
                raise self._reject("NET counters decreased", line)
            self.net = (event.bytes_in, event.bytes_out)

        elif event.kind == DONE:
            if self._open_step is not None:
                raise self._reject(f"DONE while step '{self._open_step[0]}' is open", line)
            if not self.steps:
                raise self._reject("DONE before any step", line)
            if self.expected_steps is not None and len(self.steps) != len(self.expected_steps):
                raise self._reject(
                    f"DONE after {len(self.steps)} of {len(self.expected_steps)} expected steps", line)
            self.outcome = event

        elif event.kind == ERR:
            self.outcome = event

        return event

    def finish(self) -> DriverEvent:
        """Call at end of stream; returns the DONE or ERR event"""
        if self.outcome is None:
            where = 'before READY' if not self._ready else 'before DONE'
            raise ProtocolError(f"Driver output ended {where} after {self._line_number} line(s)",
                                line=None, line_number=self._line_number)
        return self.outcome

    @property
    def window(self) -> Tuple[int, int]:
        """[first STEP START, last STEP END] in driver milliseconds"""
        if not self.steps:
            raise ProtocolError("No completed steps")
        return self.steps[0][1], self.steps[-1][2]


def parse_stream(lines: Sequence[str], expected_steps: Optional[Sequence[str]] = None) -> DriverProtocol:
    """Check a complete recorded stream"""
    protocol = DriverProtocol(expected_steps)
    for line in lines:
        protocol.feed(line)
    protocol.finish()
    return protocol
