"""Two-server leak detection.

The front server authenticates against the inflated vault and knows
nothing about which accounts are real. After an accepted login it asks the
honeychecker, which holds only the real usernames, and an answer of
"honey" raises an alarm. The two roles talk through a small length-prefixed
binary protocol so they can be split into separate processes unchanged.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import json
import os
import queue
import struct
import threading
import time
from dataclasses import asdict, dataclass

from honeyvault.authn import REFERENCE_THRESHOLD, AuthDecision, verify
from honeyvault.errors import FormatError, UnknownUserError

HFC_MAGIC = b"HFC1"
OP_CHECK = 0x01
_REQ_HEADER = struct.Struct("<4sBH")


class CheckResult(enum.IntEnum):
    REAL = 0x00
    HONEY = 0x01
    ERROR = 0xFF


class Outcome(str, enum.Enum):
    REJECTED = "rejected"
    ACCEPTED_REAL = "accepted_real"
    ACCEPTED_HONEY = "accepted_honey"
    ACCEPTED_PENDING = "accepted_pending"


class FailMode(str, enum.Enum):
    """What the front server does when the honeychecker cannot be reached.

    ``REJECT`` (the default) denies the login; ``BACKLOG`` lets it through
    as pending. Either way the username is queued for classification once
    the checker is back, so an alarm is still raised for a honey match.
    """

    BACKLOG = "backlog"
    REJECT = "reject"


class CheckerUnavailable(ConnectionError):
    pass


def encode_request(username: str) -> bytes:
    raw = username.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("username too long for the wire format")
    return _REQ_HEADER.pack(HFC_MAGIC, OP_CHECK, len(raw)) + raw


def decode_request(data: bytes) -> str:
    if len(data) < _REQ_HEADER.size:
        raise FormatError("truncated request")
    magic, op, n = _REQ_HEADER.unpack_from(data)
    if magic != HFC_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if op != OP_CHECK:
        raise FormatError(f"unknown opcode {op:#x}")
    if len(data) != _REQ_HEADER.size + n:
        raise FormatError("request length does not match its header")
    try:
        return data[_REQ_HEADER.size :].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("username is not valid UTF-8") from exc


def encode_response(result: CheckResult) -> bytes:
    return bytes([int(result)])


def decode_response(data: bytes) -> CheckResult:
    if len(data) != 1:
        raise FormatError("response must be exactly one byte")
    try:
        return CheckResult(data[0])
    except ValueError as exc:
        raise FormatError(f"unknown response code {data[0]:#x}") from exc


class HoneycheckerDb:
    """The set of real usernames.

    Names are held as keyed digests, so lookups compare fixed-width values
    whatever the username length, and the in-memory set does not hold the
    names themselves. Anything not in the set, including usernames the
    vault has never seen, is honey.
    """

    def __init__(self, real_usernames, *, key: bytes | None = None):
        self._key = os.urandom(16) if key is None else bytes(key)
        self._digests = frozenset(self._digest(u) for u in real_usernames)

    def _digest(self, username: str) -> bytes:
        return hmac.new(self._key, username.encode("utf-8"), hashlib.blake2b).digest()

    def __len__(self) -> int:
        return len(self._digests)

    def check(self, username: str) -> CheckResult:
        return CheckResult.REAL if self._digest(username) in self._digests else CheckResult.HONEY


def check(db: HoneycheckerDb, username: str) -> CheckResult:
    return db.check(username)


def load_checker_db(path) -> HoneycheckerDb:
    """Newline-separated real usernames."""
    with open(path, encoding="utf-8") as fh:
        return HoneycheckerDb(line.rstrip("\n") for line in fh if line.strip())


def save_checker_db(usernames, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(usernames):
            fh.write(name + "\n")


class Honeychecker:
    """Wire-level honeychecker; requests are handled one at a time."""

    def __init__(self, db: HoneycheckerDb):
        self.db = db
        self._lock = threading.Lock()
        self.requests = 0

    def handle(self, request: bytes) -> bytes:
        with self._lock:
            self.requests += 1
            try:
                username = decode_request(request)
            except FormatError:
                return encode_response(CheckResult.ERROR)
            return encode_response(self.db.check(username))


class LocalChannel:
    """In-process transport to a :class:`Honeychecker`; can be taken down to simulate a partition."""

    def __init__(self, checker: Honeychecker):
        self.checker = checker
        self.up = True

    def query(self, username: str) -> CheckResult:
        if not self.up:
            raise CheckerUnavailable("honeychecker unreachable")
        result = decode_response(self.checker.handle(encode_request(username)))
        if result is CheckResult.ERROR:
            raise CheckerUnavailable("honeychecker rejected the request")
        return result


@dataclass(frozen=True)
class AlarmEvent:
    username: str
    timestamp: float
    source: str

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "outcome": Outcome.ACCEPTED_HONEY.value}, sort_keys=True)


@dataclass(frozen=True)
class LoginResult:
    username: str
    outcome: Outcome
    decision: AuthDecision | None


class FrontServer:
    """Authenticates logins and consults the honeychecker after each acceptance.

    Alarms are put on ``alarms`` (a FIFO queue) and, when ``alarm_sink``
    is given, written to it as JSON lines. Accepted logins that could not
    be classified are kept in ``backlog`` until :meth:`drain_backlog`.
    """

    def __init__(
        self,
        vault,
        space,
        channel,
        threshold: float = REFERENCE_THRESHOLD,
        *,
        fail_mode: FailMode = FailMode.REJECT,
        alarm_sink=None,
        source: str = "front",
        clock=time.time,
    ):
        self.vault = vault
        self.space = space
        self.channel = channel
        self.threshold = threshold
        self.fail_mode = FailMode(fail_mode)
        self.alarm_sink = alarm_sink
        self.source = source
        self.clock = clock
        self.alarms: queue.Queue[AlarmEvent] = queue.Queue()
        self.backlog: list[str] = []
        self._lock = threading.Lock()

    def _alarm(self, username: str) -> None:
        event = AlarmEvent(username, self.clock(), self.source)
        with self._lock:
            self.alarms.put(event)
            if self.alarm_sink is not None:
                self.alarm_sink.write(event.to_json() + "\n")
                self.alarm_sink.flush()

    def _classify(self, username: str) -> Outcome:
        result = self.channel.query(username)
        if result is CheckResult.HONEY:
            self._alarm(username)
            return Outcome.ACCEPTED_HONEY
        return Outcome.ACCEPTED_REAL

    def handle_login(self, username: str, probe_shape, probe_texture) -> LoginResult:
        try:
            decision = verify(self.vault, self.space, username, probe_shape, probe_texture, self.threshold)
        except UnknownUserError:
            return LoginResult(username, Outcome.REJECTED, None)
        if not decision.accepted:
            return LoginResult(username, Outcome.REJECTED, decision)
        try:
            outcome = self._classify(username)
        except CheckerUnavailable:
            with self._lock:
                self.backlog.append(username)
            outcome = Outcome.ACCEPTED_PENDING if self.fail_mode is FailMode.BACKLOG else Outcome.REJECTED
        return LoginResult(username, outcome, decision)

    def drain_backlog(self) -> list[tuple[str, Outcome]]:
        """Classify queued acceptances; entries stay queued while the checker is down."""
        with self._lock:
            pending, self.backlog = self.backlog, []
        resolved = []
        for i, username in enumerate(pending):
            try:
                resolved.append((username, self._classify(username)))
            except CheckerUnavailable:
                with self._lock:
                    self.backlog[:0] = pending[i:]
                break
        return resolved

    def drain_alarms(self) -> list[AlarmEvent]:
        out = []
        while True:
            try:
                out.append(self.alarms.get_nowait())
            except queue.Empty:
                return out


@dataclass
class SimulationReport:
    attempts: int
    outcomes: dict
    resolved_from_backlog: dict
    honey_accepts: int
    alarms: int
    false_alarms: int
    missed_alarms: int

    def to_record(self) -> dict:
        return asdict(self)


def simulate_logins(front: FrontServer, attempts, real_usernames) -> SimulationReport:
    """Run ``(username, shape, texture)`` attempts and score the alarms.

    ``real_usernames`` is ground truth known to the simulation only; it is
    used to count alarms raised for real accounts (false alarms) and honey
    acceptances that did not alarm (misses).
    """
    real = set(real_usernames)
    counts = {o.value: 0 for o in Outcome}
    honey_accepts = 0
    n = 0
    for username, shape, texture in attempts:
        n += 1
        result = front.handle_login(username, shape, texture)
        counts[result.outcome.value] += 1
        if result.decision is not None and result.decision.accepted and username not in real:
            honey_accepts += 1
    resolved = {o.value: 0 for o in (Outcome.ACCEPTED_REAL, Outcome.ACCEPTED_HONEY)}
    for _, outcome in front.drain_backlog():
        resolved[outcome.value] += 1
    alarms = front.drain_alarms()
    false_alarms = sum(1 for a in alarms if a.username in real)
    return SimulationReport(
        attempts=n,
        outcomes=counts,
        resolved_from_backlog=resolved,
        honey_accepts=honey_accepts,
        alarms=len(alarms),
        false_alarms=false_alarms,
        missed_alarms=honey_accepts - (len(alarms) - false_alarms),
    )
