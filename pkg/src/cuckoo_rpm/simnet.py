"""Deterministic discrete-event simulation of the RPM network.

One tick is one simulated millisecond. The RA, medical professionals (``mp0``,
``mp1``, ...) and patients (``p0``, ``p1``, ...) exchange :class:`Envelope`
bytes over an in-memory channel. An optional intruder sits on selected
channels and can observe, forward, delay/replay or mangle messages, but holds
only its own key pair.

Every send, forward, replay and delivery is appended to a :class:`Transcript`;
the same :class:`SimConfig` always produces the same transcript bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import crypto
from .errors import ConfigError, MalformedSnapshot, RpmError
from .filter_core import FilterParams
from .handshake import (
    KIND_BY_LABEL,
    Envelope,
    Kind,
    MpSession,
    MpState,
    PatientSession,
    PatientState,
    Rejected,
    RejectReason,
    ReplayCache,
    broadcast_envelope,
    build_ack,
    build_escalation,
    build_login,
    build_notification,
    issue_m1,
    mp_handle_ack,
    mp_handle_m2,
    patient_handle_m1,
    patient_handle_m3,
    ra_handle_escalation,
    ra_handle_login,
    read_notification,
    receive_vitals,
    retry_pending,
    send_vitals,
)
from .registry import FilterPair, PairReceiver, PseudoId, RaDirectory, Role, Status, Verdict

POLICIES = ("None", "PassiveListen", "Replay", "ModifyByte", "MitmForward")
ACTIVE_POLICIES = ("Replay", "ModifyByte", "MitmForward")

# Errors counted as attack detections in the summary.
DETECTIONS = (
    "StaleTimestamp", "AuthFailure", "ModificationDetected", "ReplayDetected",
    "IdentityMismatch", "StaleEpoch", "BadSignature", "MalformedSnapshot", "Malformed",
)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class IntruderPolicy:
    type: str = "None"
    delay: int = 0          # Replay: ticks between the original and the re-send
    kind: str = "M2"        # Replay / ModifyByte: message kind to attack
    position: int = 0       # ModifyByte: ciphertext offset to flip
    occurrence: int = 1     # attack the n-th matching message only

    def __post_init__(self):
        if self.type not in POLICIES:
            raise ConfigError(f"unknown intruder policy {self.type!r}")
        if self.kind not in KIND_BY_LABEL:
            raise ConfigError(f"unknown message kind {self.kind!r}")
        if self.delay < 0 or self.position < 0 or self.occurrence < 1:
            raise ConfigError("intruder delay/position must be >= 0, occurrence >= 1")

    @property
    def interposes(self) -> bool:
        return self.type in ACTIVE_POLICIES


@dataclass
class SimConfig:
    seed: int = 0
    actors: list = field(default_factory=lambda: [["mp", 1], ["patient", 1]])
    intruder_policy: IntruderPolicy = field(default_factory=IntruderPolicy)
    freshness_window: int = crypto.DEFAULT_FRESHNESS_WINDOW
    broadcast_period: int = 10_000
    duration_ticks: int = 5_000
    latency: int = 1
    key_bits: int = crypto.TEST_KEY_BITS
    dh_bits: int | None = 16
    ack: bool = True
    vitals_period: int = 1_000
    login_at: int = 10
    login_stagger: int = 5
    intercept: object = "all"
    broadcast_on_change: bool = True
    filter_buckets: int = 64
    fingerprint_bits: int = 16
    events: list = field(default_factory=list)
    expect: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if isinstance(self.intruder_policy, dict):
            try:
                self.intruder_policy = IntruderPolicy(**self.intruder_policy)
            except TypeError as exc:
                raise ConfigError(f"intruder_policy: {exc}") from None
        elif isinstance(self.intruder_policy, str):
            self.intruder_policy = IntruderPolicy(type=self.intruder_policy)
        counts = self.actor_counts()
        if counts["mp"] < 1 or counts["patient"] < 0:
            raise ConfigError("need at least one medical professional")
        for name in ("freshness_window", "broadcast_period", "duration_ticks", "vitals_period"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be a positive integer")
        if self.latency < 1:
            raise ConfigError("latency must be >= 1 tick")
        if self.dh_bits is not None and not 8 <= self.dh_bits <= 40:
            raise ConfigError("dh_bits must be in [8, 40] or null for the 2048-bit group")
        try:
            FilterParams(self.filter_buckets, 4, self.fingerprint_bits)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.intercept != "all":
            if not isinstance(self.intercept, list) or not all(
                isinstance(c, list) and len(c) == 2 for c in self.intercept
            ):
                raise ConfigError('intercept must be "all" or a list of [a, b] actor pairs')
        for ev in self.events:
            if not isinstance(ev, dict) or {"tick", "action", "actor"} - ev.keys():
                raise ConfigError("events need tick, action and actor")
            if ev["action"] not in ("revoke", "deregister"):
                raise ConfigError(f"unknown lifecycle action {ev['action']!r}")

    def actor_counts(self) -> Counter:
        counts = Counter({"mp": 0, "patient": 0})
        for entry in self.actors:
            try:
                role, count = entry
                role = Role.parse(str(role))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad actors entry {entry!r}: {exc}") from None
            if not isinstance(count, int) or count < 0:
                raise ConfigError("actor counts must be non-negative integers")
            counts["mp" if role is Role.MEDICAL_PROFESSIONAL else "patient"] += count
        return counts

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# transcript


EVENT_KEYS = ("tick", "event", "from", "to", "kind", "verdicts", "state_before",
              "state_after", "error", "wire")


class Transcript:
    """Ordered, append-only event log of one run plus end-of-run state."""

    def __init__(self):
        self.events: list[dict] = []
        self.final_states: dict = {}
        self.summary: dict = {}

    def append(self, **fields) -> None:
        event = {k: fields.get(k) for k in EVENT_KEYS}
        self.events.append(event)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def to_ndjson(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n"
                       for e in self.events)

    def select(self, **pattern) -> list[dict]:
        return [e for e in self.events if _matches(e, pattern)]

    def errors(self) -> Counter:
        return Counter(e["error"] for e in self.events if e["error"])

    def detections(self) -> Counter:
        return Counter({k: v for k, v in self.errors().items() if k in DETECTIONS})

    def wire_bytes(self) -> bytes:
        return b"".join(bytes.fromhex(e["wire"]) for e in self.events if e["wire"])


class Mismatch(RpmError):
    def __init__(self, step: int, expected: dict, message: str = ""):
        self.step = step
        self.expected = expected
        super().__init__(f"step {step}: no event matching {expected}" + (f" ({message})" if message else ""))


def _matches(event: dict, pattern: dict) -> bool:
    for key, want in pattern.items():
        have = event.get(key)
        if key == "error" and isinstance(want, str) and have:
            if not have.startswith(want):
                return False
        elif have != want:
            return False
    return True


def assert_sequence(transcript: Transcript, expected: list[dict]) -> None:
    """Match ``expected`` step patterns as an ordered subsequence of the transcript.

    Raises :class:`Mismatch` naming the first step (1-based) with no match.
    """
    pos = 0
    events = transcript.events
    for step, pattern in enumerate(expected, start=1):
        while pos < len(events) and not _matches(events[pos], pattern):
            pos += 1
        if pos == len(events):
            raise Mismatch(step, pattern)
        pos += 1


# Message sequence of the honest flow and of the same flow relayed by an intruder.
HONEST_SEQUENCE = [
    {"event": "send", "from": "ra", "to": "p0", "kind": "M1"},
    {"event": "send", "from": "p0", "to": "mp0", "kind": "M2"},
    {"event": "send", "from": "mp0", "to": "p0", "kind": "M3"},
    {"event": "send", "from": "p0", "to": "mp0", "kind": "Ack"},
]

MITM_SEQUENCE = [
    {"event": "send", "from": "ra", "to": "p0", "kind": "M1"},
    {"event": "forward", "from": "intruder", "to": "p0", "kind": "M1"},
    {"event": "send", "from": "p0", "to": "mp0", "kind": "M2"},
    {"event": "forward", "from": "intruder", "to": "mp0", "kind": "M2"},
    {"event": "send", "from": "mp0", "to": "p0", "kind": "M3"},
    {"event": "forward", "from": "intruder", "to": "p0", "kind": "M3"},
    {"event": "send", "from": "p0", "to": "mp0", "kind": "Ack"},
    {"event": "forward", "from": "intruder", "to": "mp0", "kind": "Ack"},
]


# ---------------------------------------------------------------------------
# actors


@dataclass
class _Ctx:
    verdicts: list = field(default_factory=list)
    before: str | None = None
    after: str | None = None
    error: str | None = None
    outbox: list = field(default_factory=list)

    def reject(self, exc: Rejected) -> None:
        self.error = exc.reason.value + (f"{{{exc.verdict.value}}}" if exc.verdict else "")


def _verdicts(history: list[str], start: int) -> list[str]:
    return [h.split(":", 1)[1] for h in history[start:] if h.startswith("verdict:")]


class _Party:
    def __init__(self, sim: "Simulation", name: str, pid: PseudoId, keypair):
        self.sim = sim
        self.name = name
        self.pid = pid
        self.keypair = keypair
        self.rng = random.Random(f"{sim.config.seed}/{name}")
        self.filters = PairReceiver(sim.directory.public_key)
        self.window = sim.config.freshness_window

    def on_broadcast(self, env: Envelope, now: int, ctx: _Ctx) -> None:
        try:
            pair = FilterPair.from_bytes(env.ciphertext)
        except MalformedSnapshot:
            ctx.error = "MalformedSnapshot"
            return
        current = self.filters.epoch(pair.role)
        if not self.filters.accept(pair):
            ctx.error = "StaleEpoch" if pair.epoch <= current else "BadSignature"
            return
        ctx.after = f"epoch:{pair.role.short}={pair.epoch}"
        self.after_filters(pair.role, now, ctx)

    def after_filters(self, role: Role, now: int, ctx: _Ctx) -> None:
        raise NotImplementedError

    def escalate(self, suspect: PseudoId, now: int, ctx: _Ctx) -> None:
        env = build_escalation(self.pid, suspect, self.sim.directory.public_key, now, self.rng)
        ctx.outbox.append(("ra", env))


class _Patient(_Party):
    def __init__(self, sim, name, pid, keypair, username, password, index):
        super().__init__(sim, name, pid, keypair)
        self.username = username
        self.password = password
        self.index = index
        self.session: PatientSession | None = None
        self.past_sessions: list[PatientSession] = []
        self.seen = ReplayCache(self.window)
        self.awaiting_assignment = False

    def _new_session(self) -> PatientSession:
        return PatientSession(self.pid, self.keypair, window=self.window,
                              ra_public=self.sim.directory.public_key,
                              dh_bits=self.sim.config.dh_bits)

    def login(self, now: int) -> None:
        self.session = self._new_session()
        env = build_login(self.session, self.username, self.password, now, self.rng)
        self.sim.send(self.name, "ra", env, now)

    def handle(self, src: str, env: Envelope, now: int, ctx: _Ctx) -> None:
        if env.kind is Kind.FILTER_BROADCAST:
            self.on_broadcast(env, now, ctx)
        elif env.kind is Kind.M1:
            self._on_m1(env, now, ctx)
        elif env.kind is Kind.M3:
            self._on_m3(env, now, ctx)
        elif env.kind is Kind.NOTIFICATION:
            self._on_notification(env, now, ctx)
        else:
            ctx.error = "Unexpected"

    def _on_m1(self, env, now, ctx):
        s = self.session
        if s is None or (s.state is not PatientState.LOGGED_IN and self.awaiting_assignment):
            # RA-initiated reassignment: the RA already vouched for this patient.
            s = self._new_session()
            s._move(PatientState.LOGGED_IN)
        ctx.before = s.state.value
        mark = len(s.history)
        try:
            m2 = patient_handle_m1(s, env, self.filters, now, self.rng, seen=self.seen)
        except Rejected as exc:
            ctx.reject(exc)
            if exc.reason is RejectReason.PEER_NOT_VALID:
                self._adopt(s)
                if exc.verdict is Verdict.ESCALATE_TO_RA and s.pending:
                    self.escalate(s.peer_pid, now, ctx)
                    self.sim.escalations += 1
            ctx.verdicts = _verdicts(s.history, mark)
            ctx.after = s.state.value
            return
        self._adopt(s)
        ctx.verdicts = _verdicts(s.history, mark)
        ctx.after = s.state.value
        ctx.outbox.append((self.sim.name_of(s.peer_pid), m2))

    def _adopt(self, s: PatientSession) -> None:
        if s is not self.session:
            if self.session is not None:
                self.past_sessions.append(self.session)
            self.session = s
            self.awaiting_assignment = False

    def _on_m3(self, env, now, ctx):
        s = self.session
        if s is None:
            ctx.error = "WrongState"
            return
        ctx.before = s.state.value
        try:
            patient_handle_m3(s, env, now)
        except Rejected as exc:
            ctx.reject(exc)
            ctx.after = s.state.value
            return
        ctx.after = s.state.value
        if self.sim.config.ack:
            ctx.outbox.append((self.sim.name_of(s.peer_pid), build_ack(s, now, self.rng)))
        self.sim.schedule(now + self.sim.config.vitals_period, self._vitals_tick, s)

    def _vitals_tick(self, now: int, s: PatientSession) -> None:
        if s is not self.session or not s.established:
            return
        readings = [
            {"metric": "heart_rate", "value": self.rng.randint(55, 95)},
            {"metric": "spo2", "value": self.rng.randint(94, 100)},
        ]
        env = send_vitals(s, readings, now, self.rng)
        self.sim.send(self.name, self.sim.name_of(s.peer_pid), env, now)
        self.sim.schedule(now + self.sim.config.vitals_period, self._vitals_tick, s)

    def _on_notification(self, env, now, ctx):
        try:
            event, subject = read_notification(self.keypair, env, now, self.window)
        except Rejected as exc:
            ctx.reject(exc)
            return
        s = self.session
        if event in ("mp_revoked", "mp_departed"):
            self.awaiting_assignment = True
            if s is not None and s.peer_pid is not None and s.peer_pid.id_bytes == subject \
                    and s.state is not PatientState.FAILED:
                ctx.before = s.state.value
                s._fail("PeerRevoked" if event == "mp_revoked" else "PeerDeparted")
                ctx.after = s.state.value
        elif event == "denied" and s is not None:
            ctx.before = s.state.value
            s._fail("Denied")
            ctx.after = s.state.value

    def after_filters(self, role, now, ctx):
        s = self.session
        if s is None or role is not Role.MEDICAL_PROFESSIONAL:
            return
        if s.established and self.filters.classify(s.peer_pid) is Verdict.MALICIOUS:
            ctx.before = s.state.value
            s._fail("PeerRevoked")
            ctx.after = s.state.value
        elif s.pending is not None:
            ctx.before = s.state.value
            mark = len(s.history)
            try:
                m2 = retry_pending(s, self.filters, now, self.rng)
                ctx.outbox.append((self.sim.name_of(s.peer_pid), m2))
            except Rejected as exc:
                ctx.reject(exc)
            ctx.verdicts = _verdicts(s.history, mark)
            ctx.after = s.state.value


class _MedicalProfessional(_Party):
    def __init__(self, sim, name, pid, keypair):
        super().__init__(sim, name, pid, keypair)
        self.sessions: dict[bytes, MpSession] = {}
        self.paused: dict[bytes, MpSession] = {}
        self.seen = ReplayCache(self.window)
        self.vitals_received = 0

    def handle(self, src, env, now, ctx):
        if env.kind is Kind.FILTER_BROADCAST:
            self.on_broadcast(env, now, ctx)
        elif env.kind is Kind.M2:
            self._on_m2(env, now, ctx)
        elif env.kind in (Kind.ACK, Kind.SESSION_DATA):
            s = self.sessions.get(env.sender_id or b"")
            if s is None:
                ctx.error = "UnknownSession"
                return
            ctx.before = s.state.value
            try:
                if env.kind is Kind.ACK:
                    mp_handle_ack(s, env, now)
                else:
                    receive_vitals(s, env, now)
                    self.vitals_received += 1
                    self.sim.vitals_delivered += 1
            except Rejected as exc:
                ctx.reject(exc)
            ctx.after = s.state.value
        else:
            ctx.error = "Unexpected"

    def _on_m2(self, env, now, ctx):
        s = MpSession(self.pid, self.keypair, window=self.window)
        ctx.before = s.state.value
        try:
            m3 = mp_handle_m2(s, env, self.filters, now, self.rng, seen=self.seen)
        except Rejected as exc:
            ctx.reject(exc)
            ctx.verdicts = _verdicts(s.history, 0)
            ctx.after = s.state.value
            if exc.reason is RejectReason.PEER_NOT_VALID and s.pending is not None:
                self.paused[s.peer_pid.id_bytes] = s
                if exc.verdict is Verdict.ESCALATE_TO_RA:
                    self.escalate(s.peer_pid, now, ctx)
                    self.sim.escalations += 1
            return
        self.sessions[s.peer_pid.id_bytes] = s
        ctx.verdicts = _verdicts(s.history, 0)
        ctx.after = s.state.value
        ctx.outbox.append((self.sim.name_of(s.peer_pid), m3))

    def after_filters(self, role, now, ctx):
        if role is not Role.PATIENT:
            return
        for key, s in list(self.sessions.items()):
            if s.established and self.filters.classify(s.peer_pid) is Verdict.MALICIOUS:
                s._fail("PeerRevoked")
        for key, s in list(self.paused.items()):
            mark = len(s.history)
            try:
                m3 = retry_pending(s, self.filters, now, self.rng)
            except Rejected as exc:
                ctx.reject(exc)
                if s.pending is None:
                    del self.paused[key]
                continue
            finally:
                ctx.verdicts += _verdicts(s.history, mark)
            del self.paused[key]
            self.sessions[key] = s
            ctx.outbox.append((self.sim.name_of(s.peer_pid), m3))


class _RegistrationAuthority:
    name = "ra"

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.directory = sim.directory
        self.rng = random.Random(f"{sim.config.seed}/ra-wire")
        self.seen = ReplayCache(sim.config.freshness_window)

    def handle(self, src, env, now, ctx):
        if env.kind is Kind.LOGIN:
            try:
                pid, m1 = ra_handle_login(self.directory, env, now, self.rng,
                                          self.sim.config.freshness_window, self.seen)
            except Rejected as exc:
                ctx.reject(exc)
                return
            ctx.outbox.append((self.sim.name_of(pid), m1))
        elif env.kind is Kind.ESCALATION:
            try:
                pair = ra_handle_escalation(self.directory, env, now,
                                            self.sim.config.freshness_window)
            except (Rejected, RpmError) as exc:
                ctx.error = exc.reason.value if isinstance(exc, Rejected) else type(exc).__name__
                return
            ctx.after = f"epoch:{pair.role.short}={pair.epoch}"
            self.broadcast([pair], now)
        else:
            ctx.error = "Unexpected"

    def broadcast(self, pairs: list[FilterPair], now: int) -> None:
        for pair in pairs:
            env = broadcast_envelope(pair)
            for name in self.sim.party_names():
                self.sim.send("ra", name, env, now)

    def periodic(self, now: int) -> None:
        self.broadcast([self.directory.publish_pair(role) for role in Role], now)
        self.sim.schedule(now + self.sim.config.broadcast_period, self.periodic)

    def lifecycle(self, now: int, action: str, actor: str) -> None:
        party = self.sim.actors.get(actor)
        if not isinstance(party, _Party):
            self.sim.transcript.append(tick=now, event="lifecycle", **{"from": "ra", "to": actor},
                                       error="UnknownActor")
            return
        pid = party.pid
        try:
            released = (self.directory.revoke if action == "revoke" else self.directory.deregister)(pid)
        except RpmError as exc:
            self.sim.transcript.append(tick=now, event="lifecycle", **{"from": "ra", "to": actor},
                                       kind=action, error=type(exc).__name__)
            return
        self.sim.transcript.append(tick=now, event="lifecycle", **{"from": "ra", "to": actor},
                                   kind=action, state_after=self.directory.status_of(pid).value)
        if self.sim.config.broadcast_on_change:
            self.broadcast([self.directory.publish_pair(pid.role)], now)
        note = "mp_revoked" if action == "revoke" else "mp_departed"
        for patient in released:
            target = self.sim.name_of(patient)
            key = self.directory.public_key_of(patient)
            self.sim.send("ra", target, build_notification(key, note, pid, now, self.rng), now)
            try:
                mp = self.directory.assign_mp(patient, exclude={pid})
            except RpmError:
                continue
            self.sim.send("ra", target, issue_m1(self.directory, patient, mp, now, self.rng), now)


class _Intruder:
    name = "intruder"

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.policy = sim.config.intruder_policy
        self.keypair = crypto.generate_keypair(random.Random(f"{sim.config.seed}/intruder"),
                                               sim.config.key_bits)
        self.knowledge: list[bytes] = []
        self.decrypt_attempts = 0
        self.decrypt_successes = 0
        self._matched = 0

    def observe(self, env: Envelope) -> None:
        self.knowledge.append(env.to_bytes())
        if env.kind is Kind.FILTER_BROADCAST:
            return
        self.decrypt_attempts += 1
        try:
            crypto.decrypt(self.keypair.private, env.ciphertext)
            self.decrypt_successes += 1
        except RpmError:
            pass

    def knows(self, secret: bytes) -> bool:
        """Byte-search of everything observed plus the intruder's own key material."""
        own = self.keypair.private.secret_bytes() + self.keypair.public.to_bytes()
        return secret in own or any(secret in blob for blob in self.knowledge)

    def _targeted(self, env: Envelope) -> bool:
        if env.kind.label != self.policy.kind:
            return False
        self._matched += 1
        return self._matched == self.policy.occurrence

    def intercept(self, src: str, dst: str, env: Envelope, now: int) -> None:
        self.observe(env)
        policy, sim = self.policy, self.sim
        if policy.type == "ModifyByte" and self._targeted(env):
            ct = bytearray(env.ciphertext)
            if policy.position < len(ct):
                ct[policy.position] ^= 0x01
                sim.modified += 1
            env = env.with_ciphertext(bytes(ct))
            sim.relay(src, dst, env, now, event="forward", error=None, note="modified")
            return
        sim.relay(src, dst, env, now, event="forward")
        if policy.type == "Replay" and self._targeted(env):
            sim.schedule(now + policy.delay, lambda t: sim.relay(src, dst, env, t, event="replay"))


# ---------------------------------------------------------------------------
# simulation


class Simulation:
    def __init__(self, config: SimConfig):
        self.config = config
        self.transcript = Transcript()
        self._queue: list = []
        self._seq = itertools.count()
        self.escalations = 0
        self.vitals_delivered = 0
        self.modified = 0
        params = FilterParams(config.filter_buckets, 4, config.fingerprint_bits)
        self.directory = RaDirectory(random.Random(f"{config.seed}/ra"),
                                     params={role: params for role in Role},
                                     key_bits=config.key_bits, kdf_iterations=100)
        self.actors: dict[str, object] = {}
        self._names: dict[bytes, str] = {}
        counts = config.actor_counts()
        self.ra = _RegistrationAuthority(self)
        self.actors["ra"] = self.ra
        for i in range(counts["mp"]):
            name = f"mp{i}"
            pid, kp = self.directory.register(Role.MEDICAL_PROFESSIONAL, f"Medical Professional {i} (real identity)",
                                              f"pw-{name}", username=name)
            self._add(_MedicalProfessional(self, name, pid, kp))
        for i in range(counts["patient"]):
            name = f"p{i}"
            password = f"pw-{name}"
            pid, kp = self.directory.register(Role.PATIENT, f"Patient {i} (real identity)",
                                              password, username=name)
            self._add(_Patient(self, name, pid, kp, name, password, i))
        self.intruder = _Intruder(self) if config.intruder_policy.type != "None" else None
        self._intercept = None
        if config.intercept != "all":
            self._intercept = {frozenset(pair) for pair in config.intercept}

    def _add(self, party: _Party) -> None:
        self.actors[party.name] = party
        self._names[party.pid.id_bytes] = party.name

    def name_of(self, pid: PseudoId) -> str:
        return self._names[pid.id_bytes]

    def party_names(self) -> list[str]:
        return [n for n, a in self.actors.items() if isinstance(a, _Party)]

    def schedule(self, tick: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (tick, next(self._seq), fn, args))

    # -- channel ---------------------------------------------------------

    def _intercepted(self, src: str, dst: str) -> bool:
        if self.intruder is None:
            return False
        return self._intercept is None or frozenset((src, dst)) in self._intercept

    def send(self, src: str, dst: str, env: Envelope, now: int) -> None:
        wire = env.to_bytes()
        self.transcript.append(tick=now, event="send", **{"from": src, "to": dst},
                               kind=env.kind.label, wire=wire.hex())
        arrive = now + self.config.latency
        if self._intercepted(src, dst):
            if self.intruder.policy.interposes:
                self.schedule(arrive, lambda t: self.intruder.intercept(src, dst, env, t))
                return
            self.intruder.observe(env)
        self.schedule(arrive, self.deliver, src, dst, env)

    def relay(self, src: str, dst: str, env: Envelope, now: int, event: str = "forward",
              error: str | None = None, note: str | None = None) -> None:
        self.transcript.append(tick=now, event=event, **{"from": "intruder", "to": dst},
                               kind=env.kind.label, wire=env.to_bytes().hex(),
                               state_after=note, error=error)
        self.schedule(now + self.config.latency, self.deliver, src, dst, env)

    def inject(self, tick: int, src: str, dst: str, env: Envelope) -> None:
        def fire(t):
            self.transcript.append(tick=t, event="inject", **{"from": src, "to": dst},
                                   kind=env.kind.label, wire=env.to_bytes().hex())
            self.deliver(t, src, dst, env)
        self.schedule(tick, fire)

    def deliver(self, now: int, src: str, dst: str, env: Envelope) -> None:
        actor = self.actors.get(dst)
        ctx = _Ctx()
        if actor is None:
            ctx.error = "UnknownActor"
        else:
            actor.handle(src, env, now, ctx)
        self.transcript.append(tick=now, event="deliver", **{"from": src, "to": dst},
                               kind=env.kind.label, verdicts=ctx.verdicts or None,
                               state_before=ctx.before, state_after=ctx.after, error=ctx.error)
        for target, out in ctx.outbox:
            self.send(dst, target, out, now)

    # -- run -------------------------------------------------------------

    def run(self) -> Transcript:
        cfg = self.config
        self.schedule(0, self.ra.periodic)
        for name in self.party_names():
            party = self.actors[name]
            if isinstance(party, _Patient):
                self.schedule(cfg.login_at + cfg.login_stagger * party.index, party.login)
        for ev in cfg.events:
            self.schedule(ev["tick"], self.ra.lifecycle, ev["action"], ev["actor"])
        while self._queue and self._queue[0][0] <= cfg.duration_ticks:
            tick, _, fn, args = heapq.heappop(self._queue)
            fn(tick, *args)
        self.transcript.final_states = self.final_states()
        self.transcript.summary = self.summarize()
        return self.transcript

    def final_states(self) -> dict:
        states = {}
        for name, actor in self.actors.items():
            if isinstance(actor, _Patient):
                s = actor.session
                states[name] = None if s is None else {
                    "state": s.state.value,
                    "peer": self.name_of(s.peer_pid) if s.peer_pid else None,
                    "key": _key_digest(s.shared_key),
                }
            elif isinstance(actor, _MedicalProfessional):
                states[name] = {
                    self._names[k]: {"state": s.state.value, "key": _key_digest(s.shared_key),
                                     "confirmed": s.confirmed}
                    for k, s in sorted(actor.sessions.items(), key=lambda kv: self._names[kv[0]])
                }
        return states

    def established_pairs(self) -> list[tuple[str, str]]:
        pairs = []
        for name, actor in self.actors.items():
            if not isinstance(actor, _Patient) or actor.session is None:
                continue
            s = actor.session
            if not s.established:
                continue
            mp = self.actors[self.name_of(s.peer_pid)]
            peer = mp.sessions.get(actor.pid.id_bytes)
            if peer is not None and peer.established and peer.shared_key == s.shared_key:
                pairs.append((name, mp.name))
        return pairs

    def one_sided(self) -> list[tuple[str, str]]:
        """Patient/MP pairs where exactly one side holds an Established key the other lacks."""
        out = []
        for name, actor in self.actors.items():
            if not isinstance(actor, _MedicalProfessional) or not self._active(actor):
                continue
            for key, s in actor.sessions.items():
                if not s.established:
                    continue
                patient = self.actors[self._names[key]]
                if not self._active(patient):
                    continue
                ps = patient.session
                if ps is None or not ps.established or ps.shared_key != s.shared_key:
                    out.append((patient.name, name))
        for name, actor in self.actors.items():
            if isinstance(actor, _Patient) and actor.session and actor.session.established \
                    and self._active(actor):
                s = actor.session
                mp = self.actors[self.name_of(s.peer_pid)]
                peer = mp.sessions.get(actor.pid.id_bytes)
                if not self._active(mp):
                    continue
                if peer is None or not peer.established or peer.shared_key != s.shared_key:
                    out.append((name, mp.name))
        return sorted(set(out))

    def _active(self, party: _Party) -> bool:
        # Revoked or departed principals are untrusted; their leftover session state is ignored.
        return self.directory.status_of(party.pid) is Status.ACTIVE

    def summarize(self) -> dict:
        detections = self.transcript.detections()
        summary = {
            "scenario": self.config.name,
            "seed": self.config.seed,
            "intruder_policy": self.config.intruder_policy.type,
            "sessions_established": len(self.established_pairs()),
            "one_sided_sessions": len(self.one_sided()),
            "attacks_detected": dict(sorted(detections.items())),
            "escalations": self.escalations,
            "vitals_delivered": self.vitals_delivered,
            "intruder_decrypts": self.intruder.decrypt_successes if self.intruder else 0,
            "events": len(self.transcript),
        }
        checks = check_expectations(self, summary)
        summary["assertions"] = checks
        summary["ok"] = all(c["ok"] for c in checks)
        return summary


def _key_digest(key: int | None) -> str | None:
    if key is None:
        return None
    return hashlib.sha256(b"key-digest" + crypto.int_to_bytes(key)).hexdigest()[:16]


def check_expectations(sim: Simulation, summary: dict) -> list[dict]:
    """Evaluate the ``expect`` block of a scenario config."""
    expect = sim.config.expect
    checks = []

    def add(name, ok, detail=""):
        checks.append({"name": name, "ok": bool(ok), "detail": detail})

    if "sessions_established" in expect:
        want = expect["sessions_established"]
        add("sessions_established", summary["sessions_established"] == want,
            f"want {want}, got {summary['sessions_established']}")
    for name, want in expect.get("detections", {}).items():
        got = summary["attacks_detected"].get(name, 0)
        add(f"detections.{name}", got == want, f"want {want}, got {got}")
    if expect.get("no_detections"):
        add("no_detections", not summary["attacks_detected"], str(summary["attacks_detected"]))
    if "intruder_decrypts" in expect:
        add("intruder_decrypts", summary["intruder_decrypts"] == expect["intruder_decrypts"],
            f"got {summary['intruder_decrypts']}")
    if "min_vitals" in expect:
        add("min_vitals", summary["vitals_delivered"] >= expect["min_vitals"],
            f"got {summary['vitals_delivered']}")
    if "escalations" in expect:
        add("escalations", summary["escalations"] == expect["escalations"],
            f"got {summary['escalations']}")
    if "sequence" in expect:
        steps = expect["sequence"]
        if steps == "honest":
            steps = HONEST_SEQUENCE
        elif steps == "mitm":
            steps = MITM_SEQUENCE
        try:
            assert_sequence(sim.transcript, steps)
            add("sequence", True)
        except Mismatch as exc:
            add("sequence", False, str(exc))
    if expect.get("safety", True):
        ok = summary["one_sided_sessions"] == 0 or bool(summary["attacks_detected"])
        add("safety", ok, "" if ok else "one-sided Established session without any detection event")
    return checks


def run_scenario(config: SimConfig) -> Transcript:
    return Simulation(config).run()


def inject(config: SimConfig, position: int, forged: Envelope, to: str | None = None,
           sender: str | None = None, baseline: Transcript | None = None) -> Transcript:
    """Re-run ``config`` with ``forged`` delivered right after transcript event ``position``.

    The target defaults to that event's receiver and the claimed sender to its
    sender; delivery happens one tick after the event.
    """
    if baseline is None:
        baseline = run_scenario(config)
    if not 0 <= position < len(baseline):
        raise ConfigError(f"position {position} outside transcript of {len(baseline)} events")
    anchor = baseline.events[position]
    sim = Simulation(config)
    sim.inject(anchor["tick"] + 1, sender or anchor["from"], to or anchor["to"], forged)
    return sim.run()
