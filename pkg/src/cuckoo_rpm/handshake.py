"""Patient / RA / medical-professional authentication flow.

Message sequence::

    P  -> RA : LOGIN  E((username, password, ts), PU_RA)
    RA -> P  : M1     E((PID_MP, PU_MP, ts), PU_P)
    P  -> MP : M2     PID_P, PID_MP, E((A, alpha, g, PU_P, ts, PID_P), PU_MP)
    MP -> P  : M3     PID_MP, PID_P, E((B, Ks, ts, PID_MP), PU_P)
    P  -> MP : ACK    PID_P, PID_MP, E((Ks', ts, PID_P), PU_MP)      (optional)

after which vitals travel as SESSION_DATA under a key derived from Ks.

Every handler either returns the next envelope or raises :class:`Rejected`.
Rejections caused by noise on the wire (bad ciphertext, stale or replayed
timestamps) leave the session untouched; a Malicious verdict or a failed key
confirmation aborts the session.
"""

from __future__ import annotations

import enum
import json
import random
import struct
from dataclasses import dataclass, field

from . import crypto
from .crypto import DhGroup, KeyPair, PublicKey
from .errors import DecryptionFailure, AuthFailure, Denied, PeerValueOutOfRange, RpmError
from .registry import (
    PID_SIZE,
    FilterPair,
    PairReceiver,
    PseudoId,
    RaDirectory,
    Role,
    Verdict,
    classify,
)

__all__ = [
    "Kind", "Envelope", "RejectReason", "Rejected", "ReplayCache",
    "PatientState", "MpState", "PatientSession", "MpSession",
    "build_login", "ra_handle_login", "issue_m1", "patient_login",
    "patient_handle_m1", "mp_handle_m2", "patient_handle_m3", "build_ack", "mp_handle_ack",
    "retry_pending", "send_vitals", "receive_vitals",
    "build_escalation", "ra_handle_escalation", "build_notification", "read_notification",
    "broadcast_envelope", "pack_fields", "unpack_fields",
]


class Kind(enum.IntEnum):
    M1 = 1
    M2 = 2
    M3 = 3
    SESSION_DATA = 4
    FILTER_BROADCAST = 5
    NOTIFICATION = 6
    ACK = 7
    LOGIN = 8
    ESCALATION = 9

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    Kind.M1: "M1", Kind.M2: "M2", Kind.M3: "M3", Kind.SESSION_DATA: "SessionData",
    Kind.FILTER_BROADCAST: "FilterBroadcast", Kind.NOTIFICATION: "Notification",
    Kind.ACK: "Ack", Kind.LOGIN: "Login", Kind.ESCALATION: "Escalation",
}
KIND_BY_LABEL = {v: k for k, v in _LABELS.items()}

_ENV_HEAD = struct.Struct("<BH")
_ENV_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class Envelope:
    """Wire message: ``kind u8 | header_len u16 | header | ct_len u32 | ciphertext``."""

    kind: Kind
    header: bytes = b""
    ciphertext: bytes = b""

    def to_bytes(self) -> bytes:
        return (
            _ENV_HEAD.pack(int(self.kind), len(self.header)) + self.header
            + _ENV_LEN.pack(len(self.ciphertext)) + self.ciphertext
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        try:
            kind, hlen = _ENV_HEAD.unpack_from(data)
            off = _ENV_HEAD.size
            header = data[off:off + hlen]
            off += hlen
            (clen,) = _ENV_LEN.unpack_from(data, off)
            off += _ENV_LEN.size
            ct = data[off:off + clen]
            if len(header) != hlen or len(ct) != clen or off + clen != len(data):
                raise ValueError("length mismatch")
            return cls(Kind(kind), header, ct)
        except (struct.error, ValueError) as exc:
            raise Rejected(RejectReason.MALFORMED, detail=str(exc)) from None

    @property
    def sender_id(self) -> bytes | None:
        return self.header[:PID_SIZE] if len(self.header) >= PID_SIZE else None

    @property
    def receiver_id(self) -> bytes | None:
        return self.header[PID_SIZE:2 * PID_SIZE] if len(self.header) >= 2 * PID_SIZE else None

    def with_ciphertext(self, ciphertext: bytes) -> "Envelope":
        return Envelope(self.kind, self.header, ciphertext)


class RejectReason(enum.Enum):
    STALE_TIMESTAMP = "StaleTimestamp"
    PEER_NOT_VALID = "PeerNotValid"
    BAD_GROUP_PARAMS = "BadGroupParams"
    PEER_VALUE_OUT_OF_RANGE = "PeerValueOutOfRange"
    MODIFICATION_DETECTED = "ModificationDetected"
    AUTH_FAILURE = "AuthFailure"
    REPLAY_DETECTED = "ReplayDetected"
    IDENTITY_MISMATCH = "IdentityMismatch"
    WRONG_STATE = "WrongState"
    DENIED = "Denied"
    MALFORMED = "Malformed"


class Rejected(RpmError):
    def __init__(self, reason: RejectReason, verdict: Verdict | None = None, detail: str = ""):
        self.reason = reason
        self.verdict = verdict
        self.detail = detail
        text = reason.value
        if verdict is not None:
            text += f"{{{verdict.value}}}"
        super().__init__(f"{text}: {detail}" if detail else text)


# ---------------------------------------------------------------------------
# interior encoding


def pack_fields(*items) -> bytes:
    out = []
    for item in items:
        raw = crypto.int_to_bytes(item) if isinstance(item, int) else bytes(item)
        out.append(struct.pack(">I", len(raw)) + raw)
    return b"".join(out)


def unpack_fields(data: bytes, count: int) -> list[bytes]:
    fields, off = [], 0
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from(">I", data, off)
            off += 4
            if off + ln > len(data):
                raise ValueError("field overruns payload")
            fields.append(data[off:off + ln])
            off += ln
    except (struct.error, ValueError) as exc:
        raise Rejected(RejectReason.MALFORMED, detail=str(exc)) from None
    if off != len(data):
        raise Rejected(RejectReason.MALFORMED, detail="trailing bytes in payload")
    return fields


def _int(raw: bytes) -> int:
    return int.from_bytes(raw, "big")


def _open(private, ciphertext: bytes) -> bytes:
    try:
        return crypto.decrypt(private, ciphertext)
    except DecryptionFailure as exc:
        raise Rejected(RejectReason.AUTH_FAILURE, detail=str(exc)) from None


# ---------------------------------------------------------------------------
# session state


class ReplayCache:
    """Remembers ``(sender, ts)`` pairs for one freshness window."""

    def __init__(self, window: int):
        self.window = window
        self._seen: dict[tuple[bytes, int], int] = {}

    def check(self, sender: bytes, ts: int, now: int) -> None:
        for key in [k for k, t in self._seen.items() if now - t > self.window]:
            del self._seen[key]
        if (sender, ts) in self._seen:
            raise Rejected(RejectReason.REPLAY_DETECTED, detail=f"ts={ts}")
        self._seen[sender, ts] = ts

    def __len__(self) -> int:
        return len(self._seen)


class PatientState(enum.Enum):
    IDLE = "Idle"
    LOGGED_IN = "LoggedIn"
    AWAITING_M3 = "AwaitingM3"
    ESTABLISHED = "Established"
    FAILED = "Failed"


class MpState(enum.Enum):
    IDLE = "Idle"
    ESTABLISHED = "Established"
    FAILED = "Failed"


_RA_SENDER = b"ra"


@dataclass
class _Session:
    pid: PseudoId
    keypair: KeyPair
    window: int = crypto.DEFAULT_FRESHNESS_WINDOW
    group: DhGroup | None = None
    my_secret: int | None = field(default=None, repr=False)
    peer_pid: PseudoId | None = None
    peer_public: PublicKey | None = None
    shared_key: int | None = field(default=None, repr=False)
    history: list[str] = field(default_factory=list)
    pending: dict | None = None
    retries_left: int = 1
    confirmed: bool = False
    last_sent_ts: int = -1

    def __post_init__(self):
        self.replay_cache = ReplayCache(self.window)

    def _move(self, new) -> None:
        self.history.append(f"state:{self.state.value}->{new.value}")
        self.state = new
        if new.value != "Established":
            self.shared_key = None

    def _fail(self, reason: str) -> None:
        self.history.append(f"abort:{reason}")
        self._move(type(self.state).FAILED)

    def next_ts(self, now: int) -> int:
        """Monotone per-sender timestamp."""
        self.last_sent_ts = max(now, self.last_sent_ts + 1)
        return self.last_sent_ts

    def _check_fresh(self, ts: int, now: int, label: str) -> None:
        if not crypto.fresh(ts, now, self.window):
            raise Rejected(RejectReason.STALE_TIMESTAMP, detail=f"{label} ts={ts} now={now}")
        self.history.append(f"fresh:{label}")

    @property
    def established(self) -> bool:
        return self.state.value == "Established"


@dataclass
class PatientSession(_Session):
    """Patient side. ``dh_bits`` picks a random test-scale group; ``None`` uses the 2048-bit group."""

    ra_public: PublicKey | None = None
    dh_bits: int | None = 16
    state: PatientState = PatientState.IDLE


@dataclass
class MpSession(_Session):
    state: MpState = MpState.IDLE


def _classify(filters, pid: PseudoId) -> Verdict:
    if isinstance(filters, FilterPair):
        return classify(pid, filters)
    if isinstance(filters, PairReceiver):
        return filters.classify(pid)
    if filters is None:
        return Verdict.AWAIT_UPDATE
    raise TypeError(f"unsupported filter source {type(filters).__name__}")


def _judge(session: _Session, filters, peer: PseudoId, pending: dict) -> None:
    """Apply the four-way verdict to a peer; raises unless it is Valid."""
    verdict = _classify(filters, peer)
    session.history.append(f"verdict:{verdict.value}")
    if verdict is Verdict.VALID:
        session.pending = None
        return
    if verdict is Verdict.MALICIOUS:
        session.pending = None
        session._fail("Malicious")
    else:
        session.pending = dict(pending, peer=peer, verdict=verdict)
    raise Rejected(RejectReason.PEER_NOT_VALID, verdict, detail=str(peer))


# ---------------------------------------------------------------------------
# login and M1


def build_login(session: PatientSession, username: str, password: str, now: int,
                rng: random.Random) -> Envelope:
    if session.state is not PatientState.IDLE:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    ts = session.next_ts(now)
    body = pack_fields(username.encode(), password.encode(), ts)
    session._move(PatientState.LOGGED_IN)
    return Envelope(Kind.LOGIN, b"", crypto.encrypt(session.ra_public, body, rng))


def issue_m1(directory: RaDirectory, patient_pid: PseudoId, mp_pid: PseudoId, now: int,
             rng: random.Random) -> Envelope:
    body = pack_fields(mp_pid.id_bytes, directory.public_key_of(mp_pid).to_bytes(), now)
    return Envelope(Kind.M1, b"", crypto.encrypt(directory.public_key_of(patient_pid), body, rng))


def ra_handle_login(directory: RaDirectory, envelope: Envelope, now: int, rng: random.Random,
                    window: int = crypto.DEFAULT_FRESHNESS_WINDOW,
                    replay: ReplayCache | None = None) -> tuple[PseudoId, Envelope]:
    """Check the credentials in a LOGIN message; on success return ``(patient, M1)``."""
    username, password, ts = unpack_fields(_open(directory.keys.private, envelope.ciphertext), 3)
    ts = _int(ts)
    if not crypto.fresh(ts, now, window):
        raise Rejected(RejectReason.STALE_TIMESTAMP, detail="login")
    if replay is not None:
        replay.check(username, ts, now)
    try:
        pid = directory.check_credential(username.decode(errors="replace"),
                                         password.decode(errors="replace"))
        if pid.role is not Role.PATIENT:
            raise Denied("only patients log in to request a medical professional")
        mp = directory.assign_mp(pid)
    except Denied as exc:
        raise Rejected(RejectReason.DENIED, detail=str(exc)) from None
    return pid, issue_m1(directory, pid, mp, now, rng)


def patient_login(directory: RaDirectory, session: PatientSession, username: str,
                  password: str, now: int, rng: random.Random) -> Envelope:
    """Login round trip without a channel: returns the RA's M1 or raises ``Rejected(Denied)``."""
    if session.ra_public is None:
        session.ra_public = directory.public_key
    login = build_login(session, username, password, now, rng)
    try:
        _, m1 = ra_handle_login(directory, login, now, rng, session.window)
    except Rejected:
        session._fail("Denied")
        raise
    return m1


# ---------------------------------------------------------------------------
# M1 -> M2


def _make_group(session: PatientSession, rng: random.Random) -> DhGroup:
    if session.dh_bits is None:
        return DhGroup.demo()
    return DhGroup.generate(rng, session.dh_bits)


def _patient_emit_m2(session: PatientSession, now: int, rng: random.Random,
                     group: DhGroup | None = None, secret: int | None = None) -> Envelope:
    session.group = group or _make_group(session, rng)
    session.my_secret = secret if secret is not None else crypto.dh_secret(session.group, rng)
    a = crypto.dh_public(session.group, session.my_secret)
    ts = session.next_ts(now)
    body = pack_fields(a, session.group.alpha, session.group.g,
                       session.keypair.public.to_bytes(), ts, session.pid.id_bytes)
    header = session.pid.id_bytes + session.peer_pid.id_bytes
    session._move(PatientState.AWAITING_M3)
    return Envelope(Kind.M2, header, crypto.encrypt(session.peer_public, body, rng))


def patient_handle_m1(session: PatientSession, envelope: Envelope, filters, now: int,
                      rng: random.Random, group: DhGroup | None = None,
                      secret: int | None = None, seen: ReplayCache | None = None) -> Envelope:
    """``seen`` is an actor-wide replay cache that outlives individual sessions."""
    if envelope.kind is not Kind.M1:
        raise Rejected(RejectReason.MALFORMED, detail=f"expected M1, got {envelope.kind.label}")
    mp_id, mp_key, ts = unpack_fields(_open(session.keypair.private, envelope.ciphertext), 3)
    ts = _int(ts)
    session._check_fresh(ts, now, "M1")
    (seen if seen is not None else session.replay_cache).check(_RA_SENDER, ts, now)
    if session.state is not PatientState.LOGGED_IN:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    try:
        mp_pid = PseudoId(Role.MEDICAL_PROFESSIONAL, mp_id)
        mp_public = PublicKey.from_bytes(mp_key)
    except (ValueError, DecryptionFailure) as exc:
        raise Rejected(RejectReason.MALFORMED, detail=str(exc)) from None
    session.peer_pid, session.peer_public = mp_pid, mp_public
    _judge(session, filters, mp_pid, {"step": "M1", "group": group, "secret": secret})
    return _patient_emit_m2(session, now, rng, group, secret)


# ---------------------------------------------------------------------------
# M2 -> M3


def _mp_emit_m3(session: MpSession, pending: dict, now: int, rng: random.Random,
                secret: int | None = None) -> Envelope:
    group, a = pending["group"], pending["A"]
    try:
        group.validate()
    except ValueError as exc:
        session._fail("BadGroupParams")
        raise Rejected(RejectReason.BAD_GROUP_PARAMS, detail=str(exc)) from None
    y = secret if secret is not None else crypto.dh_secret(group, rng)
    try:
        ks = crypto.dh_shared(group, a, y)
    except PeerValueOutOfRange as exc:
        session._fail("PeerValueOutOfRange")
        raise Rejected(RejectReason.PEER_VALUE_OUT_OF_RANGE, detail=str(exc)) from None
    b = crypto.dh_public(group, y)
    session.group, session.my_secret = group, y
    ts = session.next_ts(now)
    body = pack_fields(b, ks, ts, session.pid.id_bytes)
    header = session.pid.id_bytes + session.peer_pid.id_bytes
    session._move(MpState.ESTABLISHED)
    session.shared_key = ks
    return Envelope(Kind.M3, header, crypto.encrypt(session.peer_public, body, rng))


def mp_handle_m2(session: MpSession, envelope: Envelope, filters, now: int,
                 rng: random.Random, seen: ReplayCache | None = None,
                 secret: int | None = None) -> Envelope:
    """``seen`` is the MP's actor-wide cache; new sessions are created per M2."""
    if envelope.kind is not Kind.M2:
        raise Rejected(RejectReason.MALFORMED, detail=f"expected M2, got {envelope.kind.label}")
    plain = _open(session.keypair.private, envelope.ciphertext)
    a, alpha, g, p_key, ts, p_id = unpack_fields(plain, 6)
    ts = _int(ts)
    session._check_fresh(ts, now, "M2")
    (seen if seen is not None else session.replay_cache).check(envelope.sender_id or b"", ts, now)
    if session.state is not MpState.IDLE:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    if envelope.receiver_id != session.pid.id_bytes:
        raise Rejected(RejectReason.IDENTITY_MISMATCH, detail="M2 not addressed to this MP")
    if p_id != envelope.sender_id:
        raise Rejected(RejectReason.IDENTITY_MISMATCH, detail="cleartext PID differs from sealed PID")
    try:
        peer = PseudoId(Role.PATIENT, p_id)
        session.peer_public = PublicKey.from_bytes(p_key)
    except (ValueError, DecryptionFailure) as exc:
        raise Rejected(RejectReason.MALFORMED, detail=str(exc)) from None
    session.peer_pid = peer
    pending = {"step": "M2", "group": DhGroup(_int(alpha), _int(g)), "A": _int(a),
               "secret": secret}
    _judge(session, filters, peer, pending)
    return _mp_emit_m3(session, pending, now, rng, secret)


# ---------------------------------------------------------------------------
# M3 and acknowledgement


def patient_handle_m3(session: PatientSession, envelope: Envelope, now: int) -> None:
    """Key confirmation: ``B^x mod alpha`` must equal the ``Ks`` sent by the MP."""
    if envelope.kind is not Kind.M3:
        raise Rejected(RejectReason.MALFORMED, detail=f"expected M3, got {envelope.kind.label}")
    b, ks, ts, mp_id = unpack_fields(_open(session.keypair.private, envelope.ciphertext), 4)
    ts = _int(ts)
    session._check_fresh(ts, now, "M3")
    session.replay_cache.check(envelope.sender_id or b"", ts, now)
    if session.state is not PatientState.AWAITING_M3:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    if envelope.sender_id != session.peer_pid.id_bytes or envelope.receiver_id != session.pid.id_bytes:
        raise Rejected(RejectReason.IDENTITY_MISMATCH, detail="M3 header PIDs")
    if mp_id != session.peer_pid.id_bytes:
        session._fail("ModificationDetected")
        raise Rejected(RejectReason.MODIFICATION_DETECTED, detail="sealed PID differs")
    try:
        k_prime = crypto.dh_shared(session.group, _int(b), session.my_secret)
    except PeerValueOutOfRange as exc:
        session._fail("ModificationDetected")
        raise Rejected(RejectReason.MODIFICATION_DETECTED, detail=str(exc)) from None
    if k_prime != _int(ks):
        session._fail("ModificationDetected")
        raise Rejected(RejectReason.MODIFICATION_DETECTED, detail="K's != Ks")
    session._move(PatientState.ESTABLISHED)
    session.shared_key = k_prime


def build_ack(session: PatientSession, now: int, rng: random.Random) -> Envelope:
    if not session.established:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    body = pack_fields(session.shared_key, session.next_ts(now), session.pid.id_bytes)
    header = session.pid.id_bytes + session.peer_pid.id_bytes
    return Envelope(Kind.ACK, header, crypto.encrypt(session.peer_public, body, rng))


def mp_handle_ack(session: MpSession, envelope: Envelope, now: int) -> None:
    ks, ts, p_id = unpack_fields(_open(session.keypair.private, envelope.ciphertext), 3)
    ts = _int(ts)
    session._check_fresh(ts, now, "Ack")
    session.replay_cache.check(envelope.sender_id or b"", ts, now)
    if not session.established:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    if p_id != session.peer_pid.id_bytes or _int(ks) != session.shared_key:
        session._fail("ModificationDetected")
        raise Rejected(RejectReason.MODIFICATION_DETECTED, detail="acknowledged key differs")
    session.confirmed = True
    session.history.append("confirmed")


# ---------------------------------------------------------------------------
# paused handshakes


def retry_pending(session: _Session, filters, now: int, rng: random.Random) -> Envelope:
    """Re-run the peer check of a handshake paused on AwaitUpdate / EscalateToRA.

    One retry is allowed; a second non-Valid verdict aborts the session.
    """
    pending = session.pending
    if pending is None:
        raise Rejected(RejectReason.WRONG_STATE, detail="nothing pending")
    if session.retries_left <= 0:
        session.pending = None
        session._fail(pending["verdict"].value)
        raise Rejected(RejectReason.PEER_NOT_VALID, pending["verdict"], detail="retry exhausted")
    session.retries_left -= 1
    try:
        _judge(session, filters, pending["peer"], pending)
    except Rejected as exc:
        if session.pending is not None and session.retries_left <= 0:
            session.pending = None
            session._fail(exc.verdict.value)
        raise
    if pending["step"] == "M1":
        return _patient_emit_m2(session, now, rng, pending.get("group"), pending.get("secret"))
    return _mp_emit_m3(session, pending, now, rng, pending.get("secret"))


# ---------------------------------------------------------------------------
# vitals


def send_vitals(session: _Session, readings, now: int, rng: random.Random) -> Envelope:
    if not session.established:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    header = session.pid.id_bytes + session.peer_pid.id_bytes
    payload = json.dumps(readings, sort_keys=True, separators=(",", ":")).encode()
    ct = crypto.session_encrypt(session.shared_key, payload, session.next_ts(now), rng, aad=header)
    return Envelope(Kind.SESSION_DATA, header, ct)


def receive_vitals(session: _Session, envelope: Envelope, now: int):
    if not session.established:
        raise Rejected(RejectReason.WRONG_STATE, detail=session.state.value)
    try:
        payload, ts = crypto.session_decrypt(session.shared_key, envelope.ciphertext,
                                             aad=envelope.header)
    except AuthFailure as exc:
        raise Rejected(RejectReason.AUTH_FAILURE, detail=str(exc)) from None
    if envelope.sender_id != session.peer_pid.id_bytes:
        raise Rejected(RejectReason.IDENTITY_MISMATCH, detail="vitals from unexpected PID")
    if not crypto.fresh(ts, now, session.window):
        raise Rejected(RejectReason.STALE_TIMESTAMP, detail=f"vitals ts={ts}")
    session.replay_cache.check(envelope.sender_id, ts, now)
    return json.loads(payload)


# ---------------------------------------------------------------------------
# RA side channels


def build_escalation(reporter: PseudoId, suspect: PseudoId, ra_public: PublicKey, now: int,
                     rng: random.Random) -> Envelope:
    body = pack_fields(reporter.id_bytes, int(suspect.role), suspect.id_bytes, now)
    return Envelope(Kind.ESCALATION, b"", crypto.encrypt(ra_public, body, rng))


def ra_handle_escalation(directory: RaDirectory, envelope: Envelope, now: int,
                         window: int = crypto.DEFAULT_FRESHNESS_WINDOW) -> FilterPair:
    _, role, suspect, ts = unpack_fields(_open(directory.keys.private, envelope.ciphertext), 4)
    if not crypto.fresh(_int(ts), now, window):
        raise Rejected(RejectReason.STALE_TIMESTAMP, detail="escalation")
    return directory.resolve_escalation(PseudoId(Role(_int(role)), suspect))


def build_notification(recipient: PublicKey, event: str, subject: PseudoId | None, now: int,
                       rng: random.Random) -> Envelope:
    body = pack_fields(event.encode(), subject.id_bytes if subject else b"", now)
    return Envelope(Kind.NOTIFICATION, b"", crypto.encrypt(recipient, body, rng))


def read_notification(keypair: KeyPair, envelope: Envelope, now: int,
                      window: int = crypto.DEFAULT_FRESHNESS_WINDOW) -> tuple[str, bytes]:
    event, subject, ts = unpack_fields(_open(keypair.private, envelope.ciphertext), 3)
    if not crypto.fresh(_int(ts), now, window):
        raise Rejected(RejectReason.STALE_TIMESTAMP, detail="notification")
    return event.decode(), subject


def broadcast_envelope(pair: FilterPair) -> Envelope:
    return Envelope(Kind.FILTER_BROADCAST, b"", pair.to_bytes())
