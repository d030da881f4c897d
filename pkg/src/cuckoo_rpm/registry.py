"""Registration authority directory and verifier-side membership verdicts.

The RA keeps, per role, an authoritative positive filter (active pseudo-IDs)
and negative filter (revoked pseudo-IDs). Verifiers only ever see signed,
epoch-numbered :class:`FilterPair` snapshots and combine the two lookups into
one of four verdicts.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import random
import struct
from dataclasses import dataclass, field

from . import crypto
from .crypto import KeyPair, PublicKey
from .errors import (
    AlreadyRevoked,
    Denied,
    DuplicateRegistration,
    FilterFull,
    MalformedSnapshot,
    NotFound,
    UnknownPid,
)
from .filter_core import CuckooFilter, FilterParams

log = logging.getLogger(__name__)

PID_SIZE = 16


class Role(enum.IntEnum):
    MEDICAL_PROFESSIONAL = 0
    PATIENT = 1

    @property
    def short(self) -> str:
        return "mp" if self is Role.MEDICAL_PROFESSIONAL else "p"

    @classmethod
    def parse(cls, text: str) -> "Role":
        key = text.strip().lower().replace("-", "_")
        aliases = {"mp": cls.MEDICAL_PROFESSIONAL, "medical_professional": cls.MEDICAL_PROFESSIONAL,
                   "medicalprofessional": cls.MEDICAL_PROFESSIONAL, "p": cls.PATIENT,
                   "patient": cls.PATIENT}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown role {text!r}") from None


@dataclass(frozen=True)
class PseudoId:
    role: Role
    id_bytes: bytes

    def __post_init__(self):
        if len(self.id_bytes) != PID_SIZE:
            raise ValueError(f"pseudo-ID must be {PID_SIZE} bytes")

    @property
    def hex(self) -> str:
        return self.id_bytes.hex()

    def __str__(self) -> str:
        return f"{self.role.short}:{self.hex[:12]}"


class Verdict(enum.Enum):
    VALID = "Valid"
    MALICIOUS = "Malicious"
    AWAIT_UPDATE = "AwaitUpdate"
    ESCALATE_TO_RA = "EscalateToRA"


# (positive-filter hit, negative-filter hit) -> verdict
VERDICTS = {
    (True, False): Verdict.VALID,
    (False, True): Verdict.MALICIOUS,
    (False, False): Verdict.AWAIT_UPDATE,
    (True, True): Verdict.ESCALATE_TO_RA,
}


def verdict_for(pcf_hit: bool, ncf_hit: bool) -> Verdict:
    return VERDICTS[bool(pcf_hit), bool(ncf_hit)]


class Status(enum.Enum):
    ACTIVE = "Active"
    REVOKED = "Revoked"
    DEPARTED = "Departed"


EXPECTED_VERDICT = {
    Status.ACTIVE: Verdict.VALID,
    Status.REVOKED: Verdict.MALICIOUS,
    Status.DEPARTED: Verdict.AWAIT_UPDATE,
}


# ---------------------------------------------------------------------------
# filter pairs


@dataclass
class FilterPair:
    role: Role
    pcf: CuckooFilter
    ncf: CuckooFilter
    epoch: int
    signature: bytes = b""

    def signed_bytes(self) -> bytes:
        pcf, ncf = self.pcf.to_bytes(), self.ncf.to_bytes()
        return b"".join([
            struct.pack("<BQ", int(self.role), self.epoch),
            struct.pack("<I", len(pcf)), pcf,
            struct.pack("<I", len(ncf)), ncf,
        ])

    def to_bytes(self) -> bytes:
        return self.signed_bytes() + struct.pack("<I", len(self.signature)) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "FilterPair":
        try:
            role, epoch = struct.unpack_from("<BQ", data)
            off = 9
            sections = []
            for _ in range(3):
                (ln,) = struct.unpack_from("<I", data, off)
                off += 4
                if off + ln > len(data):
                    raise MalformedSnapshot("section overruns buffer")
                sections.append(data[off:off + ln])
                off += ln
            if off != len(data):
                raise MalformedSnapshot("trailing bytes after signature")
            return cls(
                Role(role),
                CuckooFilter.from_bytes(sections[0]),
                CuckooFilter.from_bytes(sections[1]),
                epoch,
                sections[2],
            )
        except (struct.error, ValueError) as exc:
            if isinstance(exc, MalformedSnapshot):
                raise
            raise MalformedSnapshot(str(exc)) from exc

    def lookups(self, pid: PseudoId) -> tuple[bool, bool]:
        return self.pcf.lookup(pid.id_bytes), self.ncf.lookup(pid.id_bytes)


def classify(pid: PseudoId, pair: FilterPair) -> Verdict:
    """Four-way verdict; the caller is responsible for having verified ``pair``."""
    return verdict_for(*pair.lookups(pid))


def verify_pair(pair: FilterPair, ra_public: PublicKey, current_epoch: int | None = None) -> bool:
    if current_epoch is not None and pair.epoch <= current_epoch:
        return False
    return crypto.verify(ra_public, pair.signed_bytes(), pair.signature)


class PairReceiver:
    """Verifier-side store of the latest accepted pair per role."""

    def __init__(self, ra_public: PublicKey):
        self.ra_public = ra_public
        self.pairs: dict[Role, FilterPair] = {}

    def epoch(self, role: Role) -> int:
        pair = self.pairs.get(role)
        return pair.epoch if pair else 0

    def accept(self, pair: FilterPair) -> bool:
        if not verify_pair(pair, self.ra_public, self.epoch(pair.role)):
            return False
        self.pairs[pair.role] = pair
        return True

    def classify(self, pid: PseudoId) -> Verdict:
        pair = self.pairs.get(pid.role)
        if pair is None:
            return Verdict.AWAIT_UPDATE
        return classify(pid, pair)


# ---------------------------------------------------------------------------
# directory


@dataclass
class Principal:
    pid: PseudoId
    real_identity: str
    username: str
    keypair: KeyPair
    status: Status
    salt: bytes = field(repr=False)
    verifier: bytes = field(repr=False)
    assigned_mp: PseudoId | None = None
    nodes: set[str] = field(default_factory=set)


def default_params() -> dict[Role, FilterParams]:
    return {role: FilterParams(bucket_count=64) for role in Role}


class RaDirectory:
    """The RA's authoritative state: principals, filters, published epochs and audit log.

    All randomness (pseudo-IDs, keys, salts, hash seeds) comes from ``rng``.
    """

    RESEED_ATTEMPTS = 256

    def __init__(
        self,
        rng: random.Random,
        params: dict[Role, FilterParams] | None = None,
        key_bits: int = crypto.TEST_KEY_BITS,
        kdf_iterations: int = 1000,
        ra_keys: KeyPair | None = None,
    ):
        self.rng = rng
        self.key_bits = key_bits
        self.kdf_iterations = kdf_iterations
        self.keys = ra_keys or crypto.generate_keypair(rng, key_bits)
        base = params or default_params()
        self.principals: dict[PseudoId, Principal] = {}
        self._order: list[PseudoId] = []
        self.pcf: dict[Role, CuckooFilter] = {}
        self.ncf: dict[Role, CuckooFilter] = {}
        for role in Role:
            p = base[role]
            self.pcf[role] = self._new_filter(p.with_seed(rng.getrandbits(64)))
            self.ncf[role] = self._new_filter(p.with_seed(rng.getrandbits(64)))
        self.epoch = {role: 0 for role in Role}
        self.published: dict[Role, list[FilterPair]] = {role: [] for role in Role}
        self.audit_log: list[dict] = []

    @property
    def public_key(self) -> PublicKey:
        return self.keys.public

    def _new_filter(self, params: FilterParams) -> CuckooFilter:
        return CuckooFilter(params, rng=random.Random(self.rng.getrandbits(64)))

    def _audit(self, event: str, pid: PseudoId | None = None, **detail) -> None:
        entry = {"seq": len(self.audit_log), "event": event}
        if pid is not None:
            entry["role"] = pid.role.short
            entry["pid"] = pid.hex
        entry.update(detail)
        self.audit_log.append(entry)

    # -- lookups ---------------------------------------------------------

    def get(self, pid: PseudoId) -> Principal:
        try:
            return self.principals[pid]
        except KeyError:
            raise UnknownPid(str(pid)) from None

    def principals_of(self, role: Role) -> list[Principal]:
        return [self.principals[pid] for pid in self._order if pid.role is role]

    def members(self, role: Role, status: Status) -> list[PseudoId]:
        return [p.pid for p in self.principals_of(role) if p.status is status]

    def real_identity_of(self, pid: PseudoId) -> str:
        """Trace a pseudo-ID back to its holder; only the RA can do this."""
        return self.get(pid).real_identity

    def public_key_of(self, pid: PseudoId) -> PublicKey:
        return self.get(pid).keypair.public

    def status_of(self, pid: PseudoId) -> Status:
        return self.get(pid).status

    def authoritative_pair(self, role: Role) -> FilterPair:
        """Unsigned view of the live filters (no epoch bump)."""
        return FilterPair(role, self.pcf[role], self.ncf[role], self.epoch[role])

    def classify(self, pid: PseudoId) -> Verdict:
        return verdict_for(self.pcf[pid.role].lookup(pid.id_bytes),
                           self.ncf[pid.role].lookup(pid.id_bytes))

    def mismatches(self, role: Role, pcf=None, ncf=None) -> set[PseudoId]:
        """Principals whose authoritative verdict disagrees with their status."""
        pcf = self.pcf[role] if pcf is None else pcf
        ncf = self.ncf[role] if ncf is None else ncf
        bad = set()
        for pr in self.principals_of(role):
            v = verdict_for(pcf.lookup(pr.pid.id_bytes), ncf.lookup(pr.pid.id_bytes))
            if v is not EXPECTED_VERDICT[pr.status]:
                bad.add(pr.pid)
        return bad

    # -- filter maintenance ---------------------------------------------

    def _filter_members(self, role: Role, negative: bool) -> list[PseudoId]:
        return self.members(role, Status.REVOKED if negative else Status.ACTIVE)

    def _build(self, role: Role, negative: bool, params: FilterParams) -> CuckooFilter:
        while True:
            cf = self._new_filter(params)
            try:
                for pid in self._filter_members(role, negative):
                    cf.insert(pid.id_bytes)
                return cf
            except FilterFull:
                params = params.doubled()
                log.info("rebuild of %s filter full; doubling to m=%d",
                         role.short, params.bucket_count)

    def _install(self, role: Role, negative: bool, cf: CuckooFilter) -> None:
        (self.ncf if negative else self.pcf)[role] = cf

    def _insert(self, role: Role, negative: bool, pid: PseudoId) -> None:
        cf = (self.ncf if negative else self.pcf)[role]
        try:
            cf.insert(pid.id_bytes)
        except FilterFull:
            # Members list already includes pid (status updated first).
            params = cf.params.doubled()
            self._install(role, negative, self._build(role, negative, params))
            self._audit("rebuild", role=role.short, negative=negative,
                        bucket_count=params.bucket_count)

    def _reseed(self, role: Role, negative: bool, must_fix: set[PseudoId]) -> bool:
        """Rebuild one filter under a fresh hash seed so ``must_fix`` no longer hit it.

        A candidate seed is accepted only if it introduces no new mismatch for any
        other principal. Returns False (leaving the filter untouched) when the
        search is exhausted.
        """
        before = self.mismatches(role)
        current = (self.ncf if negative else self.pcf)[role]
        for _ in range(self.RESEED_ATTEMPTS):
            cand = self._build(role, negative, current.params.with_seed(self.rng.getrandbits(64)))
            pcf, ncf = (self.pcf[role], cand) if negative else (cand, self.ncf[role])
            after = self.mismatches(role, pcf, ncf)
            # Each filter is judged on its own hits: a PID colliding in both filters
            # stays a mismatch until the second filter is reseeded too.
            if not any(cand.lookup(pid.id_bytes) for pid in must_fix) and after <= before:
                self._install(role, negative, cand)
                self._audit("reseed", role=role.short, negative=negative,
                            hash_seed=cand.params.hash_seed)
                return True
        log.warning("reseed of %s %s filter exhausted %d attempts", role.short,
                    "negative" if negative else "positive", self.RESEED_ATTEMPTS)
        return False

    def _purge_departed(self, role: Role) -> None:
        # A departed pseudo-ID that collides with a live fingerprint would read as
        # Valid or Malicious to every verifier and never escalate.
        for negative in (False, True):
            cf = (self.ncf if negative else self.pcf)[role]
            hit = {pid for pid in self.members(role, Status.DEPARTED) if cf.lookup(pid.id_bytes)}
            if hit:
                self._reseed(role, negative, hit)

    # -- lifecycle -------------------------------------------------------

    def _fresh_pid(self, role: Role) -> PseudoId:
        while True:
            pid = PseudoId(role, self.rng.randbytes(PID_SIZE))
            if pid not in self.principals:
                return pid

    def _hash_password(self, password: str, salt: bytes) -> bytes:
        return hashlib.pbkdf2_hmac("sha256", password.encode(), salt, self.kdf_iterations)

    def _by_username(self, username: str) -> Principal | None:
        for pid in reversed(self._order):
            pr = self.principals[pid]
            if pr.username == username and pr.status is not Status.DEPARTED:
                return pr
        return None

    def register(
        self, role: Role, real_identity: str, password: str, username: str | None = None
    ) -> tuple[PseudoId, KeyPair]:
        username = username or real_identity
        for pr in self.principals_of(role):
            if pr.real_identity == real_identity and pr.status is not Status.DEPARTED:
                raise DuplicateRegistration(f"identity already {pr.status.value}")
        if self._by_username(username) is not None:
            raise DuplicateRegistration("username in use")
        pid = self._fresh_pid(role)
        keypair = crypto.generate_keypair(self.rng, self.key_bits)
        salt = self.rng.randbytes(16)
        self.principals[pid] = Principal(
            pid, real_identity, username, keypair, Status.ACTIVE,
            salt, self._hash_password(password, salt),
        )
        self._order.append(pid)
        self._insert(role, False, pid)
        self._audit("register", pid)
        self._purge_departed(role)
        return pid, keypair

    def revoke(self, pid: PseudoId) -> list[PseudoId]:
        """Move ``pid`` from the positive to the negative filter.

        For a medical professional, returns the patients who were assigned to
        them (the RA notifies and reassigns them).
        """
        pr = self.get(pid)
        if pr.status is Status.REVOKED:
            raise AlreadyRevoked(str(pid))
        if pr.status is Status.DEPARTED:
            raise UnknownPid(f"{pid} has departed")
        pr.status = Status.REVOKED
        self.pcf[pid.role].delete(pid.id_bytes)
        self._insert(pid.role, True, pid)
        self._audit("revoke", pid)
        self._purge_departed(pid.role)
        return self._release_patients(pid)

    def deregister(self, pid: PseudoId) -> list[PseudoId]:
        pr = self.get(pid)
        if pr.status is Status.DEPARTED:
            raise UnknownPid(f"{pid} already departed")
        negative = pr.status is Status.REVOKED
        pr.status = Status.DEPARTED
        try:
            (self.ncf if negative else self.pcf)[pid.role].delete(pid.id_bytes)
        except NotFound:  # pragma: no cover - authoritative filters have no false negatives
            log.error("departing %s was missing from its filter", pid)
        pr.nodes.clear()
        self._audit("deregister", pid)
        self._purge_departed(pid.role)
        return self._release_patients(pid)

    def _release_patients(self, mp_pid: PseudoId) -> list[PseudoId]:
        if mp_pid.role is not Role.MEDICAL_PROFESSIONAL:
            return []
        released = []
        for pr in self.principals_of(Role.PATIENT):
            if pr.assigned_mp == mp_pid:
                pr.assigned_mp = None
                released.append(pr.pid)
        return released

    def assign_mp(self, patient_pid: PseudoId, exclude: set[PseudoId] = frozenset()) -> PseudoId:
        """Current MP of an active patient, or the least-loaded active MP."""
        pr = self.get(patient_pid)
        if pr.assigned_mp is not None and self.principals[pr.assigned_mp].status is Status.ACTIVE \
                and pr.assigned_mp not in exclude:
            return pr.assigned_mp
        load: dict[PseudoId, int] = {}
        for mp in self.principals_of(Role.MEDICAL_PROFESSIONAL):
            if mp.status is Status.ACTIVE and mp.pid not in exclude:
                load[mp.pid] = 0
        if not load:
            raise Denied("no active medical professional available")
        for p in self.principals_of(Role.PATIENT):
            if p.assigned_mp in load and p.status is Status.ACTIVE:
                load[p.assigned_mp] += 1
        chosen = min(load, key=lambda m: load[m])  # dict order breaks ties by registration
        pr.assigned_mp = chosen
        self._audit("assign", patient_pid, mp=chosen.hex)
        return chosen

    def register_node(self, patient_pid: PseudoId, node_id: str) -> None:
        pr = self.get(patient_pid)
        if patient_pid.role is not Role.PATIENT:
            raise ValueError("sensor nodes belong to patients")
        pr.nodes.add(node_id)

    def patient_for_node(self, node_id: str) -> PseudoId:
        for pr in self.principals_of(Role.PATIENT):
            if node_id in pr.nodes:
                return pr.pid
        raise UnknownPid(f"no patient owns node {node_id!r}")

    # -- publication -----------------------------------------------------

    def publish_pair(self, role: Role) -> FilterPair:
        self.epoch[role] += 1
        pair = FilterPair(role, self.pcf[role].copy(), self.ncf[role].copy(), self.epoch[role])
        pair.signature = crypto.sign(self.keys.private, pair.signed_bytes())
        self.published[role].append(pair)
        self._audit("publish", role=role.short, epoch=pair.epoch)
        return pair

    def resolve_escalation(self, pid: PseudoId) -> FilterPair:
        """Settle a double hit reported by a verifier, then publish a fresh pair.

        The colliding filter is rebuilt under a new hash seed from the
        authoritative member list; deleting the shared fingerprint would evict
        a legitimate member.
        """
        pr = self.get(pid)
        role = pid.role
        pcf_hit = self.pcf[role].lookup(pid.id_bytes)
        ncf_hit = self.ncf[role].lookup(pid.id_bytes)
        if pr.status is Status.ACTIVE and ncf_hit:
            self._reseed(role, True, {pid})
        elif pr.status is Status.REVOKED and pcf_hit:
            self._reseed(role, False, {pid})
        elif pr.status is Status.DEPARTED:
            if pcf_hit:
                self._reseed(role, False, {pid})
            if ncf_hit:
                self._reseed(role, True, {pid})
        self._audit("escalation", pid, status=pr.status.value, verdict=self.classify(pid).value)
        return self.publish_pair(role)

    # -- authentication --------------------------------------------------

    def check_credential(self, username: str, password: str) -> PseudoId:
        pr = self._by_username(username)
        salt = pr.salt if pr else b"\0" * 16
        expected = pr.verifier if pr else b""
        ok = crypto.constant_time_equal(self._hash_password(password, salt), expected)
        if not ok or pr is None:
            raise Denied("bad credentials")
        if pr.status is not Status.ACTIVE:
            raise Denied(f"principal is {pr.status.value}")
        verdict = self.classify(pr.pid)
        if verdict is Verdict.ESCALATE_TO_RA:
            self.resolve_escalation(pr.pid)
            verdict = self.classify(pr.pid)
        if verdict is not Verdict.VALID:
            raise Denied(f"filter verdict {verdict.value}")
        return pr.pid
