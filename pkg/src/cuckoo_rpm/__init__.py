"""Filter-based revocation and authenticated key agreement for remote patient monitoring.

Modules:

* :mod:`~cuckoo_rpm.filter_core` - cuckoo filter with partial-key hashing
* :mod:`~cuckoo_rpm.registry` - registration authority, pseudo-IDs, signed filter pairs
* :mod:`~cuckoo_rpm.crypto` - key pairs, hybrid encryption, Diffie-Hellman, session channel
* :mod:`~cuckoo_rpm.handshake` - three-message patient / medical-professional handshake
* :mod:`~cuckoo_rpm.simnet` - deterministic network simulator with an intruder
* :mod:`~cuckoo_rpm.anomaly` - correlation rules for misbehaving sensors
"""

from .errors import RpmError
from .filter_core import CuckooFilter, FilterParams
from .registry import FilterPair, PseudoId, RaDirectory, Role, Status, Verdict, verdict_for

__all__ = [
    "CuckooFilter",
    "FilterPair",
    "FilterParams",
    "PseudoId",
    "RaDirectory",
    "Role",
    "RpmError",
    "Status",
    "Verdict",
    "verdict_for",
]

__version__ = "0.1.0"
