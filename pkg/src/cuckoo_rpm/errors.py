"""Exception types shared across the package."""


class RpmError(Exception):
    """Base class for every error raised by cuckoo_rpm."""


# filter_core
class FilterFull(RpmError):
    """Insert gave up after the eviction bound; the filter is unchanged."""


class NotFound(RpmError, KeyError):
    pass


class MalformedSnapshot(RpmError, ValueError):
    pass


# registry
class DuplicateRegistration(RpmError):
    pass


class UnknownPid(RpmError, KeyError):
    pass


class AlreadyRevoked(RpmError):
    pass


class Denied(RpmError):
    pass


# crypto
class DecryptionFailure(RpmError):
    """Asymmetric ciphertext failed its integrity check (wrong key or tampering)."""


class AuthFailure(RpmError):
    """Authenticated symmetric ciphertext failed verification."""


class PeerValueOutOfRange(RpmError, ValueError):
    pass


# anomaly
class OutOfPhysicalRange(RpmError, ValueError):
    pass


# simnet / cli
class ConfigError(RpmError, ValueError):
    pass
