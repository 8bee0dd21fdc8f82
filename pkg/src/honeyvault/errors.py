"""Exception hierarchy shared by every module."""


class HoneyVaultError(Exception):
    """Base class for domain errors (mapped to exit code 1 by the CLI)."""


class DimensionError(HoneyVaultError, ValueError):
    pass


class RankDeficiencyError(HoneyVaultError):
    pass


class DegenerateInputError(HoneyVaultError, ValueError):
    """Zero vectors, coincident point sets and similar unusable inputs."""


class ExhaustionError(HoneyVaultError):
    """Rejection sampling ran out of attempts before reaching the requested count."""


class FormatError(HoneyVaultError, ValueError):
    """Malformed HFM1 / HFV1 / HFC1 bytes."""


class DuplicateUsernameError(HoneyVaultError, ValueError):
    pass


class UnknownUserError(HoneyVaultError, KeyError):
    pass


class InsufficientSamplesError(HoneyVaultError, ValueError):
    pass
