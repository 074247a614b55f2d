"""Exception hierarchy shared across the fleet components."""


class EdgeFleetError(Exception):
    """Base class for all errors raised by edgefleet."""


class MalformedField(EdgeFleetError, ValueError):
    pass


class MissingField(EdgeFleetError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class InsufficientData(EdgeFleetError):
    pass


class StorageFailure(EdgeFleetError, OSError):
    pass


class UnknownModelVersion(EdgeFleetError):
    pass


class EmptyInput(EdgeFleetError, ValueError):
    pass


class LengthMismatch(EdgeFleetError, ValueError):
    pass


class SingularSystem(EdgeFleetError):
    pass


class FormatVersionMismatch(EdgeFleetError):
    pass


class CorruptArtifact(EdgeFleetError):
    pass


class ArtifactVerificationFailed(EdgeFleetError):
    pass


class UnknownVersion(EdgeFleetError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class BrokerClosed(EdgeFleetError):
    pass


class WildcardInPublish(EdgeFleetError, ValueError):
    pass


class InvalidTopic(EdgeFleetError, ValueError):
    pass


class DecodeError(EdgeFleetError, ValueError):
    pass


class UnknownDevice(EdgeFleetError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ConfigError(EdgeFleetError, ValueError):
    pass
