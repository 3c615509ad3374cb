"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class RescoreError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RescoreError):
    """Invalid configuration, arguments, or incompatible component wiring."""


class DataError(RescoreError):
    """Malformed or inconsistent input data."""


class NumericalError(RescoreError):
    """Numerical breakdown: non-finite values, failed decompositions."""


class CapabilityError(ConfigError):
    """A backend cannot answer the requested query pattern."""


class InvalidQueryError(DataError):
    """A query violates its structural invariants (e.g. position out of range)."""


class ScoringError(RescoreError):
    """A scorer failed while rescoring; carries the utterance and rank."""

    def __init__(self, utt_id: str, rank: int, cause: Exception):
        self.utt_id = utt_id
        self.rank = rank
        self.cause = cause
        super().__init__(f"scoring failed for utterance {utt_id!r} rank {rank}: {cause}")


class RemoteConnectError(RescoreError):
    """Could not reach or keep a connection to the bridge server."""


class RemoteProtocolError(RescoreError):
    """The bridge spoke an incompatible protocol version or malformed frames."""


class RemoteServerError(RescoreError):
    """The bridge reported an application-level error for a request."""
