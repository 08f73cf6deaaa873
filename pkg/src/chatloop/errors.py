"""Exception types shared across the pipeline."""


class ChatloopError(Exception):
    """Base class for all package errors."""


class EndpointUnreachable(ChatloopError):
    """A remote endpoint failed after all retries were exhausted."""


class MalformedResponse(ChatloopError):
    """The wire payload from an endpoint could not be decoded."""


class LogprobsUnsupported(ChatloopError):
    """Token log-probabilities were requested from an endpoint that cannot provide them."""


class DuplicateScript(ChatloopError):
    """A stub script id is already registered."""


class InvalidScript(ChatloopError):
    """A stub script violates its invariants (e.g. no catch-all rule)."""


class UnparseableCritique(ChatloopError):
    """Fewer than three score fields were recoverable from critic output."""


class EmptyTrainingSet(ChatloopError):
    """An export was requested for a training set with no easy dialogues."""


class NoScoredTurns(ChatloopError):
    """Regeneration statistics were requested for a corpus without scored turns."""


class GenerationExhausted(ChatloopError):
    """Persona generation could not produce enough valid records after retries."""


class InvalidSplit(ChatloopError):
    """Requested split group counts do not sum to the dataset's group count."""


class SessionNotFound(ChatloopError):
    """Arena session id does not exist."""


class SessionClosed(ChatloopError):
    """Arena session already received its vote."""


class AlreadyVoted(ChatloopError):
    """A second vote was submitted for an arena session."""


class NoExchanges(ChatloopError):
    """A vote was submitted before any message exchange."""


class NoVotes(ChatloopError):
    """A tally was requested but the vote store is empty."""


class TrainerFailed(ChatloopError):
    """The external fine-tuning command exited with a failure."""


class ManifestError(ChatloopError):
    """A run manifest is missing, corrupt, or inconsistent with its artifacts."""
