"""Exception types shared across the package."""


class InstructForgeError(Exception):
    """Base class for every error raised by this package."""


class ParseError(InstructForgeError):
    """A task or config file is syntactically malformed."""


class ValidationError(InstructForgeError):
    """A value violates a documented invariant."""


class GatewayError(InstructForgeError):
    """Base class for text-generation backend failures."""


class TransportError(GatewayError):
    """Network or HTTP-level failure while talking to a live endpoint.

    This is the only error class the retry helper treats as transient.
    """


class BackendError(GatewayError):
    """The backend answered, but the answer is unusable."""


class ScriptExhausted(GatewayError):
    """A scripted backend has no response left for a request."""


class SeedShortfall(InstructForgeError):
    """Keyword seeding produced too few keywords after all retries."""


class EmptyCorpus(InstructForgeError):
    """An index operation was attempted over zero documents."""


class UnknownDocument(InstructForgeError):
    """A document id is not present in the index."""


class StageOrderError(InstructForgeError):
    """A pipeline stage was invoked out of order."""
