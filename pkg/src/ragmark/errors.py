"""Exception hierarchy shared across the toolkit."""


class RagmarkError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RagmarkError):
    """An argument violated a documented precondition."""


class NotFoundError(RagmarkError):
    """A referenced record id does not exist."""


class ConflictError(RagmarkError):
    """An explicit id collides with an existing record."""


class StoreParseError(RagmarkError):
    """A persisted knowledge base could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyKnowledgeBaseError(RagmarkError):
    """Retrieval was attempted against a base with no records."""


class GatewayError(RagmarkError):
    """An LLM backend call failed after retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class IndeterminateReplyError(RagmarkError):
    """A yes/no judge returned something that is neither."""


class ExtractionUnderflowError(RagmarkError):
    """Fewer distinct entities or relations were observed than requested."""

    def __init__(self, kind: str, requested: int, observed: int):
        super().__init__(
            f"need {requested} distinct {kind}, observed only {observed}"
        )
        self.kind = kind
        self.requested = requested
        self.observed = observed


class GenerationExhaustedError(RagmarkError):
    """The keyed chain ran out of fresh entity pairs before reaching the target."""

    def __init__(self, target: int, found: int, steps: int):
        super().__init__(
            f"chain exhausted after {steps} steps: {found}/{target} tuples"
        )
        self.target = target
        self.found = found
        self.steps = steps


class GenerationError(RagmarkError):
    """A generator reply could not be parsed into a watermark sentence."""
