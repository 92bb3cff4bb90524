"""Shared exception types for the pubtrack pipeline and service layer."""


class PubtrackError(Exception):
    """Base class for all pubtrack errors."""


# --- ingest -----------------------------------------------------------------

class MissingRequiredColumn(PubtrackError):
    def __init__(self, name: str):
        super().__init__(f"required column missing from CSV header: {name!r}")
        self.name = name


class RowParseError(PubtrackError):
    """A single malformed CSV row. Reported and skipped, never fatal."""

    def __init__(self, row_index: int, cause: str):
        super().__init__(f"row {row_index}: {cause}")
        self.row_index = row_index
        self.cause = cause


class ProviderUnavailable(PubtrackError):
    """A network provider (enrichment, embedding, LLM) could not be reached."""


class MalformedMappingFile(PubtrackError):
    """Offline enrichment mapping CSV is unreadable or has a bad schema."""


# --- embed ------------------------------------------------------------------

class DimensionMismatch(PubtrackError):
    """External embedding provider returned vectors of inconsistent length."""


# --- reduce / cluster -------------------------------------------------------

class TooFewPoints(PubtrackError):
    pass


class NonFiniteInput(PubtrackError):
    pass


class IdSetMismatch(PubtrackError):
    pass


# --- topics -----------------------------------------------------------------

class EmptyVocabulary(PubtrackError):
    """All documents tokenized to nothing; no keywords can be extracted."""


# --- metrics ----------------------------------------------------------------

class UnknownResearcher(PubtrackError):
    def __init__(self, researcher_id: str):
        super().__init__(f"unknown researcher: {researcher_id!r}")
        self.researcher_id = researcher_id


# --- report -----------------------------------------------------------------

class EmptySelection(PubtrackError):
    """Report scope selected no publications."""


class OverTokenBudget(PubtrackError):
    def __init__(self, estimate: int, limit: int):
        super().__init__(f"prompt estimated at {estimate} tokens exceeds hard limit {limit}")
        self.estimate = estimate
        self.limit = limit


class EndpointUnreachable(PubtrackError):
    pass


class HttpError(PubtrackError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class RateLimited(PubtrackError):
    def __init__(self, retry_after: float | None = None):
        msg = "rate limited by LLM endpoint"
        if retry_after is not None:
            msg += f" (retry after {retry_after}s)"
        super().__init__(msg)
        self.retry_after = retry_after


# --- server -----------------------------------------------------------------

class ArtifactUnreadable(PubtrackError):
    pass
