"""Exception types raised across the package."""


class SensauditError(Exception):
    """Base class for all errors raised by sensaudit."""


class CorpusError(SensauditError, ValueError):
    pass


class InfeasibleSpecError(SensauditError, ValueError):
    pass


class LabelInputError(SensauditError, ValueError):
    """Raised when an encounter table cannot be parsed; carries the line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMetricError(SensauditError, ValueError):
    """A metric is undefined for the given input (single class, zero variance, ...)."""


class UndefinedScoreError(SensauditError, ValueError):
    """Sensitivity is undefined because the token never occurs in the corpus."""

    def __init__(self, token):
        self.token = token
        super().__init__(f"token {token!r} does not occur in the corpus; sensitivity is undefined")


class ProtocolError(SensauditError):
    """The remote side violated the line-delimited wire protocol."""


class RemoteTimeout(SensauditError, TimeoutError):
    pass


class ProviderError(SensauditError):
    """A replacement provider failed to answer."""


class ClassifierCallError(SensauditError):
    """A classifier failed while scoring a (possibly perturbed) note."""

    def __init__(self, message, note_id=None, token=None, filter_index=None):
        self.note_id = note_id
        self.token = token
        self.filter_index = filter_index
        super().__init__(message)


class ReplayMissError(SensauditError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
