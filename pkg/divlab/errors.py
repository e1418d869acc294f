"""Exception hierarchy shared by every divlab module."""


class DivlabError(Exception):
    """Base class for all domain errors raised by divlab."""


class AssemblyError(DivlabError):
    """Problem in assembly source, located by line and column (1-based)."""

    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" if column is None else f"line {line}, column {column}"
            message = f"{where}: {message}"
        super().__init__(message)


class AssemblySyntaxError(AssemblyError):
    pass


class UnresolvedLabelError(AssemblyError):
    pass


class DuplicateSymbolError(AssemblyError):
    pass


class ProgramError(DivlabError):
    """A Program violates a structural invariant."""


class EncodingError(DivlabError):
    pass


class DecodeError(DivlabError):
    pass


class ConfigError(DivlabError):
    pass


class MetricError(DivlabError):
    pass


class PopulationError(DivlabError):
    pass
