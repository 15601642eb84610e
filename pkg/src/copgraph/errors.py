"""Exception hierarchy shared by every copgraph module."""


class CopgraphError(Exception):
    """Base class; ``category`` is the machine-parsable tag printed by the CLI."""

    category = "error"


class ParseError(CopgraphError, ValueError):
    category = "parse-error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(CopgraphError, ValueError):
    category = "empty-dataset"


class ContractViolation(CopgraphError, ValueError):
    category = "contract-violation"


class DimensionMismatch(ContractViolation):
    category = "dimension-mismatch"


class ConfigError(CopgraphError, ValueError):
    category = "config-error"


class UnknownItemError(CopgraphError, KeyError):
    category = "unknown-item"

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown item"


class MissingEmbeddingError(CopgraphError, KeyError):
    category = "missing-embedding"

    def __str__(self):
        return str(self.args[0]) if self.args else "missing embedding"


class ModelFormatError(CopgraphError):
    category = "model-format"


class VersionError(ModelFormatError):
    category = "version-mismatch"


class ChecksumError(ModelFormatError):
    category = "checksum-failure"


class TruncatedFileError(ModelFormatError):
    category = "truncated-file"
