"""Exception hierarchy shared by every stage.

Anything derived from :class:`DataError` maps to CLI exit code 2.
"""


class DataError(Exception):
    """Input data could not be processed."""


class LexError(DataError):
    def __init__(self, message, line):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ParseError(DataError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}" if line is not None else message)


class IrParseError(ParseError):
    pass


class LinkError(DataError):
    pass


class CfgError(DataError):
    pass


class AnchorNotFound(DataError):
    pass


class DiffFormatError(DataError):
    pass


class CorpusFormatError(DataError):
    def __init__(self, message, record_id=None):
        self.record_id = record_id
        prefix = f"record {record_id}: " if record_id is not None else ""
        super().__init__(prefix + message)


class ShapeError(DataError):
    pass


class TrainingError(DataError):
    pass


class StageError(DataError):
    pass
