"""
Exception hierarchy shared by every module of the lab.

The CLI maps these onto exit codes; library code raises them with messages
naming the offending value.
"""


class TTTLabError(Exception):
    """Base class for all errors raised by the lab"""


class ShapeError(TTTLabError, ValueError):
    """Dimension mismatch or empty dimension"""


class DomainError(TTTLabError, ValueError):
    """Argument outside the mathematical domain of an operation"""


class UnsupportedRegimeError(TTTLabError):
    """A theory formula or step-size policy was asked for outside its regime"""


class ConfigParseError(TTTLabError):
    """
    Raised while reading a flat `key = value` experiment config.

    Args:
        message: Human-readable reason
        line: 1-based line number in the config file (None if not line-bound)
        key: Offending key (None if the line could not be tokenised)
    """

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key is not None:
            location.append(f"key '{key}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")
