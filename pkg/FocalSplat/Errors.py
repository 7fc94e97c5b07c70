"""
Exceptions raised by FocalSplat.

Everything we raise on purpose derives from FocalSplatError, so callers
(and the command line) can tell our failures from programming errors.
"""


class FocalSplatError(Exception):
    """Base class for FocalSplat failures."""


class DomainError(FocalSplatError, ValueError):
    """An argument lies outside the domain of an operation."""


class NonFiniteLossError(DomainError):
    """An objective evaluated to nan or inf during fitting."""


class FormatError(FocalSplatError):
    """A file does not match the format we read."""


class ParseError(FormatError):
    """
    A text file failed to parse. Carries the location of the problem.
    """
    def __init__(self, message, path=None, line=None, column=None):
        self.message, self.path, self.line, self.column = \
            message, path, line, column
        FormatError.__init__(self, self.location() + message)

    def location(self):
        parts = []
        if self.path is not None: parts.append(str(self.path))
        if self.line is not None: parts.append('line %d' % self.line)
        if self.column is not None: parts.append('column %d' % self.column)
        return parts and ', '.join(parts) + ': ' or ''


class OverwriteError(FocalSplatError, FileExistsError):
    """A writer refused to replace an existing file."""
