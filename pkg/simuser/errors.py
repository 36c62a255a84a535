#!/usr/bin/env python
#
# errors.py - Exception types raised by simuser.
#
"""Exception hierarchy for the ``simuser`` package. Every error raised on
purpose by simuser code derives from :class:`SimUserError`, so callers
(e.g. the simulation worker loop) can tell domain failures apart from
programming errors.
"""


class SimUserError(Exception):
    """Base class for all simuser errors. """


class ValidationError(SimUserError, ValueError):
    """Raised when a value or input file violates a documented rule. """


class ParseError(ValidationError):
    """Raised when a row of an input file cannot be parsed. The offending
    (1-based, header included) line number is stored in ``lineno``.
    """
    def __init__(self, msg, lineno=None, filename=None):
        if lineno is not None:
            msg = '{} (line {})'.format(msg, lineno)
        if filename is not None:
            msg = '{}: {}'.format(filename, msg)
        super().__init__(msg)
        self.lineno   = lineno
        self.filename = filename


class InsufficientDataError(SimUserError):
    """Raised when there are not enough interactions for an operation. """


class UndefinedAggregateError(SimUserError):
    """Raised when an average is requested over zero ratings. """


class TemplateError(SimUserError):
    """Raised when a prompt template is unknown, or is rendered without all
    of its placeholders bound.
    """


class LlmFormatError(SimUserError):
    """Raised when an LLM reply still violates its output schema after the
    single re-prompt.
    """
    def __init__(self, msg, tag=None, raw_text=None):
        super().__init__(msg)
        self.tag      = tag
        self.raw_text = raw_text


class LlmTransportError(SimUserError):
    """Raised when an LLM or embedding provider cannot be reached. """


class ScriptExhaustedError(SimUserError):
    """Raised by the scripted backend when no rule can answer a call. """


class NoThumbnailError(SimUserError):
    """Raised when a caption is requested for an item without a thumbnail. """


class SimilarityUndefinedError(SimUserError):
    """Raised when a path similarity has a zero denominator. """


class TrainingDivergedError(SimUserError):
    """Raised when matrix factorisation training loss blows up. """


class EmptyReportError(SimUserError):
    """Raised when metrics are requested over zero usable records. """
