"""Exception hierarchy shared across the package.

Two broad families matter to the CLI: input problems (bad corpus files,
unparseable methods, bad config) exit with code 2, numeric failures
(non-finite losses, SVD non-convergence) exit with code 3.
"""


class PatchGraphError(Exception):
    pass


class InputError(PatchGraphError):
    """Problems with user-supplied data or configuration."""


class NumericError(PatchGraphError):
    """Failures inside numeric routines."""


# corpus
class MalformedCorpus(InputError):
    pass


class DuplicateId(InputError):
    pass


class UnknownLabel(InputError):
    pass


class TooFewRecords(InputError):
    pass


# lexer / parser
class UnterminatedComment(InputError):
    pass


class UnterminatedStringLiteral(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, line=None, col=None):
        if line is not None:
            message = f"{message} (line {line}, col {col})"
        super().__init__(message)
        self.line = line
        self.col = col


class UnsupportedConstruct(InputError):
    pass


# graph
class EmptyGraph(InputError):
    pass


# attributes
class EmptyLine(InputError):
    pass


class BothEmpty(InputError):
    pass


class NoPatchNode(InputError):
    pass


class VariableNotInStatement(InputError):
    pass


# tensor / numerics
class ShapeMismatch(NumericError):
    pass


class NonFiniteInput(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class RankTooLarge(NumericError):
    pass


class SvdFailure(NumericError):
    pass


class DegenerateColumn(NumericError):
    pass


# model
class SequenceTooLong(InputError):
    pass


class EmptyPrompt(InputError):
    pass


# training
class EmptyInput(InputError):
    pass


class NonFiniteLoss(NumericError):
    pass
