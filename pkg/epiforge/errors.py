# Exit codes used by the command line front end:
#   1  a verification check failed
#   2  usage or configuration problem
#   3  numerical failure


class EpiforgeError(Exception):
    """Base class for every error raised by epiforge."""
    exit_code = 2


class ConfigError(EpiforgeError):
    """A scenario or settings file is missing, malformed or inconsistent."""
    pass


class InvalidDimension(EpiforgeError):
    pass


class InvalidSpec(EpiforgeError):
    pass


class InvalidSplit(EpiforgeError):
    pass


class CadenceMismatch(EpiforgeError):
    pass


class DimensionMismatch(EpiforgeError):
    pass


class ShapeMismatch(EpiforgeError):
    pass


class TimestampMismatch(EpiforgeError):
    pass


class ZeroPopulation(EpiforgeError):
    pass


class ParseError(EpiforgeError):
    """Raised for unreadable input files; `line` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = 'line %d: %s' % (line, message)
        super(ParseError, self).__init__(message)
        self.line = line


class NonMonotonicDates(ParseError):
    pass


class NegativeCount(ParseError):

    def __init__(self, message, row=None):
        super(NegativeCount, self).__init__(message, line=row)
        self.row = row


class NumericalError(EpiforgeError):
    """
    Base class for failures of the numerics themselves.

    `step` is filled in by the time-stepping loops when the failure happens
    inside a step, so callers can report where a run broke down.
    """
    exit_code = 3

    def __init__(self, message, step=None):
        super(NumericalError, self).__init__(message)
        self.step = step

    def __str__(self):
        message = super(NumericalError, self).__str__()
        if self.step is not None:
            return 'step %d: %s' % (self.step, message)
        return message


class NonFiniteState(NumericalError):

    def __init__(self, message, step=None, layer=None):
        if layer is not None:
            message = 'layer %d: %s' % (layer, message)
        super(NonFiniteState, self).__init__(message, step=step)
        self.layer = layer


class NoConvergence(NumericalError):

    def __init__(self, message, residual_norm=None, iterations=None, step=None):
        if residual_norm is not None:
            message = '%s (residual norm %r after %s iterations)' % (message, residual_norm, iterations)
        super(NoConvergence, self).__init__(message, step=step)
        self.residual_norm = residual_norm
        self.iterations = iterations


class NonPositivePopulation(NumericalError):
    pass


class NonFiniteGradient(NumericalError):

    def __init__(self, parameter):
        super(NonFiniteGradient, self).__init__('non-finite gradient for parameter %s' % parameter)
        self.parameter = parameter


class DivergedTraining(NumericalError):

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = 'epoch %d: %s' % (epoch, message)
        super(DivergedTraining, self).__init__(message)
        self.epoch = epoch


def with_step(err, step):
    '''
    Attach the failing step index to a numerical error and hand it back for
    re-raising. An index already recorded by an inner loop is kept.
    '''
    if isinstance(err, NumericalError) and err.step is None:
        err.step = step
    return err
