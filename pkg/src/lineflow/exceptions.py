"""Exception types raised across the tracker."""


class LineFlowError(Exception):
    """Base class for all errors raised by lineflow."""


class DimensionTooSmall(LineFlowError, ValueError):
    pass


class OutOfBounds(LineFlowError, IndexError):
    """A sample or window would read outside the image."""


class DegenerateSegment(LineFlowError, ValueError):
    pass


class SegmentTooShort(LineFlowError, ValueError):
    pass


class NotARotation(LineFlowError, ValueError):
    pass


class PointAtInfinity(LineFlowError, ArithmeticError):
    pass


class SingularWarp(LineFlowError, ArithmeticError):
    pass


class SingularSystem(LineFlowError, ArithmeticError):
    pass


class AlignmentFailure(LineFlowError):
    """Alignment of one line failed; ``reason`` is a short machine tag."""

    def __init__(self, reason, message=""):
        super().__init__(message or reason)
        self.reason = reason


class MaxIterations(AlignmentFailure):
    def __init__(self, message=""):
        super().__init__("max_iterations", message)


class TooFewPoints(AlignmentFailure):
    def __init__(self, message=""):
        super().__init__("too_few_points", message)


class LineLost(AlignmentFailure):
    def __init__(self, message=""):
        super().__init__("line_lost", message)


class NotInitialized(LineFlowError, RuntimeError):
    pass


class FrameOutOfRange(LineFlowError, IndexError):
    pass


class FrameMismatch(LineFlowError, ValueError):
    pass


class SceneSpecError(LineFlowError, ValueError):
    pass


class ConfigError(LineFlowError, ValueError):
    pass
