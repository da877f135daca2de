"""Exception types raised by quadric_detect."""


class QuadricError(Exception):
    """Base class for all library errors."""


class RankDeficient(QuadricError):
    """The constraint system does not have the rank needed for a unique fit."""

    def __init__(self, rank, expected, message=None):
        self.rank = rank
        self.expected = expected
        super().__init__(message or f"constraint system has rank {rank}, expected {expected}")


class DegenerateBasis(QuadricError):
    """A 3-point basis is collinear or its constraints coincide."""


class IllConditioned(QuadricError):
    """A candidate point does not constrain the solution family."""


class EmptyAccumulator(QuadricError):
    """Peak extraction was requested on an accumulator with no votes."""


class TooFewPoints(QuadricError):
    pass


class Exhausted(QuadricError):
    """No fresh valid basis could be drawn within the retry budget."""


class SurfaceNotFound(QuadricError):
    pass


class GenerationTimeout(QuadricError):
    """Random quadric generation could not satisfy the class filter."""


class ParseError(QuadricError):
    """Malformed point-cloud file. ``location`` is a line number or byte offset."""

    def __init__(self, message, location=None):
        self.location = location
        self.message = message
        super().__init__(f"{message} at {location}" if location else message)


class UnsupportedFormat(QuadricError):
    pass
