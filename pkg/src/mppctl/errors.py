"""Exception hierarchy for mppctl."""


class MppControlError(ValueError):
    pass


class BoundViolation(MppControlError):
    pass


class MalformedDistribution(MppControlError):
    pass


class BadGrid(MppControlError):
    pass


class NoRoot(MppControlError):
    pass


class OutOfHorizon(MppControlError):
    pass


class OutOfRange(MppControlError):
    pass


class StepTooLarge(MppControlError):
    pass


class NoConvergence(MppControlError):
    pass


class BetaTooSmall(MppControlError):
    pass


class TooManyPolicies(MppControlError):
    pass
