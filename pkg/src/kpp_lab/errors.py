"""Exception hierarchy shared by all kpp_lab modules."""


class KPPLabError(Exception):
    """Base class for every error raised by kpp_lab."""


class ConfigurationError(KPPLabError, ValueError):
    """Invalid parameters; ``path`` names the offending config field when known."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class HypothesisViolation(ConfigurationError):
    """A reaction term that cannot satisfy the KPP standing hypotheses."""


class PreconditionError(KPPLabError, ValueError):
    pass


class CFLError(KPPLabError):
    pass


class BlowupError(KPPLabError, FloatingPointError):
    def __init__(self, t, message="non-finite values in solution"):
        self.t = t
        super().__init__(f"{message} at t={t:.6g}")


class ConvergenceError(KPPLabError):
    def __init__(self, message, diagnostic=None):
        self.diagnostic = diagnostic
        super().__init__(message)


class DegenerateMediumError(KPPLabError):
    """The zero state is not linearly unstable, so no positive attractor or speed exists."""

    def __init__(self, lam):
        self.lam = lam
        super().__init__(
            f"degenerate medium: growth rate of u=0 is {lam:.6g} <= 0; "
            "the zero state must be linearly unstable"
        )


class ExtinctionError(KPPLabError):
    pass


class DomainTooSmallError(KPPLabError):
    pass
