"""Exception and warning types raised across the package."""


class NonFiniteState(FloatingPointError):
    """A time integration produced NaN or Inf (usually dt is too large)."""


class NegativeState(RuntimeWarning):
    """The computed state dipped below zero beyond round-off."""


class InfeasibleVolume(ValueError):
    pass


class StalledLineSearch(RuntimeError):
    pass


class DegenerateSupport(ValueError):
    """The support set is too small to deflate the requested low modes."""


class ResolutionExceeded(ValueError):
    """Time step too coarse to resolve the exp(-K^2 t) corrector layer."""


class HypothesisViolation(ValueError):
    """A sampled structural assumption on a model failed."""


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
