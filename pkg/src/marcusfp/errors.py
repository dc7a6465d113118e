"""Exception types shared across the toolkit."""


class ZeroOfSigma(ValueError):
    """The noise coefficient vanishes at the requested point."""


class NonConvergence(RuntimeError):
    """Iterative inversion failed or the flow escapes to infinity."""


class SeriesDivergence(RuntimeError):
    """Truncated derivative series has an unacceptably large tail."""


class IllConditioned(RuntimeError):
    """Finite-difference estimates disagree beyond tolerance."""


class StepUnderflow(RuntimeError):
    """Adaptive ODE integration could not make progress."""


class GridTooCoarse(ValueError):
    """Jump pullback displacement is too large for the spatial grid."""


class Instability(RuntimeError):
    """Time step produced runaway growth in the density."""


class EmptyEnsemble(ValueError):
    """No usable paths remain in the ensemble."""


class GridMismatch(ValueError):
    """Density grids being compared do not coincide."""


class UnsupportedReference(ValueError):
    """Unknown analytic reference density."""


class ConfigError(ValueError):
    """Invalid run configuration; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
