"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a model is defined."""


class HeadBoundError(DomainError):
    """A computed hydraulic head falls outside ``[h_min, h_max]``."""


class FitError(ValueError):
    """A least-squares fit is underdetermined or rank deficient."""


class BuildError(ValueError):
    """An optimization model could not be assembled from its inputs."""


class SolverError(RuntimeError):
    """An external or internal solver failed to produce a usable answer."""


class SearchSpaceError(ValueError):
    """A brute-force search would exceed its configured size bound."""
