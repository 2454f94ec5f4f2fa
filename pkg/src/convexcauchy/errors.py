"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
numerical failures exit 2, I/O failures exit 3.
"""


class ConvexCauchyError(Exception):
    """Base class for all package errors."""


class ConfigError(ConvexCauchyError):
    """Invalid problem definition: bad schema, unknown ids, inconsistent geometry."""


class GeometryError(ConvexCauchyError):
    """Degenerate or empty level-set geometry (empty subdomain, closure violation)."""


class WeightOverflowError(ConvexCauchyError):
    """Carleman weight exponent exceeds the floating-point range."""

    def __init__(self, lam: float, max_level: float, exponent: float):
        self.lam = lam
        self.max_level = max_level
        self.exponent = exponent
        super().__init__(
            f"weight exponent {exponent:.3g} overflows float64 "
            f"(lambda={lam:.6g}, max level value on mask={max_level:.6g}); "
            "reduce lambda or the level-function range"
        )


class ConstraintViolationError(ConvexCauchyError):
    """Field does not match the imposed Cauchy trace layers."""


class SolverError(ConvexCauchyError):
    """Iterative solver failed (non-convergence, divergence, line-search failure)."""


class IndefiniteGramError(SolverError):
    """Negative curvature met while solving the Gram system; the inner product
    is not positive definite, which signals a discretization bug."""
