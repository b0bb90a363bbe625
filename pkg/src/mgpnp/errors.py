"""Exception types shared across the package."""


class MgpnpError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(MgpnpError, ValueError):
    """A physical parameter is outside its domain."""


class TopologyError(MgpnpError, ValueError):
    """The electrical or communication graph is malformed."""


class ConfigurationError(MgpnpError, ValueError):
    pass


class GainError(MgpnpError, ValueError):
    """Controller coefficients violate the local stabilizing inequalities."""

    def __init__(self, unit, violations):
        self.unit = unit
        self.violations = list(violations)
        where = f"unit {unit}: " if unit is not None else ""
        super().__init__(where + "; ".join(self.violations))


class SimulationError(MgpnpError, RuntimeError):
    pass


class DivergenceError(SimulationError):
    def __init__(self, unit, t, value):
        self.unit = unit
        self.t = t
        self.value = value
        super().__init__(f"state of unit {unit} diverged at t={t:.6g} s (|x|={value:.3g})")


class ScenarioError(MgpnpError, ValueError):
    """Scenario file or scenario object failed validation.

    ``errors`` holds one human-readable message per problem, prefixed with a
    line number when one is known.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))
