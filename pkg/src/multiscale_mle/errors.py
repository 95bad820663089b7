"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`ConfigError` to exit code 1 and every
:class:`NumericalError` to exit code 2.
"""


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


class NumericalError(RuntimeError):
    """Base class for failures of a numerical routine."""


class SimulationError(NumericalError):
    """A simulated path left the finite range."""


class StationarySolveError(NumericalError):
    """The invariant-measure solve on the torus failed."""


class DegenerateFlowError(NumericalError):
    """The fast first-order flow has a rest point, so no unique invariant law."""


class CenteringError(NumericalError):
    """A Fredholm centering condition does not hold."""

    def __init__(self, message: str, value: float):
        super().__init__(f"{message} (measured integral {value:.3e})")
        self.value = value


class FisherDegenerateError(NumericalError):
    """Fisher information below the configured positivity floor."""


class EstimationError(NumericalError):
    """The estimator is undefined for the given data."""


class MonteCarloError(NumericalError):
    """Too many failed replications in a Monte Carlo run."""


class PotentialOverflowError(NumericalError):
    """exp(+-Q/D) would overflow double precision."""
