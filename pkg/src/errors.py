"""Exceptions raised by the simulator.

Everything raised on purpose derives from :class:`SimulationError`, so callers
(the CLI in particular) can tell a modelled failure from a bug.
"""
from __future__ import annotations


class SimulationError(Exception):
    """Base class for every intentional failure in the package."""


# --- Configuration ---

class ConfigError(SimulationError, ValueError):
    """The requested configuration cannot be run."""


class InfeasibleBudgetError(ConfigError):
    """The epoch budget leaves zero epochs per train event."""


class TopologyError(ConfigError):
    """Invalid node count or center for a topology kind."""


class FractionError(ConfigError):
    """Split or skew fractions are out of range or do not sum correctly."""


# --- Data ---

class DataError(SimulationError):
    pass


class DatasetNotFoundError(DataError, FileNotFoundError):
    pass


class DatasetParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDatasetError(DataError):
    pass


class DemandExceedsSupplyError(DataError):
    def __init__(self, label: int, demanded: int, available: int):
        super().__init__(
            f"label {label}: clients demand {demanded} samples but only {available} exist"
        )
        self.label = label
        self.demanded = demanded
        self.available = available


class EmptyClientError(DataError):
    pass


# --- Numerics ---

class DimensionMismatchError(SimulationError, ValueError):
    pass


class NumericalError(SimulationError, ArithmeticError):
    """Parameters or losses became NaN or infinite."""


class DistributionError(SimulationError, ValueError):
    """Probability vectors of different length or with incompatible support."""


class OptimumSearchError(SimulationError):
    """Full-batch search for a local optimum hit its iteration cap."""


class MetricError(SimulationError, ValueError):
    pass


class MissingOptimumError(SimulationError):
    pass
