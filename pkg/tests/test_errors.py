import pytest

from src.errors import (ConfigError, DataError, DatasetNotFoundError, DatasetParseError,
                        DemandExceedsSupplyError, DimensionMismatchError, FractionError,
                        InfeasibleBudgetError, MetricError, SimulationError, TopologyError)


@pytest.mark.parametrize("cls", [InfeasibleBudgetError, TopologyError, FractionError])
def test_configuration_errors_are_value_errors(cls):
    assert issubclass(cls, ConfigError)
    assert issubclass(cls, ValueError)


def test_missing_dataset_is_also_a_file_error():
    assert issubclass(DatasetNotFoundError, DataError)
    assert issubclass(DatasetNotFoundError, FileNotFoundError)


@pytest.mark.parametrize("cls", [DataError, DimensionMismatchError, MetricError, ConfigError])
def test_everything_derives_from_the_base(cls):
    assert issubclass(cls, SimulationError)


def test_error_payloads():
    parse = DatasetParseError("bad cell", row=4, column="radius")
    assert (parse.row, parse.column) == (4, "radius")
    demand = DemandExceedsSupplyError(1, 12, 10)
    assert "12" in str(demand) and "10" in str(demand)
