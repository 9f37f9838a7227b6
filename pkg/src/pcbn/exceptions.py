"""Exception hierarchy used across the package."""


class PcbnError(Exception):
    """Base class for all package errors."""


class ParameterError(PcbnError, ValueError):
    """A copula parameter, Kendall's tau or other numeric input is out of range."""


class StructureError(PcbnError, ValueError):
    """A graph or vine violates a structural requirement."""


class InputFormatError(PcbnError, ValueError):
    """A data file or JSON document is malformed."""


class ConfigurationError(PcbnError, ValueError):
    """Inconsistent or unsupported configuration."""


class NumericalError(PcbnError, ArithmeticError):
    """A numerical routine failed to produce a finite result."""


class DegenerateInputError(PcbnError, ValueError):
    """Test input without enough variation, such as a constant column."""


class TestError(PcbnError):
    """A conditional independence test could not be carried out."""

    __test__ = False
