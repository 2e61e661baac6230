class UnlabeledRiskError(Exception):
    """
    Base class for every error raised by the package.
    """

    exit_code = 1


class ConfigError(UnlabeledRiskError, ValueError):
    """
    Invalid parameters or configuration.
    """

    exit_code = 1


class IdentifiabilityError(ConfigError):
    """
    Label marginals that do not identify the mixture components
    (uniform binary priors or repeated multiclass priors).
    """


class DataError(UnlabeledRiskError, ValueError):
    """
    Malformed or unusable input data.
    """

    exit_code = 2


class DegenerateDataError(DataError):
    """
    Data that cannot support a mixture fit, e.g. all margins identical.
    """


class NumericalError(UnlabeledRiskError, ArithmeticError):
    """
    Non-finite results, failed quadrature or divergent optimization.
    """

    exit_code = 3


class SingularInformationError(NumericalError):
    """
    The Fisher information is singular or too ill-conditioned to invert.
    """
