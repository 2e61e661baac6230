import logging
import os
from typing import Optional

from unlabeled_risk.core.errors import ConfigError
from unlabeled_risk.core.mixture.mixture_fit import FitConfig
from unlabeled_risk.core.train.supervised import SupervisedConfig
from unlabeled_risk.core.train.unsupervised import GradDescentConfig, GridSearchConfig
from unlabeled_risk.utils.constants import THREADS_ENV_VAR

# Default configuration instances
fit_config_instance = FitConfig()

grad_descent_instance = GradDescentConfig(fit_config=fit_config_instance)

grid_search_instance = GridSearchConfig(fit_config=fit_config_instance)

supervised_instance = SupervisedConfig()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def resolve_threads(flag: Optional[int] = None) -> int:
    """
    Worker count: the --threads flag, else the UNLABELED_RISK_THREADS
    environment variable, else 1.
    """
    value = flag if flag is not None else os.environ.get(THREADS_ENV_VAR)
    if value is None or value == "":
        return 1
    try:
        threads = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Thread count must be an integer, got {value!r}.") from None
    if threads < 1:
        raise ConfigError(f"Thread count must be >= 1, got {threads}.")
    return threads


def configure_logging(verbosity: int = 0) -> None:
    """
    Route package logs to stderr: WARNING by default, INFO with -v, DEBUG
    with -vv.
    """
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    package_logger = logging.getLogger("unlabeled_risk")
    package_logger.setLevel(level)
    if not package_logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        package_logger.addHandler(handler)
