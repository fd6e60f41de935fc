"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
code the CLI uses when the error escapes a subcommand.
"""


class ForecastError(Exception):
    code = "E_INTERNAL"
    exit_code = 1


class DimensionError(ForecastError, ValueError):
    code = "E_DIMENSION"
    exit_code = 4


class ContractError(ForecastError, ValueError):
    code = "E_CONTRACT"
    exit_code = 2


class NumericError(ForecastError, ArithmeticError):
    code = "E_NUMERIC"
    exit_code = 4


class DataError(ForecastError, ValueError):
    code = "E_DATA"
    exit_code = 3


class DegenerateDataError(DataError):
    code = "E_DEGENERATE"


class IngestionError(DataError):
    code = "E_INGEST"


class ConfigError(ForecastError, ValueError):
    code = "E_CONFIG"
    exit_code = 2


class CheckpointError(ForecastError, IOError):
    code = "E_CHECKPOINT"
    exit_code = 5


class NotACheckpointError(CheckpointError):
    code = "E_CKPT_MAGIC"


class CheckpointVersionError(CheckpointError):
    code = "E_CKPT_VERSION"


class TruncatedCheckpointError(CheckpointError):
    code = "E_CKPT_TRUNCATED"


class ChecksumError(CheckpointError):
    code = "E_CKPT_CHECKSUM"


class ArchitectureMismatchError(CheckpointError):
    code = "E_CKPT_ARCH"
