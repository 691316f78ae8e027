"""Exception hierarchy shared across the package."""


class BeamAlignError(Exception):
    """Base class for all package errors."""


class DimensionError(BeamAlignError, ValueError):
    pass


class DomainError(BeamAlignError, ValueError):
    pass


class ContractError(BeamAlignError, ValueError):
    """A caller violated an operation's precondition."""


class DegenerateInputError(ContractError):
    pass


class ProtocolOrderError(BeamAlignError, RuntimeError):
    pass


class NonFiniteError(BeamAlignError, FloatingPointError):
    pass


class ConfigError(BeamAlignError, ValueError):
    pass


class TrainingDivergenceError(BeamAlignError, RuntimeError):
    pass


class CheckpointError(BeamAlignError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class VariantMismatchError(CheckpointError):
    pass
