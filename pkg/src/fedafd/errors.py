"""Exception hierarchy shared by every module of the simulator."""


class FedAFDError(Exception):
    """Base class for all simulator errors."""


class ContractError(FedAFDError, ValueError):
    """An operation was called outside its documented preconditions."""


class DimensionError(ContractError):
    """Operand shapes do not conform to the requested operation."""


class DomainError(ContractError):
    """A numerical input lies outside the domain of the operation."""


class DegenerateFeatureError(DomainError):
    """A feature row has zero norm, so cosine similarity is undefined."""


class ConfigError(FedAFDError, ValueError):
    """An invalid hyperparameter or run configuration."""


class PartitionError(FedAFDError, ValueError):
    """A dataset cannot be split as requested."""


class ProtocolError(FedAFDError, RuntimeError):
    """Round barrier or encoder-cache bookkeeping was violated."""


class InvariantViolation(FedAFDError, RuntimeError):
    """An internal numerical invariant failed; the run must abort."""
