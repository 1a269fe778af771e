"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents do not satisfy an operation's shape contract."""


class AxisError(ValueError):
    """A reduction axis is out of range for the tensor's rank."""


class ContractError(ValueError):
    """A precondition on arguments (other than shapes) was violated."""


class ConfigError(ValueError):
    """Invalid model, training or run configuration."""


class ParseError(ValueError):
    """Malformed image or manifest input."""


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, truncated, or does not match its config."""
