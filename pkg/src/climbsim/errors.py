"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or mismatched dimensions."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class EmptyInputError(ContractViolation):
    pass


class PartitionError(ContractViolation):
    """Comparison graph splits into several components."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        names = "; ".join("{" + ", ".join(c) + "}" for c in self.components)
        super().__init__(f"comparison graph is disconnected: {names}")


class TrainingDiverged(RuntimeError):
    pass
