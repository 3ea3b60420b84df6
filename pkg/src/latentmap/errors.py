"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument violates an operation's precondition (bad shape, range, order)."""


class ConfigurationError(ValueError):
    """A configuration value is outside its valid domain."""


class DegenerateFitError(ValueError):
    """A fit has no solution because the inputs carry no usable variation."""


class DisconnectedComparisonGraph(ValueError):
    """The pairwise-comparison graph splits into components that share no trials."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        parts = "; ".join("{" + ", ".join(c) + "}" for c in self.components)
        super().__init__(f"comparison graph is disconnected: {parts}")
