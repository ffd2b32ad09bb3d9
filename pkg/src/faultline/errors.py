"""Exception types shared across the pipeline."""


class FaultlineError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(FaultlineError):
    """Invalid configuration (bad window/stride, malformed config file, ...)."""


class DataError(FaultlineError):
    """Invalid input data (bad record, missing coverage, schema violation)."""


class GraphCycleError(FaultlineError):
    """The service call graph derived from spans contains a directed cycle."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("call graph contains a cycle: " + " -> ".join(self.cycle))


class FingerprintMismatch(FaultlineError):
    """A model was asked to score data prepared under a different configuration."""


class TrainingError(FaultlineError):
    """Model training could not complete (too little data, divergent loss)."""
