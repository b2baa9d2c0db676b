class DataError(ValueError):
    """Input data cannot support the requested operation."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during gradient descent."""

    def __init__(self, epoch, learning_rate, trace=None):
        self.epoch = epoch
        self.learning_rate = learning_rate
        self.trace = trace if trace is not None else []
        super().__init__(
            f"training diverged at epoch {epoch} "
            f"(learning_rate={learning_rate:g}); loss is not finite"
        )


class StageError(RuntimeError):
    """A pipeline stage failed; the message is prefixed with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
