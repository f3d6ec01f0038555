"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """An input violated a documented precondition."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""


class LabelingError(RuntimeError):
    """Eigenstates could not be matched unambiguously to bare states."""

    def __init__(self, label, overlap):
        self.label = label
        self.overlap = overlap
        super().__init__(f"ambiguous label |{''.join(map(str, label))}>: best overlap^2 = {overlap:.4f}")


class ResolutionError(RuntimeError):
    """Sub-step refinement of a smoothed pulse did not converge."""

    def __init__(self, f_coarse, f_fine, sub_step):
        self.f_coarse = f_coarse
        self.f_fine = f_fine
        self.sub_step = sub_step
        super().__init__(
            f"sub-step {sub_step:g} ns not converged: F={f_coarse:.12f} vs F={f_fine:.12f}"
        )


class EpisodeDone(RuntimeError):
    """env_step was called on a finished episode."""


class TrainingAborted(RuntimeError):
    """A training or optimization loop hit a non-finite value."""

    def __init__(self, message, step):
        self.step = step
        super().__init__(f"{message} (step {step})")
