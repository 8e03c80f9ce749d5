"""Exception hierarchy shared by all fphist modules."""


class FPHistError(Exception):
    """Base class for every error raised by fphist."""

    #: machine-readable tag used by the CLI error payload
    code = "FPHistError"

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class NumericalBlowup(FPHistError, FloatingPointError):
    """Drift or diffusion produced a non-finite value."""

    def __init__(self, message, point=None, trajectory=None, step=None):
        super().__init__(message)
        self.point = point
        self.trajectory = trajectory
        self.step = step

    def to_dict(self):
        out = super().to_dict()
        if self.point is not None:
            out["point"] = [float(v) for v in self.point]
        if self.trajectory is not None:
            out["trajectory"] = int(self.trajectory)
        if self.step is not None:
            out["step"] = int(self.step)
        return out


class DivisibilityError(FPHistError, ValueError):
    """Sample count is not compatible with Gessaman's equal-count cells."""


class PowerOfTwoError(FPHistError, ValueError):
    """BTC splitting needs power-of-two sample and cell counts."""


class DegenerateDataError(FPHistError, ValueError):
    """Tied coordinates make an equal-count cut impossible."""


class ZeroVolumeError(FPHistError, ArithmeticError):
    """A bounded partition cell has zero volume."""


class ScheduleError(FPHistError, ValueError):
    """An (M, k_M) schedule violates the consistency hypotheses."""


class ConfigError(FPHistError, ValueError):
    """Invalid experiment configuration."""


class UnknownProblemError(FPHistError, KeyError):
    """Benchmark identifier not present in the catalog."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""
