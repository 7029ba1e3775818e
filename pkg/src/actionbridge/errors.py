"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class ScheduleDomainError(ValueError):
    """Time argument outside the schedule's [t_min, T] domain."""


class SingularTimeError(ValueError):
    """Operation evaluated at t = T where the bridge conditioning is singular."""


class DegenerateGeometryError(ValueError):
    """Parabola family degenerates (equal abscissae, equal heights, or h on the chord midline)."""


class DivergenceError(RuntimeError):
    """Non-finite state or loss encountered during training or sampling."""


class InfeasibleLayoutError(RuntimeError):
    """No feasible world layout found within the attempt budget."""


class CheckpointFormatError(ValueError):
    """Checkpoint file missing fields or carrying an unsupported format version."""
