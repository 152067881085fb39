"""Exception hierarchy shared across the package."""


class SandlabError(Exception):
    """Base class for all package errors."""


class ConfigError(SandlabError):
    """Invalid configuration: bad lattice/drive parameters or config file."""


class DataError(SandlabError):
    """Input data cannot be analyzed (empty, degenerate, too few samples)."""


class RunError(SandlabError):
    """A simulation or experiment failed while running."""


class OutputConflict(SandlabError):
    """Refusing to write into an existing run directory without --force."""


class TransientNotConverged(RunError):
    """Steady-state detector never fired within the supplied series."""

    def __init__(self, message: str, final_slope: float):
        super().__init__(message)
        self.final_slope = final_slope


class RelaxationOverflow(RunError):
    """Defensive sweep ceiling hit; the lattice cannot shed grains."""
