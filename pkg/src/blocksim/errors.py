"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2, NumericsError -> 3,
UnrecoverableError -> 4. Everything else is a bug and escapes as-is.
"""


class BlocksimError(Exception):
    """Base class for all package errors."""


class ValidationError(BlocksimError):
    """Bad configuration, bad arguments, malformed input files."""


class CommTimeoutError(BlocksimError):
    """A receive cannot complete: sender dead without failure handling, or deadlock."""


class TypeTagError(BlocksimError):
    """Debug-mode buffer type tag mismatch between pack and unpack."""


class BufferUnderflowError(BlocksimError):
    """Attempt to read past the end of a receive buffer."""


class PhaseError(BlocksimError):
    """Buffer system operation called in an illegal phase."""


class RankDeadError(BlocksimError):
    """Operation addressed a rank that has been killed."""


class TopologyError(BlocksimError):
    """Illegal block forest operation (non-leaf refinement, level-0 coarsening, ...)."""


class SyncError(BlocksimError):
    """Particle synchronization contract violated (body moved farther than one block)."""


class NumericsError(BlocksimError):
    """NaN/Inf or divergence detected during a run."""


class UnrecoverableError(BlocksimError):
    """Rank failure that cannot be recovered (all holders of a required image are dead)."""
