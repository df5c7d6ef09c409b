"""Exception hierarchy shared by the simulator modules."""


class SimulationError(Exception):
    """Base class for all qkdauth errors."""


# --- quantum state errors ---------------------------------------------------

class TooManyQubits(SimulationError):
    """Tensor product would exceed the 4-qubit limit."""


class QubitOutOfRange(SimulationError, IndexError):
    """Qubit index outside the state."""


class SameQubit(SimulationError):
    """Total-spin measurement needs two distinct qubits."""


# --- statistics errors ------------------------------------------------------

class EmptyRecords(SimulationError):
    """Correlation estimate requested on zero records."""


class MissingPair(SimulationError):
    """One of the four CHSH direction pairs has no estimate."""


class InvalidThreshold(SimulationError):
    """Eavesdropping threshold outside (sqrt(2), 2*sqrt(2))."""


# --- post-processing errors -------------------------------------------------

class LengthMismatch(SimulationError):
    """Alice's and Bob's sequences differ in length."""


class EmptyKey(SimulationError):
    """Operation requires a non-empty key."""


class BudgetExceeded(SimulationError):
    """Privacy amplification budget t + s >= n."""


class SeedLengthMismatch(SimulationError):
    """Toeplitz seed length is not n + r - 1."""


# --- protocol errors --------------------------------------------------------

class KeyTooShort(SimulationError):
    """One-time key shorter than the message (or the auth round count)."""


class KeyReuse(SimulationError):
    """An authentication key was consumed twice."""


class InsufficientBellRounds(SimulationError):
    """Session configured with a zero Bell-round allocation."""


class UnregisteredParty(SimulationError):
    """Initial phase started before both IDs were registered."""


class InsufficientEvidence(SimulationError):
    """Peer verification attempted with no basis-matching positions."""


class IndexOutOfRange(SimulationError, IndexError):
    """Verification positions outside the outcome record."""


class AbortSession(SimulationError):
    """Protocol run stopped by an eavesdropping or error-rate gate.

    This is a contract outcome, not a bug: runners catch it and emit an
    aborted SessionReport carrying ``reason``.
    """

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# --- channel / transcript errors --------------------------------------------

class UnknownTag(SimulationError):
    """Classical message tag outside the closed enumeration."""


# --- experiment runner errors -----------------------------------------------

class ConfigInvalid(SimulationError):
    """Experiment configuration failed validation."""


class IoFailure(SimulationError):
    """Report files could not be written."""
