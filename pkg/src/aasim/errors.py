"""Exception hierarchy shared across the simulator.

Every raised condition is a subclass of :class:`SimulationError` so callers
can catch domain failures without masking programming errors. Control-flow
signals used inside handler execution (revert, gas exhaustion) live here too
because they cross module boundaries.
"""

from __future__ import annotations


class SimulationError(Exception):
    """Base class for every domain error raised by the simulator."""


# --------------------------------------------------------------------------- #
# World / ledger
# --------------------------------------------------------------------------- #

class DuplicateSeed(SimulationError):
    """An account seed was reused within one world."""


class AddressCollision(SimulationError):
    """Two distinct creations derived the same address."""


class UnknownAccount(SimulationError):
    """An address does not exist in the world."""


class UnknownProgram(SimulationError):
    """A program name is not present in the registry."""


class UnknownEntryPointFunction(SimulationError):
    """A contract was called with a function name it does not export."""


class InsufficientBalance(SimulationError):
    """A debit exceeded the available balance."""


# --------------------------------------------------------------------------- #
# Legacy transactions
# --------------------------------------------------------------------------- #

class TransactionRejected(SimulationError):
    """A transaction failed pre-inclusion checks; no state was touched."""


class BadNonce(TransactionRejected):
    pass


class InsufficientFunds(TransactionRejected):
    pass


class UnknownTarget(TransactionRejected):
    pass


class OutOfGas(SimulationError):
    """Gas meter exceeded its limit.

    Raised as a rejection when a transaction cannot even cover intrinsic
    gas, and as a runtime signal (caught by the executor, which reverts
    state and charges the full limit) when a handler runs dry.
    """


class BlockGasExhausted(SimulationError):
    """Execution crossed the block gas budget mid-flight.

    Unlike :class:`OutOfGas` this halts execution while keeping the state
    changes applied so far; see the legacy executor for the rationale.
    """


class HandlerRevert(SimulationError):
    """A handler aborted; the executor rolls back its state changes."""

    def __init__(self, reason: str = "revert"):
        super().__init__(reason)
        self.reason = reason


# --------------------------------------------------------------------------- #
# Signatures
# --------------------------------------------------------------------------- #

class UnknownKey(SimulationError):
    """Secret or public identifier is not registered with the scheme."""


class MixedSchemes(SimulationError):
    """Signatures from different schemes cannot be aggregated."""


# --------------------------------------------------------------------------- #
# User operations
# --------------------------------------------------------------------------- #

class ValidationError(SimulationError):
    """Static shape check on a user operation failed."""


class ShortAddress(ValidationError):
    pass


class ZeroGasField(ValidationError):
    pass


class MalformedInput(ValidationError):
    pass


class NoRoute(SimulationError):
    """No market pool trades the requested asset pair."""


class ArithmeticOverflow(SimulationError):
    """A fee product exceeded the 256-bit range."""


# --------------------------------------------------------------------------- #
# Mempool / bundler
# --------------------------------------------------------------------------- #

class Duplicate(SimulationError):
    """The pool already holds an entry for this (sender, nonce)."""


# --------------------------------------------------------------------------- #
# EntryPoint
# --------------------------------------------------------------------------- #

class VerificationReject(SimulationError):
    """A user operation failed the verification loop."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class InsufficientDeposit(SimulationError):
    pass


class BadAuth(SimulationError):
    pass


class InternalInvariantViolation(SimulationError):
    """A bookkeeping invariant broke; the whole bundle is reverted."""


# --------------------------------------------------------------------------- #
# Paymaster
# --------------------------------------------------------------------------- #

class PaymasterReject(SimulationError):
    """Paymaster policy refused to sponsor an operation."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class NotWhitelisted(PaymasterReject):
    def __init__(self) -> None:
        super().__init__("NotWhitelisted")


class BudgetExhausted(PaymasterReject):
    def __init__(self) -> None:
        super().__init__("BudgetExhausted")


class InsufficientTokenBalance(PaymasterReject):
    def __init__(self) -> None:
        super().__init__("InsufficientTokenBalance")


class InsufficientAllowance(PaymasterReject):
    def __init__(self) -> None:
        super().__init__("InsufficientAllowance")


class DoubleSettle(SimulationError):
    pass


class OverCharge(SimulationError):
    pass


# --------------------------------------------------------------------------- #
# Harness
# --------------------------------------------------------------------------- #

class ParseError(SimulationError):
    """A config or scenario file is structurally invalid."""


class UnknownActor(ParseError):
    pass


class ScriptError(SimulationError):
    """A scenario step is not applicable in the requested mode."""


class MissingScenario(SimulationError):
    pass
