"""Gas payment policies: sponsored and token-denominated.

A paymaster fronts the wei prefund from its entry-point deposit. Under a
sponsored policy it simply spends its own budget for whitelisted senders;
under a token policy the sender repays in token units at a fixed exchange
rate, with ceiling rounding so the conversion never favors the sender.
Validation reserves the worst case, settlement charges the actual cost and
releases the rest, exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .errors import (
    BudgetExhausted,
    DoubleSettle,
    InsufficientAllowance,
    InsufficientTokenBalance,
    NotWhitelisted,
    OverCharge,
    ParseError,
)
from .userop import UserOperation, prefund
from .world import Address, WorldState


@dataclass
class SponsoredPolicy:
    """Pay gas in full for whitelisted senders, up to a wei budget."""

    whitelist: frozenset
    budget: int

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ParseError("budget is non-negative")


@dataclass
class TokenGasPolicy:
    """Charge gas in token units at ``rate`` wei per token base unit."""

    token: str
    rate: Fraction
    min_allowance: int = 0

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ParseError("exchange rate is positive")

    def tokens_for(self, wei: int) -> int:
        """Token units covering ``wei``, rounded up (never undercharges)."""
        num, den = self.rate.numerator, self.rate.denominator
        return -((-wei * den) // num)


PaymasterPolicy = Union[SponsoredPolicy, TokenGasPolicy]


@dataclass
class PaymasterContext:
    """Validation outcome carried to settlement; consumable exactly once."""

    op_digest: bytes
    paymaster: Address
    sender: Address
    prefund: int
    reserved_tokens: int = 0  # token-gas reservations
    reserved_budget: int = 0  # sponsored reservations
    consumed: bool = False


@dataclass
class SettlementRecord:
    op_digest: bytes
    paymaster: Address
    actual_gas_cost: int
    tokens_charged: int = 0
    tokens_released: int = 0
    budget_spent: int = 0
    budget_released: int = 0


@dataclass
class Paymaster:
    """One deployed paymaster: an address plus its payment policy."""

    address: Address
    policy: PaymasterPolicy

    def validate_op(
        self, op: UserOperation, world: WorldState, op_digest: bytes = b""
    ) -> PaymasterContext:
        """Accept or reject sponsorship; reserves the worst-case cost.

        Token reservations move the sender's tokens to the paymaster now
        and the unused part flows back at settlement; budget reservations
        decrement the sponsored budget the same way. Mutations ride the
        world journal so a bundle abort rolls them back.
        """
        if op.paymaster_and_data is None or op.paymaster_and_data.address != self.address:
            raise ParseError("operation does not name this paymaster")
        need = prefund(op)
        policy = self.policy
        if isinstance(policy, SponsoredPolicy):
            if op.sender not in policy.whitelist:
                raise NotWhitelisted()
            if policy.budget < need:
                raise BudgetExhausted()
            old_budget = policy.budget
            world._journal.append(lambda: setattr(policy, "budget", old_budget))
            policy.budget = old_budget - need
            return PaymasterContext(
                op_digest=op_digest, paymaster=self.address, sender=op.sender,
                prefund=need, reserved_budget=need,
            )
        tokens_needed = policy.tokens_for(need)
        if world.tokens.balance_of(policy.token, op.sender) < tokens_needed:
            raise InsufficientTokenBalance()
        allowance = world.tokens.allowance(policy.token, op.sender, self.address)
        if allowance < max(tokens_needed, policy.min_allowance):
            raise InsufficientAllowance()
        world.tokens.spend_allowance(
            policy.token, op.sender, self.address, tokens_needed, world._journal
        )
        world.tokens.transfer(
            policy.token, op.sender, self.address, tokens_needed, world._journal
        )
        return PaymasterContext(
            op_digest=op_digest, paymaster=self.address, sender=op.sender,
            prefund=need, reserved_tokens=tokens_needed,
        )

    def post_op(
        self, ctx: PaymasterContext, actual_gas_cost: int, world: WorldState
    ) -> SettlementRecord:
        """Settle after execution: consume the actual cost, release the rest."""
        if ctx.consumed:
            raise DoubleSettle(ctx.op_digest.hex())
        if actual_gas_cost > ctx.prefund:
            raise OverCharge(f"{actual_gas_cost} > reserved {ctx.prefund}")
        ctx.consumed = True
        policy = self.policy
        if isinstance(policy, SponsoredPolicy):
            released = ctx.reserved_budget - actual_gas_cost
            old_budget = policy.budget
            world._journal.append(lambda: setattr(policy, "budget", old_budget))
            policy.budget = old_budget + released
            return SettlementRecord(
                op_digest=ctx.op_digest,
                paymaster=self.address,
                actual_gas_cost=actual_gas_cost,
                budget_spent=actual_gas_cost,
                budget_released=released,
            )
        tokens_due = policy.tokens_for(actual_gas_cost)
        tokens_back = ctx.reserved_tokens - tokens_due
        if tokens_back:
            # Return the unused part of the reservation to the payer.
            world.tokens.transfer(
                policy.token, self.address, ctx.sender, tokens_back, world._journal
            )
        return SettlementRecord(
            op_digest=ctx.op_digest,
            paymaster=self.address,
            actual_gas_cost=actual_gas_cost,
            tokens_charged=tokens_due,
            tokens_released=tokens_back,
        )


def policy_from_spec(spec: dict, resolve_address) -> PaymasterPolicy:
    kind = spec.get("type")
    if kind == "sponsored":
        whitelist = frozenset(resolve_address(name) for name in spec.get("whitelist", []))
        return SponsoredPolicy(whitelist=whitelist, budget=int(spec["budget"]))
    if kind == "token_gas":
        num, den = (int(part) for part in spec["rate"])
        return TokenGasPolicy(
            token=spec["token"],
            rate=Fraction(num, den),
            min_allowance=int(spec.get("min_allowance", 0)),
        )
    raise ParseError(f"unknown paymaster policy: {kind!r}")
