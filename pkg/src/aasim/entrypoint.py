"""The singleton entry point: verification loop, execution loop, deposits.

``handle_ops`` processes a bundle in two passes. The verification loop
deploys absent senders that ship init code, checks the account nonce, runs
the account's validation policy (or defers to an aggregator group check),
and reserves the worst-case gas cost from the payer: the sender's balance,
or a paymaster's deposit under that paymaster's policy. Operations that
fail any step are excluded from execution and pay nothing. The execution
loop runs each surviving payload under its call gas limit, rolls back one
operation's execution effects on revert without disturbing the others,
charges the payer the actual cost, refunds the rest of the reservation,
and credits the bundler's beneficiary.

During execution the callee observes the sending account as its caller,
never the bundler and never a chained transaction origin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

from .aggregator import AggregateSignature, Aggregator
from .errors import (
    ArithmeticOverflow,
    BadAuth,
    InsufficientBalance,
    InsufficientDeposit,
    InternalInvariantViolation,
    PaymasterReject,
    ParseError,
    VerificationReject,
)
from .paymaster import Paymaster, PaymasterContext
from .sigscheme import Signature
from .userop import CallData, Intent, UserOperation, digest_user_op, prefund
from .wallet import SingleKey, authorized_signers, validate
from .world import (
    Account,
    AccountKind,
    Address,
    BlockContext,
    GasMeter,
    WorldState,
)
import hashlib

# Fixed accounting charge for the verification work done per operation.
# Declared rather than measured so receipts stay auditable by hand.
VERIFICATION_OVERHEAD_GAS = 40_000

ENTRYPOINT_ADDRESS = Address(hashlib.sha256(b"aasim/entrypoint-singleton").digest()[:20])

# Seconds of logical time between bundles on the bundler's clock.
BUNDLE_TIME_STEP = 12


# --------------------------------------------------------------------------- #
# Bundles and receipts
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Bundle:
    """Ordered operations plus per-aggregator combined signatures and the
    bundler's intent resolutions (digest -> concrete call)."""

    ops: Tuple[UserOperation, ...]
    aggregates: Mapping[Address, AggregateSignature] = field(default_factory=dict)
    resolutions: Mapping[bytes, CallData] = field(default_factory=dict)


class OpPhase(Enum):
    REJECTED_VERIFICATION = "RejectedVerification"
    EXECUTED_SUCCESS = "ExecutedSuccess"
    EXECUTED_REVERTED = "ExecutedReverted"


class PayerKind(Enum):
    ACCOUNT = "account"
    PAYMASTER = "paymaster"


@dataclass(frozen=True)
class PerOpReceipt:
    op_digest: bytes
    phase: OpPhase
    actual_gas_cost: int
    payer_kind: PayerKind
    payer: Address
    reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "op_digest": "0x" + self.op_digest.hex(),
            "phase": self.phase.value,
            "actual_gas_cost": str(self.actual_gas_cost),
            "payer_kind": self.payer_kind.value,
            "payer": self.payer.hex,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class HandleOpsReceipt:
    receipts: Tuple[PerOpReceipt, ...]
    beneficiary: Address
    beneficiary_credited: int

    def to_json_lines(self) -> str:
        return "\n".join(json.dumps(r.to_dict(), sort_keys=True) for r in self.receipts)


@dataclass
class _VerifiedOp:
    op: UserOperation
    digest: bytes
    prefund: int
    payer_kind: PayerKind
    payer: Address
    pm_ctx: Optional[PaymasterContext]
    resolved_payload: CallData


# --------------------------------------------------------------------------- #
# EntryPoint
# --------------------------------------------------------------------------- #

class EntryPoint:
    """Verification/execution state machine bound to one world."""

    def __init__(self, world: WorldState, address: Address = ENTRYPOINT_ADDRESS) -> None:
        self.world = world
        self.address = address
        self.deposits: Dict[Address, int] = {}
        self.aa_nonces: Dict[Address, int] = {}
        self.withdraw_nonces: Dict[Address, int] = {}
        self.paymasters: Dict[Address, Paymaster] = {}
        self.aggregators: Dict[Address, Aggregator] = {}
        self.bundle_counter = 0
        self._base_timestamp = world.block.timestamp

    # ------------------------------ registration ---------------------------- #

    def register_paymaster(self, paymaster: Paymaster) -> None:
        self.paymasters[paymaster.address] = paymaster

    def new_aggregator(self, address: Address) -> Aggregator:
        aggregator = Aggregator(
            address=address, entrypoint=self.address, chain_id=self.world.chain_id
        )
        self.aggregators[address] = aggregator
        return aggregator

    # ------------------------------ deposits -------------------------------- #

    def deposit_to(self, addr: Address, amount: int) -> None:
        """Move wei from the account's balance into its entry-point deposit."""
        if amount <= 0:
            raise ParseError("deposit amounts are positive")
        account = self.world.get_account(addr)
        if account.balance < amount:
            raise InsufficientBalance(f"balance {account.balance} < {amount}")
        self.world._set_balance(addr, account.balance - amount)
        self._adjust_deposit(addr, amount)
        self.world.journal_commit()

    def withdraw_digest(self, addr: Address, amount: int) -> bytes:
        nonce = self.withdraw_nonces.get(addr, 0)
        return hashlib.sha256(
            b"aasim/withdraw/" + addr.payload + amount.to_bytes(32, "big") + nonce.to_bytes(8, "big")
        ).digest()

    def withdraw_from(self, addr: Address, amount: int, auth: Signature) -> None:
        """Return deposit to the account balance, against the owner's
        signature over (address, amount, withdrawal nonce)."""
        if amount <= 0:
            raise ParseError("withdrawal amounts are positive")
        digest = self.withdraw_digest(addr, amount)
        policy = self.policy_for(addr)
        if policy is None or not validate(policy, digest, [auth], self.world.sig):
            raise BadAuth(addr.hex)
        if self.deposits.get(addr, 0) < amount:
            raise InsufficientDeposit(f"deposit {self.deposits.get(addr, 0)} < {amount}")
        self._adjust_deposit(addr, -amount)
        self.world._set_balance(addr, self.world.get_account(addr).balance + amount)
        self.withdraw_nonces[addr] = self.withdraw_nonces.get(addr, 0) + 1
        self.world.journal_commit()

    def _adjust_deposit(self, addr: Address, delta: int) -> None:
        old = self.deposits.get(addr, 0)
        self.world._journal.append(lambda: self.deposits.__setitem__(addr, old))
        self.deposits[addr] = old + delta

    def total_deposits(self) -> int:
        return sum(self.deposits.values())

    # ------------------------------ nonces ---------------------------------- #

    def aa_nonce(self, sender: Address) -> int:
        """Next expected operation nonce for a sender."""
        return self.aa_nonces.get(sender, 0)

    def _bump_aa_nonce(self, sender: Address) -> None:
        old = self.aa_nonces.get(sender, 0)
        self.world._journal.append(lambda: self.aa_nonces.__setitem__(sender, old))
        self.aa_nonces[sender] = old + 1

    # ------------------------------ policies -------------------------------- #

    def policy_for(self, addr: Address):
        explicit = self.world.policies.get(addr)
        if explicit is not None:
            return explicit
        bound = self.world.key_bindings.get(addr)
        if bound is not None:
            return SingleKey(owner=bound)
        return None

    # ------------------------------ bundle clock ---------------------------- #

    def next_bundle_context(self) -> BlockContext:
        """Execution context the bundler assigns to the next bundle.

        The timestamp advances on the bundler's own logical clock, so a
        proposer-injected timestamp never reaches operation execution. The
        randomness seed, in contrast, stays proposer-controlled: bundles
        still land in proposer-built blocks.
        """
        self.bundle_counter += 1
        proposer = self.world.block
        return BlockContext(
            number=proposer.number + self.bundle_counter,
            timestamp=self._base_timestamp + BUNDLE_TIME_STEP * self.bundle_counter,
            seed=proposer.seed,
            coinbase=proposer.coinbase,
            gas_limit=proposer.gas_limit,
        )

    # ------------------------------ verification ---------------------------- #

    def verify_op(
        self,
        op: UserOperation,
        context: Optional[BlockContext] = None,
        bundle: Optional[Bundle] = None,
    ) -> _VerifiedOp:
        """Run the verification loop for one operation (mutating).

        Raises :class:`VerificationReject` with the rejection reason; the
        caller is responsible for rolling back this op's journal entries.
        """
        world = self.world
        digest = digest_user_op(op, self.address, world.chain_id)
        sender = op.sender

        if op.verification_gas_limit < VERIFICATION_OVERHEAD_GAS:
            raise VerificationReject("VerificationGasTooLow")

        # (a) on-the-spot deployment for absent senders
        if sender not in world.accounts:
            if op.init_code is None:
                raise VerificationReject("UnknownSender")
            if op.init_code.derived_address() != sender:
                raise VerificationReject("InitCodeMismatch")
            if not world.programs.has(op.init_code.program):
                raise VerificationReject("UnknownProgram")
            from .wallet import policy_from_spec  # avoids cycle at import time

            try:
                policy = policy_from_spec(op.init_code.policy_dict())
            except ParseError as exc:
                raise VerificationReject(f"BadInitPolicy:{exc}") from exc
            world._journal.append(lambda: world.accounts.pop(sender, None))
            world.accounts[sender] = Account(
                kind=AccountKind.CONTRACT, program=op.init_code.program
            )
            world._journal.append(lambda: world.policies.pop(sender, None))
            world.policies[sender] = policy

        # (b) replay protection
        if op.nonce != self.aa_nonce(sender):
            raise VerificationReject("BadNonce")

        # (c) account validation, possibly deferred to an aggregator
        policy = self.policy_for(sender)
        if policy is None:
            raise VerificationReject("NoValidationPolicy")
        if op.aggregator_ref is not None:
            aggregator = self.aggregators.get(op.aggregator_ref)
            if aggregator is None:
                raise VerificationReject("UnknownAggregator")
            sigs = op.signatures()
            if len(sigs) != 1 or sigs[0].signer not in authorized_signers(policy):
                raise VerificationReject("SignerNotAuthorized")
            if not self._aggregate_ok(op, digest, aggregator, bundle):
                raise VerificationReject("AggregateSignatureInvalid")
        else:
            if not validate(policy, digest, op.signatures(), world.sig, op=op, world=world):
                raise VerificationReject("SignatureInvalid")

        # resolve intent payloads (the bundler supplies resolutions)
        if isinstance(op.payload, Intent):
            resolved = (bundle.resolutions.get(digest) if bundle else None)
            if resolved is None:
                raise VerificationReject("UnresolvedIntent")
            payload = resolved
        else:
            payload = op.payload

        # (d) reserve the maximum potential gas expenditure from the payer
        try:
            need = prefund(op)
        except ArithmeticOverflow as exc:
            raise VerificationReject("ArithmeticOverflow") from exc
        pm_ctx: Optional[PaymasterContext] = None
        if op.paymaster_and_data is not None:
            paymaster = self.paymasters.get(op.paymaster_and_data.address)
            if paymaster is None:
                raise VerificationReject("UnknownPaymaster")
            if self.deposits.get(paymaster.address, 0) < need:
                raise VerificationReject("PaymasterDepositShortfall")
            try:
                pm_ctx = paymaster.validate_op(op, world, digest)
            except PaymasterReject as rej:
                raise VerificationReject(rej.reason) from rej
            self._adjust_deposit(paymaster.address, -need)
            payer_kind, payer = PayerKind.PAYMASTER, paymaster.address
        else:
            account = world.get_account(sender)
            if account.balance < need:
                raise VerificationReject("PrefundShortfall")
            world._set_balance(sender, account.balance - need)
            payer_kind, payer = PayerKind.ACCOUNT, sender

        self._bump_aa_nonce(sender)
        return _VerifiedOp(
            op=op,
            digest=digest,
            prefund=need,
            payer_kind=payer_kind,
            payer=payer,
            pm_ctx=pm_ctx,
            resolved_payload=payload,
        )

    def _aggregate_ok(
        self,
        op: UserOperation,
        digest: bytes,
        aggregator: Aggregator,
        bundle: Optional[Bundle],
    ) -> bool:
        if bundle is None:
            # Isolated check (simulation): the op forms a singleton group.
            agg = aggregator.aggregate_ops([op], self.world.sig)
            return aggregator.verify_aggregate([op], agg, self.world.sig)
        group = [
            member for member in bundle.ops if member.aggregator_ref == aggregator.address
        ]
        agg = bundle.aggregates.get(aggregator.address)
        if agg is None:
            return False
        return aggregator.verify_aggregate(group, agg, self.world.sig)

    # ------------------------------ handle_ops ------------------------------ #

    def handle_ops(self, bundle: Bundle, beneficiary: Address) -> HandleOpsReceipt:
        """Verify then execute a bundle; per-op failures never abort it.

        The whole bundle reverts only on an internal accounting invariant
        violation, which signals a simulator bug rather than a bad input.
        """
        world = self.world
        assert not world._journal, "journal must be empty between top-level operations"
        bundle_mark = world.journal_mark()
        saved_block = world.block
        context = self.next_bundle_context()
        world.block = context
        try:
            receipts: List[PerOpReceipt] = []
            verified: List[Tuple[int, _VerifiedOp]] = []
            for index, op in enumerate(bundle.ops):
                digest = digest_user_op(op, self.address, world.chain_id)
                would_pay_kind, would_pay = self._would_pay(op)
                mark = world.journal_mark()
                try:
                    ver = self.verify_op(op, context=context, bundle=bundle)
                except VerificationReject as rej:
                    world.journal_revert(mark)
                    receipts.append(
                        PerOpReceipt(
                            op_digest=digest,
                            phase=OpPhase.REJECTED_VERIFICATION,
                            actual_gas_cost=0,
                            payer_kind=would_pay_kind,
                            payer=would_pay,
                            reason=rej.reason,
                        )
                    )
                    continue
                verified.append((index, ver))
                receipts.append(None)  # type: ignore[arg-type]  # filled in phase 2

            credited_total = 0
            for index, ver in verified:
                receipt, cost = self._execute_verified(ver, context)
                receipts[index] = receipt
                credited_total += cost

            if credited_total:
                self._credit(beneficiary, credited_total)

            world.journal_commit()
            return HandleOpsReceipt(
                receipts=tuple(receipts),
                beneficiary=beneficiary,
                beneficiary_credited=credited_total,
            )
        except InternalInvariantViolation:
            world.journal_revert(bundle_mark)
            raise
        finally:
            world.block = saved_block

    def _would_pay(self, op: UserOperation) -> Tuple[PayerKind, Address]:
        if op.paymaster_and_data is not None:
            return PayerKind.PAYMASTER, op.paymaster_and_data.address
        return PayerKind.ACCOUNT, op.sender

    def _execute_verified(
        self, ver: _VerifiedOp, context: BlockContext
    ) -> Tuple[PerOpReceipt, int]:
        world = self.world
        op = ver.op
        payload = ver.resolved_payload
        meter = GasMeter(limit=op.call_gas_limit, price=op.max_fee_per_gas)

        target_account = world.accounts.get(payload.target)
        if target_account is None:
            phase, reason = OpPhase.EXECUTED_REVERTED, "UnknownTarget"
        elif target_account.kind is AccountKind.CONTRACT and not payload.input:
            # Bare value pushes at contracts are not expressible as
            # operations: payloads must name an entry point explicitly.
            phase, reason = OpPhase.EXECUTED_REVERTED, "ExplicitPayloadRequired"
        else:
            result = world.run_call(
                caller=op.sender,
                target=payload.target,
                value=payload.value,
                input_data=payload.input,
                meter=meter,
                rail="aa",
                block=context,
                strict_input=True,
            )
            if result.success:
                phase, reason = OpPhase.EXECUTED_SUCCESS, None
            else:
                phase, reason = OpPhase.EXECUTED_REVERTED, result.error

        gas_used_total = VERIFICATION_OVERHEAD_GAS + op.pre_verification_gas + meter.used
        actual = gas_used_total * op.max_fee_per_gas
        if actual > ver.prefund:
            raise InternalInvariantViolation(
                f"actual cost {actual} exceeds reservation {ver.prefund}"
            )

        refund = ver.prefund - actual
        if ver.payer_kind is PayerKind.ACCOUNT:
            if refund:
                world._set_balance(op.sender, world.get_account(op.sender).balance + refund)
        else:
            if refund:
                self._adjust_deposit(ver.payer, refund)
            assert ver.pm_ctx is not None
            paymaster = self.paymasters[ver.payer]
            paymaster.post_op(ver.pm_ctx, actual, world)

        receipt = PerOpReceipt(
            op_digest=ver.digest,
            phase=phase,
            actual_gas_cost=actual,
            payer_kind=ver.payer_kind,
            payer=ver.payer,
            reason=reason,
        )
        return receipt, actual

    def _credit(self, beneficiary: Address, amount: int) -> None:
        world = self.world
        if beneficiary not in world.accounts:
            world._journal.append(lambda: world.accounts.pop(beneficiary, None))
            world.accounts[beneficiary] = Account(kind=AccountKind.EXTERNALLY_OWNED)
        world._set_balance(beneficiary, world.get_account(beneficiary).balance + amount)
