"""Built-in handler programs.

Most of these are deliberately vulnerable contracts used by the attack
scenarios; each docstring names the flaw. Handlers charge gas through the
context for every observable step, read their arguments from fixed-width
fields, and keep persistent state in 32-byte storage words.
"""

from __future__ import annotations

import hashlib
from typing import Optional, Sequence, Tuple

from .world import (
    CallContext,
    Program,
    ProgramRegistry,
    addr_slot,
    as_addr,
    as_int,
    as_label,
    slot,
    word_int,
    Address,
    WORD_MOD,
)

# --------------------------------------------------------------------------- #
# Auth digests shared between handlers and the clients that sign for them
# --------------------------------------------------------------------------- #

def payout_claim_digest(recipient: Address, amount: int) -> bytes:
    # Deliberately omits a nonce and the proxy's own address, which is the
    # replay weakness the insufficient-signature scenario exercises.
    return hashlib.sha256(b"aasim/payout-auth/" + recipient.payload + word_int(amount)).digest()


def terminate_digest(wallet: Address, beneficiary: Address) -> bytes:
    return hashlib.sha256(b"aasim/terminate/" + wallet.payload + beneficiary.payload).digest()


# --------------------------------------------------------------------------- #
# Plain utility programs
# --------------------------------------------------------------------------- #

def _counter_inc(ctx: CallContext) -> bytes:
    count = as_int(ctx.sload(slot("count")))
    ctx.sstore(slot("count"), word_int(count + 1))
    return word_int(count + 1)


def _counter_get(ctx: CallContext) -> bytes:
    return ctx.sload(slot("count"))


def _looper_run(ctx: CallContext) -> bytes:
    """Charge exactly n metered steps, nothing else."""
    n = as_int(ctx.input[:4].rjust(4, b"\x00"))
    for _ in range(n):
        ctx.step()
    return b""


def _recorder_record(ctx: CallContext) -> bytes:
    ctx.sstore(slot("caller"), ctx.caller.payload.ljust(32, b"\x00"))
    ctx.sstore(slot("origin"), ctx.origin.payload.ljust(32, b"\x00"))
    ctx.sstore(slot("value"), word_int(ctx.value))
    return b""


def _probe_depth(ctx: CallContext) -> bytes:
    """Self-call until the frame guard trips; record the deepest frame."""
    deepest = as_int(ctx.sload(slot("deepest")))
    if ctx.depth > deepest:
        ctx.sstore(slot("deepest"), word_int(ctx.depth))
    result = ctx.call(ctx.self_address, "probe")
    if not result.success and result.error != "CallDepthExceeded":
        ctx.revert(result.error or "probe failed")
    return b""


def _smart_wallet_receive(ctx: CallContext) -> bytes:
    ctx.step()
    return b""


def _smart_wallet_execute(ctx: CallContext) -> bytes:
    # Only reachable through a validated operation: the account calls itself.
    if ctx.caller != ctx.self_address:
        ctx.revert("NotSelf")
    to = as_addr(ctx.input[:20])
    amount = as_int(ctx.input[20:52])
    ctx.transfer(to, amount)
    return b""


# --------------------------------------------------------------------------- #
# Scenario programs
# --------------------------------------------------------------------------- #

def _bounty_answer(ctx: CallContext) -> bytes:
    """First correct answer takes the pot; a race anyone observing the
    pending pool can try to win."""
    ctx.step(2)
    if as_int(ctx.sload(slot("claimed"))):
        ctx.revert("AlreadyClaimed")
    if hashlib.sha256(ctx.input).digest() != ctx.sload(slot("target_hash")):
        ctx.revert("WrongAnswer")
    ctx.sstore(slot("claimed"), word_int(1))
    ctx.transfer(ctx.caller, ctx.self_balance)
    return b""


def _timed_vault_claim(ctx: CallContext) -> bytes:
    """Pays out only at one exact block timestamp."""
    ctx.step()
    if ctx.block.timestamp != as_int(ctx.sload(slot("when"))):
        ctx.revert("WrongMoment")
    ctx.transfer(ctx.caller, ctx.self_balance)
    return b""


def _token_hub_transfer(ctx: CallContext) -> bytes:
    """Moves the caller's token units: args = to(20) || amount(32).

    Short argument payloads arrive zero-padded on the legacy rail, which
    shifts the amount field left by the missing bytes.
    """
    token = as_label(ctx.sload(slot("token")))
    to = as_addr(ctx.input[:20])
    amount = as_int(ctx.input[20:52])
    ctx.token_transfer(token, ctx.caller, to, amount)
    return b""


def _mass_payout_distribute(ctx: CallContext) -> bytes:
    """Pays every registered payee in one unbounded loop.

    There is no progress cursor: a run chopped by the block budget leaves
    some payees paid and the completion flag unset, and the next run pays
    the early payees again.
    """
    count = as_int(ctx.sload(slot("count")))
    share = as_int(ctx.sload(slot("share")))
    for index in range(count):
        ctx.step()
        payee = as_addr(ctx.sload(slot(f"payee{index}")))
        ctx.sstore(slot(f"receipt{index}"), word_int(1))
        ctx.transfer(payee, share)
    ctx.sstore(slot("complete"), word_int(1))
    return b""


def _shared_vault_deposit(ctx: CallContext) -> bytes:
    key = addr_slot(ctx.caller, "c:")
    credit = as_int(ctx.sload(key))
    ctx.sstore(key, word_int(credit + ctx.value))
    return b""


def _shared_vault_withdraw(ctx: CallContext) -> bytes:
    """Classic call-before-update bug: the credit is zeroed only after the
    payout call has already handed control to the recipient."""
    key = addr_slot(ctx.caller, "c:")
    credit = as_int(ctx.sload(key))
    if credit == 0:
        ctx.revert("NoCredit")
    result = ctx.call(ctx.caller, "receive", value=credit)
    if not result.success:
        ctx.revert("SendFailed")
    ctx.sstore(key, word_int(0))
    return b""


def _drainer_attack(ctx: CallContext) -> bytes:
    vault = as_addr(ctx.sload(slot("vault")))
    ctx.call(vault, "withdraw")
    return b""


def _drainer_receive(ctx: CallContext) -> bytes:
    vault = as_addr(ctx.sload(slot("vault")))
    if ctx.value and ctx.balance(vault) >= ctx.value:
        ctx.call(vault, "withdraw")
    return b""


def _donation_box_accept(ctx: CallContext) -> bytes:
    ctx.step()
    return b""


def _vault_box_accept(ctx: CallContext) -> bytes:
    key = addr_slot(ctx.caller, "c:")
    ctx.sstore(key, word_int(as_int(ctx.sload(key)) + ctx.value))
    return b""


def _vault_box_withdraw(ctx: CallContext) -> bytes:
    key = addr_slot(ctx.caller, "c:")
    credit = as_int(ctx.sload(key))
    if credit == 0:
        ctx.revert("NoCredit")
    ctx.sstore(key, word_int(0))
    ctx.transfer(ctx.caller, credit)
    return b""


def _checked_pool_fund(ctx: CallContext) -> bytes:
    if ctx.value == 0:
        ctx.revert("NoValue")
    ctx.sstore(slot("tracked"), word_int(as_int(ctx.sload(slot("tracked"))) + ctx.value))
    ctx.sstore(slot("funder"), ctx.caller.payload.ljust(32, b"\x00"))
    return b""


def _checked_pool_settle(ctx: CallContext) -> bytes:
    """Exit gate compares the real balance against internal bookkeeping;
    a single forced wei wedges it shut."""
    tracked = as_int(ctx.sload(slot("tracked")))
    if ctx.self_balance != tracked:
        ctx.revert("BalanceMismatch")
    funder = as_addr(ctx.sload(slot("funder")))
    ctx.sstore(slot("tracked"), word_int(0))
    ctx.transfer(funder, tracked)
    return b""


def _payout_proxy_claim(ctx: CallContext) -> bytes:
    """Pays against an owner signature that covers only (recipient, amount),
    so an intercepted authorization replays indefinitely."""
    recipient = as_addr(ctx.input[:20])
    amount = as_int(ctx.input[20:52])
    tag = as_int(ctx.input[52:84])
    owner_pub = ctx.sload(slot("owner_pub"))
    if not ctx.verify_signature(owner_pub, payout_claim_digest(recipient, amount), tag):
        ctx.revert("BadSignature")
    ctx.transfer(recipient, amount)
    return b""


def _ms_wallet_terminate(ctx: CallContext) -> bytes:
    """Erase the wallet and sweep its balance.

    Honored when the account calls itself (only a validated operation can
    arrange that) or, on the legacy rail, with a bare single-key signature
    over the terminate digest: one stolen key suffices there.
    """
    beneficiary = as_addr(ctx.input[:20])
    if ctx.caller == ctx.self_address:
        ctx.selfdestruct(beneficiary)
        return b""
    if ctx.rail == "legacy":
        tag = as_int(ctx.input[20:52])
        owner_pub = ctx.sload(slot("owner_pub"))
        if ctx.verify_signature(owner_pub, terminate_digest(ctx.self_address, beneficiary), tag):
            ctx.selfdestruct(beneficiary)
            return b""
    ctx.revert("TerminateNotAuthorized")
    return b""


def _origin_wallet_spend(ctx: CallContext) -> bytes:
    """Authorizes by transaction origin, the phishing-prone pattern."""
    owner = as_addr(ctx.sload(slot("owner")))
    if ctx.origin != owner:
        ctx.revert("NotOwner")
    to = as_addr(ctx.input[:20])
    amount = as_int(ctx.input[20:52])
    ctx.transfer(to, amount)
    return b""


def _bait_lure(ctx: CallContext) -> bytes:
    wallet = as_addr(ctx.sload(slot("wallet")))
    loot_to = as_addr(ctx.sload(slot("loot_to")))
    amount = ctx.balance(wallet)
    ctx.call(wallet, "spend", loot_to.payload + word_int(amount))
    return b""


def _open_treasury_pay(ctx: CallContext) -> bytes:
    """No identity check at all: anyone may direct the funds anywhere."""
    to = as_addr(ctx.input[:20])
    amount = as_int(ctx.input[20:52])
    ctx.transfer(to, amount)
    return b""


def _lottery_spin(ctx: CallContext) -> bytes:
    ctx.step()
    modulus = as_int(ctx.sload(slot("modulus")))
    winning = as_int(ctx.sload(slot("winning")))
    if modulus == 0 or ctx.block.seed % modulus != winning:
        ctx.revert("NotWinning")
    ctx.transfer(ctx.caller, ctx.self_balance)
    return b""


def _naive_token_transfer(ctx: CallContext) -> bytes:
    """Unchecked wrapping arithmetic: sending more than you hold underflows
    your balance to near 2**256."""
    to = as_addr(ctx.input[:20])
    amount = as_int(ctx.input[20:52])
    from_key = addr_slot(ctx.caller, "b:")
    to_key = addr_slot(to, "b:")
    ctx.sstore(from_key, word_int((as_int(ctx.sload(from_key)) - amount) % WORD_MOD))
    ctx.sstore(to_key, word_int((as_int(ctx.sload(to_key)) + amount) % WORD_MOD))
    return b""


def _throne_claim(ctx: CallContext) -> bytes:
    """Crown whoever pays the price; the refund to the old monarch is sent
    with an unchecked call, so a refund that cannot run is simply lost."""
    price = as_int(ctx.sload(slot("price")))
    if ctx.value < price:
        ctx.revert("TooCheap")
    old_king = as_addr(ctx.sload(slot("king")))
    ctx.call(old_king, "", value=price)  # failure deliberately ignored
    ctx.sstore(slot("king"), ctx.caller.payload.ljust(32, b"\x00"))
    return b""


def _deep_caller_dive(ctx: CallContext) -> bytes:
    """Recurse n frames deep, then claim the throne from the bottom."""
    n = as_int(ctx.input[:32])
    if n > 0:
        result = ctx.call(ctx.self_address, "dive", word_int(n - 1))
        if not result.success:
            ctx.revert(result.error or "DiveFailed")
        return b""
    throne = as_addr(ctx.sload(slot("throne")))
    price = as_int(ctx.sload(slot("price")))
    result = ctx.call(throne, "claim", value=price)
    if not result.success:
        ctx.revert(result.error or "ClaimFailed")
    return b""


# --------------------------------------------------------------------------- #
# Scripted programs (used to fuzz the gas accounting)
# --------------------------------------------------------------------------- #

ScriptOp = Tuple  # ("step", n) | ("sstore", label, int) | ("sload", label)
                  # | ("emit", topic) | ("transfer", Address, amount)


def make_scripted_program(name: str, ops: Sequence[ScriptOp]) -> Program:
    """A program whose single ``run`` entrypoint replays a fixed op list.

    The op list doubles as an independent gas oracle: summing the declared
    cost of each op must reproduce the meter's reading exactly.
    """
    frozen_ops = tuple(tuple(op) for op in ops)

    def run(ctx: CallContext) -> Optional[bytes]:
        for op in frozen_ops:
            kind = op[0]
            if kind == "step":
                ctx.step(op[1])
            elif kind == "sstore":
                ctx.sstore(slot(op[1]), word_int(op[2]))
            elif kind == "sload":
                ctx.sload(slot(op[1]))
            elif kind == "emit":
                ctx.emit(op[1])
            elif kind == "transfer":
                ctx.transfer(op[1], op[2])
            else:
                raise ValueError(f"unknown scripted op: {kind!r}")
        return b""

    return Program(name=name, entrypoints={"run": run})


def scripted_gas_cost(ops: Sequence[ScriptOp]) -> int:
    """Declared cost of a scripted op list; see :func:`make_scripted_program`."""
    from . import world as w

    total = 0
    for op in ops:
        kind = op[0]
        if kind == "step":
            total += w.GAS_STEP * op[1]
        elif kind == "sstore":
            total += w.GAS_SSTORE
        elif kind == "sload":
            total += w.GAS_SLOAD
        elif kind == "emit":
            total += w.GAS_LOG
        elif kind == "transfer":
            total += w.GAS_TRANSFER
        else:
            raise ValueError(f"unknown scripted op: {kind!r}")
    return total


# --------------------------------------------------------------------------- #
# Registry assembly
# --------------------------------------------------------------------------- #

_BUILTINS = [
    Program("counter", {"inc": _counter_inc, "get": _counter_get}),
    Program("looper", {"run": _looper_run}),
    Program("recorder", {"record": _recorder_record}),
    Program("depth_probe", {"probe": _probe_depth}),
    Program("smart_wallet", {"receive": _smart_wallet_receive, "execute": _smart_wallet_execute},
            frozenset({"execute"})),
    Program("bounty", {"answer": _bounty_answer}, frozenset({"answer"})),
    Program("timed_vault", {"claim": _timed_vault_claim}, frozenset({"claim"})),
    Program("token_hub", {"transfer": _token_hub_transfer}, frozenset({"transfer"})),
    Program("mass_payout", {"distribute": _mass_payout_distribute}, frozenset({"distribute"})),
    Program("shared_vault", {"deposit": _shared_vault_deposit, "withdraw": _shared_vault_withdraw},
            frozenset({"withdraw"})),
    Program("drainer", {"attack": _drainer_attack, "receive": _drainer_receive}),
    Program("donation_box", {"accept": _donation_box_accept}),  # no way out: frozen funds
    Program("vault_box", {"accept": _vault_box_accept, "withdraw": _vault_box_withdraw},
            frozenset({"withdraw"})),
    Program("checked_pool", {"fund": _checked_pool_fund, "settle": _checked_pool_settle},
            frozenset({"settle"})),
    Program("payout_proxy", {"claim": _payout_proxy_claim}, frozenset({"claim"})),
    Program("ms_wallet", {"terminate": _ms_wallet_terminate}, frozenset({"terminate"})),
    Program("origin_wallet", {"spend": _origin_wallet_spend}, frozenset({"spend"})),
    Program("bait", {"lure": _bait_lure}),
    Program("open_treasury", {"pay": _open_treasury_pay}, frozenset({"pay"})),
    Program("lottery", {"spin": _lottery_spin}, frozenset({"spin"})),
    Program("naive_token", {"transfer": _naive_token_transfer}),
    Program("throne", {"claim": _throne_claim}, frozenset({"claim"})),
    Program("deep_caller", {"dive": _deep_caller_dive}),
]


def builtin_registry() -> ProgramRegistry:
    registry = ProgramRegistry()
    for program in _BUILTINS:
        registry.register(program)
    return registry
