"""User operations: construction, digesting, signing, static validation,
and intent resolution against a mock swap market.

A user operation is the transaction-like request a smart account emits into
the alternate mempool. Its digest covers sender, nonce, payload, every gas
field, the paymaster reference, the handling entry point's address, and the
chain id, so a replay that changes any of those fails signature
verification.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, Optional, Sequence, Tuple, Union

from .errors import (
    ArithmeticOverflow,
    MalformedInput,
    NoRoute,
    ParseError,
    ShortAddress,
    ZeroGasField,
)
from .sigscheme import Signature, SimulatedScheme
from .world import Address, check_input_shape, counterfactual_address, encode_input, parse_amount

MAX_UINT256 = (1 << 256) - 1


# --------------------------------------------------------------------------- #
# Payloads
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class CallData:
    """Concrete payload: call ``target`` with ``value`` wei and ``input``."""

    target: Address
    value: int = 0
    input: bytes = b""


@dataclass(frozen=True)
class Intent:
    """Outcome-focused payload: swap ``give`` for as much ``want`` as possible."""

    give_asset: str
    give_amount: int
    want_asset: str
    objective: str = "maximize_output"


Payload = Union[CallData, Intent]


@dataclass(frozen=True)
class InitCode:
    """On-the-spot account deployment: program, salt seed, and the
    validation policy the new account starts with (as a plain spec dict)."""

    program: str
    seed: bytes
    policy_spec: Tuple[Tuple[str, object], ...]  # canonicalized key/value pairs

    @classmethod
    def from_policy_dict(cls, program: str, seed: bytes, policy: dict) -> "InitCode":
        return cls(program=program, seed=bytes(seed), policy_spec=_freeze(policy))

    def policy_dict(self) -> dict:
        return _thaw(self.policy_spec)

    def policy_digest(self) -> bytes:
        canonical = json.dumps(self.policy_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).digest()

    def derived_address(self) -> Address:
        return counterfactual_address(self.program, self.seed, self.policy_digest())


def _freeze(value):
    if isinstance(value, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    if isinstance(value, list):
        return ("__list__",) + tuple(_freeze(v) for v in value)
    return value


def _thaw(value):
    if isinstance(value, tuple):
        if value and value[0] == "__list__":
            return [_thaw(v) for v in value[1:]]
        return {k: _thaw(v) for k, v in value}
    return value


@dataclass(frozen=True)
class PaymasterData:
    address: Address
    data: bytes = b""


SignatureField = Union[None, Signature, Tuple[Signature, ...]]


@dataclass(frozen=True)
class UserOperation:
    sender: Address
    nonce: int
    payload: Payload
    call_gas_limit: int
    verification_gas_limit: int
    pre_verification_gas: int
    max_fee_per_gas: int
    init_code: Optional[InitCode] = None
    paymaster_and_data: Optional[PaymasterData] = None
    aggregator_ref: Optional[Address] = None
    signature: SignatureField = None

    def signatures(self) -> Tuple[Signature, ...]:
        if self.signature is None:
            return ()
        if isinstance(self.signature, Signature):
            return (self.signature,)
        return tuple(self.signature)

    def with_signature(self, signature: SignatureField) -> "UserOperation":
        return replace(self, signature=signature)


# --------------------------------------------------------------------------- #
# Digesting and signing
# --------------------------------------------------------------------------- #

def _feed(h, part: bytes) -> None:
    h.update(len(part).to_bytes(4, "big"))
    h.update(part)


def _payload_bytes(payload: Payload) -> bytes:
    if isinstance(payload, CallData):
        return (
            b"call"
            + payload.target.payload
            + payload.value.to_bytes(32, "big")
            + payload.input
        )
    return (
        b"intent"
        + payload.give_asset.encode()
        + b"/"
        + payload.give_amount.to_bytes(32, "big")
        + payload.want_asset.encode()
        + b"/"
        + payload.objective.encode()
    )


def digest_user_op(op: UserOperation, entrypoint: Address, chain_id: int) -> bytes:
    """32-byte digest over all replay-relevant fields, in canonical order."""
    h = hashlib.sha256(b"aasim/userop-v1")
    _feed(h, op.sender.payload)
    _feed(h, op.nonce.to_bytes(32, "big"))
    _feed(h, _payload_bytes(op.payload))
    for gas_field in (
        op.call_gas_limit,
        op.verification_gas_limit,
        op.pre_verification_gas,
        op.max_fee_per_gas,
    ):
        _feed(h, gas_field.to_bytes(32, "big"))
    if op.paymaster_and_data is None:
        _feed(h, b"")
    else:
        _feed(h, op.paymaster_and_data.address.payload + op.paymaster_and_data.data)
    _feed(h, entrypoint.payload)
    _feed(h, chain_id.to_bytes(8, "big"))
    return h.digest()


def sign_user_op(
    op: UserOperation,
    scheme: SimulatedScheme,
    pub: bytes,
    entrypoint: Address,
    chain_id: int,
) -> UserOperation:
    """Attach a signature by the holder of ``pub`` over the op digest."""
    digest = digest_user_op(op, entrypoint, chain_id)
    return op.with_signature(scheme.sign(pub, digest))


def cosign_user_op(
    op: UserOperation,
    scheme: SimulatedScheme,
    pubs: Sequence[bytes],
    entrypoint: Address,
    chain_id: int,
) -> UserOperation:
    """Attach one signature per key, for k-of-n validated accounts."""
    digest = digest_user_op(op, entrypoint, chain_id)
    return op.with_signature(tuple(scheme.sign(pub, digest) for pub in pubs))


# --------------------------------------------------------------------------- #
# Static validation
# --------------------------------------------------------------------------- #

def static_validate(op: UserOperation) -> None:
    """Shape checks that need no state: raises on the first defect.

    Address fields must be exactly 20 bytes (no padding tolerance), every
    gas field must be positive, and call input must match its declared
    length header.
    """
    _check_address("sender", op.sender)
    if isinstance(op.payload, CallData):
        _check_address("target", op.payload.target)
        try:
            check_input_shape(op.payload.input)
        except MalformedInput:
            raise
    else:
        if op.payload.give_amount <= 0:
            raise MalformedInput("intent amount must be positive")
        if op.payload.give_asset == op.payload.want_asset:
            raise MalformedInput("intent must trade distinct assets")
    if op.paymaster_and_data is not None:
        _check_address("paymaster", op.paymaster_and_data.address)
    if op.aggregator_ref is not None:
        _check_address("aggregator", op.aggregator_ref)
    for name, value in (
        ("call_gas_limit", op.call_gas_limit),
        ("verification_gas_limit", op.verification_gas_limit),
        ("pre_verification_gas", op.pre_verification_gas),
        ("max_fee_per_gas", op.max_fee_per_gas),
    ):
        if value <= 0:
            raise ZeroGasField(name)
    if op.init_code is not None and op.init_code.derived_address() != op.sender:
        raise MalformedInput("init code does not produce the sender address")


def _check_address(field_name: str, addr: Address) -> None:
    if len(addr.payload) != 20:
        raise ShortAddress(f"{field_name} is {len(addr.payload)} bytes")


def prefund(op: UserOperation) -> int:
    """Maximum potential gas expenditure reserved before execution."""
    total = (
        op.call_gas_limit + op.verification_gas_limit + op.pre_verification_gas
    ) * op.max_fee_per_gas
    if total > MAX_UINT256:
        raise ArithmeticOverflow(f"prefund {total} exceeds 2**256-1")
    return total


# --------------------------------------------------------------------------- #
# Intent resolution
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Pool:
    pool_id: str
    address: Address
    give_asset: str
    want_asset: str
    rate: Fraction  # output units per input unit

    def quote(self, amount: int) -> int:
        if self.rate <= 0:
            raise ParseError("pool rates are positive")
        return (amount * self.rate.numerator) // self.rate.denominator


@dataclass(frozen=True)
class Market:
    pools: Tuple[Pool, ...]


def resolve_intent(intent: Intent, market: Market) -> CallData:
    """Pick the pool quoting the most output; ties go to the lowest pool id."""
    candidates = [
        pool
        for pool in market.pools
        if pool.give_asset == intent.give_asset and pool.want_asset == intent.want_asset
    ]
    if not candidates:
        raise NoRoute(f"{intent.give_asset} -> {intent.want_asset}")
    best = min(candidates, key=lambda pool: (-pool.quote(intent.give_amount), pool.pool_id))
    quote = best.quote(intent.give_amount)
    args = (
        len(intent.give_asset).to_bytes(1, "big")
        + intent.give_asset.encode()
        + intent.give_amount.to_bytes(32, "big")
        + len(intent.want_asset).to_bytes(1, "big")
        + intent.want_asset.encode()
        + quote.to_bytes(32, "big")
    )
    return CallData(target=best.address, value=0, input=encode_input("swap", args))


# --------------------------------------------------------------------------- #
# Wire format (JSON dicts; amounts as decimal strings)
# --------------------------------------------------------------------------- #

def user_op_to_dict(op: UserOperation) -> dict:
    data: Dict[str, object] = {
        "sender": op.sender.hex,
        "nonce": str(op.nonce),
        "call_gas_limit": str(op.call_gas_limit),
        "verification_gas_limit": str(op.verification_gas_limit),
        "pre_verification_gas": str(op.pre_verification_gas),
        "max_fee_per_gas": str(op.max_fee_per_gas),
    }
    if isinstance(op.payload, CallData):
        data["call"] = {
            "target": op.payload.target.hex,
            "value": str(op.payload.value),
            "input": "0x" + op.payload.input.hex(),
        }
    else:
        data["intent"] = {
            "give_asset": op.payload.give_asset,
            "give_amount": str(op.payload.give_amount),
            "want_asset": op.payload.want_asset,
            "objective": op.payload.objective,
        }
    if op.init_code is not None:
        data["init_code"] = {
            "program": op.init_code.program,
            "seed": "0x" + op.init_code.seed.hex(),
            "policy": op.init_code.policy_dict(),
        }
    if op.paymaster_and_data is not None:
        data["paymaster_and_data"] = {
            "address": op.paymaster_and_data.address.hex,
            "data": "0x" + op.paymaster_and_data.data.hex(),
        }
    if op.aggregator_ref is not None:
        data["aggregator"] = op.aggregator_ref.hex
    sigs = op.signatures()
    if sigs:
        data["signature"] = [sig.to_dict() for sig in sigs]
    return data


def user_op_from_dict(data: dict) -> UserOperation:
    try:
        if "call" in data:
            call = data["call"]
            payload: Payload = CallData(
                target=Address.from_hex(call["target"]),
                value=parse_amount(call.get("value", "0")),
                input=_hex_bytes(call.get("input", "0x")),
            )
        elif "intent" in data:
            intent = data["intent"]
            payload = Intent(
                give_asset=intent["give_asset"],
                give_amount=parse_amount(intent["give_amount"]),
                want_asset=intent["want_asset"],
                objective=intent.get("objective", "maximize_output"),
            )
        else:
            raise ParseError("operation needs a call or an intent payload")
        init_code = None
        if "init_code" in data:
            raw = data["init_code"]
            init_code = InitCode.from_policy_dict(
                raw["program"], _hex_bytes(raw["seed"]), raw["policy"]
            )
        paymaster = None
        if "paymaster_and_data" in data:
            raw = data["paymaster_and_data"]
            paymaster = PaymasterData(
                address=Address.from_hex(raw["address"]),
                data=_hex_bytes(raw.get("data", "0x")),
            )
        aggregator = Address.from_hex(data["aggregator"]) if "aggregator" in data else None
        signature: SignatureField = None
        if "signature" in data:
            sigs = tuple(Signature.from_dict(entry) for entry in data["signature"])
            signature = sigs[0] if len(sigs) == 1 else sigs
        return UserOperation(
            sender=Address.from_hex(data["sender"]),
            nonce=int(data["nonce"]),
            payload=payload,
            call_gas_limit=parse_amount(data["call_gas_limit"]),
            verification_gas_limit=parse_amount(data["verification_gas_limit"]),
            pre_verification_gas=parse_amount(data["pre_verification_gas"]),
            max_fee_per_gas=parse_amount(data["max_fee_per_gas"]),
            init_code=init_code,
            paymaster_and_data=paymaster,
            aggregator_ref=aggregator,
            signature=signature,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad user operation: {exc!r}") from exc


def _hex_bytes(text: str) -> bytes:
    body = text[2:] if text.startswith("0x") else text
    try:
        return bytes.fromhex(body)
    except ValueError as exc:
        raise ParseError(f"bad hex: {text!r}") from exc
