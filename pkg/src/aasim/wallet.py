"""Account validation policies and guardian-based ownership recovery.

A policy decides whether a set of signatures authorizes an operation
digest: a single bound key, a k-of-n threshold over distinct owners, or a
base policy composed with custom predicate modules (spending caps, time
windows, anything deterministic over the digest, the operation and a state
snapshot). Recovery rotates an account's policy to a new owner after
enough distinct guardian approvals and a mandatory delay.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

from .errors import ParseError
from .sigscheme import Signature, SimulatedScheme
from .world import Address

# --------------------------------------------------------------------------- #
# Policies
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SingleKey:
    owner: bytes  # public identifier


@dataclass(frozen=True)
class Multisig:
    threshold: int
    owners: Tuple[bytes, ...]

    def __post_init__(self) -> None:
        if not (1 <= self.threshold <= len(self.owners)):
            raise ParseError("threshold must satisfy 1 <= k <= n")
        if len(set(self.owners)) != len(self.owners):
            raise ParseError("owners must be distinct")


class PolicyModule:
    """Deterministic predicate over (digest, op, world). Subclass and
    implement :meth:`check`; instances must be immutable."""

    name = "module"

    def check(self, digest: bytes, op, world) -> bool:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class Composite:
    base: Union[SingleKey, Multisig]
    modules: Tuple[PolicyModule, ...] = ()


ValidationPolicy = Union[SingleKey, Multisig, Composite]


def validate(
    policy: ValidationPolicy,
    digest: bytes,
    signatures: Sequence[Signature],
    scheme: SimulatedScheme,
    op=None,
    world=None,
) -> bool:
    """True when the signatures (and any modules) authorize the digest."""
    if isinstance(policy, Composite):
        if not validate(policy.base, digest, signatures, scheme, op, world):
            return False
        return all(module.check(digest, op, world) for module in policy.modules)
    if isinstance(policy, SingleKey):
        return any(
            sig.signer == policy.owner and scheme.verify(sig.signer, digest, sig.tag)
            for sig in signatures
        )
    owners = set(policy.owners)
    valid_signers = {
        sig.signer
        for sig in signatures
        if sig.signer in owners and scheme.verify(sig.signer, digest, sig.tag)
    }
    return len(valid_signers) >= policy.threshold


def register_module(policy: ValidationPolicy, module: PolicyModule) -> Composite:
    """Wrap (or extend) a policy with one more predicate module."""
    if isinstance(policy, Composite):
        return Composite(base=policy.base, modules=policy.modules + (module,))
    return Composite(base=policy, modules=(module,))


def authorized_signers(policy: ValidationPolicy) -> Tuple[bytes, ...]:
    if isinstance(policy, Composite):
        return authorized_signers(policy.base)
    if isinstance(policy, SingleKey):
        return (policy.owner,)
    return policy.owners


# --------------------------------------------------------------------------- #
# Example modules
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SpendingLimitModule(PolicyModule):
    """Rejects operations whose payload moves more than ``cap`` wei."""

    cap: int
    name: str = "spending_limit"

    def check(self, digest: bytes, op, world) -> bool:
        if op is None:
            return True
        payload = getattr(op, "payload", None)
        value = getattr(payload, "value", None)
        if value is None:
            value = getattr(payload, "give_amount", 0)
        return value <= self.cap


@dataclass(frozen=True)
class TimeWindowModule(PolicyModule):
    """Allows execution only while the block timestamp is inside [start, end)."""

    start: int
    end: int
    name: str = "time_window"

    def check(self, digest: bytes, op, world) -> bool:
        if world is None:
            return False
        return self.start <= world.block.timestamp < self.end


# --------------------------------------------------------------------------- #
# Policy spec parsing (genesis and init-code files)
# --------------------------------------------------------------------------- #

def policy_from_spec(spec: dict) -> ValidationPolicy:
    kind = spec.get("type")
    if kind == "single":
        return SingleKey(owner=_pub_bytes(spec["owner"]))
    if kind == "multisig":
        return Multisig(
            threshold=int(spec["k"]),
            owners=tuple(_pub_bytes(owner) for owner in spec["owners"]),
        )
    if kind == "composite":
        base = policy_from_spec(spec["base"])
        modules = tuple(_module_from_spec(m) for m in spec.get("modules", []))
        if isinstance(base, Composite):
            raise ParseError("composite bases cannot nest")
        return Composite(base=base, modules=modules)
    raise ParseError(f"unknown policy type: {kind!r}")


def _module_from_spec(spec: dict) -> PolicyModule:
    kind = spec.get("type")
    if kind == "spending_limit":
        return SpendingLimitModule(cap=int(spec["cap"]))
    if kind == "time_window":
        return TimeWindowModule(start=int(spec["start"]), end=int(spec["end"]))
    raise ParseError(f"unknown policy module: {kind!r}")


def _pub_bytes(text: str) -> bytes:
    body = text[2:] if text.startswith("0x") else text
    try:
        raw = bytes.fromhex(body)
    except ValueError as exc:
        raise ParseError(f"bad public id hex: {text!r}") from exc
    if len(raw) != 32:
        raise ParseError("public identifiers are 32 bytes")
    return raw


# --------------------------------------------------------------------------- #
# Social recovery
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class RecoveryConfig:
    guardians: Tuple[bytes, ...]
    threshold: int
    delay: int  # simulation time units

    def __post_init__(self) -> None:
        if not (1 <= self.threshold <= len(self.guardians)):
            raise ParseError("recovery threshold must satisfy 1 <= t <= guardians")


@dataclass
class RecoveryRequest:
    target: Address
    new_owner: bytes
    created_at: int
    approvals: Tuple[Signature, ...] = ()


class RecoveryOutcome(Enum):
    ROTATED = "rotated"
    TOO_EARLY = "TooEarly"
    INSUFFICIENT_APPROVALS = "InsufficientApprovals"


def recovery_digest(target: Address, new_owner: bytes, created_at: int) -> bytes:
    # Approvals bind to the specific request so they cannot be replayed
    # onto a different rotation.
    return hashlib.sha256(
        b"aasim/recovery/" + target.payload + new_owner + created_at.to_bytes(8, "big")
    ).digest()


@dataclass
class RecoveryRegistry:
    """Guardian configuration and pending rotation requests, per account."""

    configs: Dict[Address, RecoveryConfig] = field(default_factory=dict)
    pending: Dict[Address, RecoveryRequest] = field(default_factory=dict)

    def configure(self, target: Address, config: RecoveryConfig) -> None:
        self.configs[target] = config

    def propose(self, request: RecoveryRequest) -> RecoveryRequest:
        config = self.configs.get(request.target)
        if config is None:
            raise ParseError(f"no recovery config for {request.target.hex}")
        self.pending[request.target] = request
        return request

    def approve(self, target: Address, approval: Signature) -> None:
        request = self.pending.get(target)
        if request is None:
            raise ParseError(f"no pending recovery for {target.hex}")
        request.approvals = request.approvals + (approval,)

    def valid_approvals(self, request: RecoveryRequest, scheme: SimulatedScheme) -> int:
        config = self.configs.get(request.target)
        if config is None:
            return 0
        digest = recovery_digest(request.target, request.new_owner, request.created_at)
        guardians = set(config.guardians)
        approvers = {
            sig.signer
            for sig in request.approvals
            if sig.signer in guardians and scheme.verify(sig.signer, digest, sig.tag)
        }
        return len(approvers)

    def execute(self, target: Address, now: int, world) -> RecoveryOutcome:
        """Rotate ownership if approvals and the delay both check out.

        On success the account's policy becomes a single-key policy over
        the new owner, so every prior owner signature stops validating.
        """
        request = self.pending.get(target)
        config = self.configs.get(target)
        if request is None or config is None:
            raise ParseError(f"no pending recovery for {target.hex}")
        if self.valid_approvals(request, world.sig) < config.threshold:
            return RecoveryOutcome.INSUFFICIENT_APPROVALS
        if now < request.created_at + config.delay:
            return RecoveryOutcome.TOO_EARLY
        world.policies[target] = SingleKey(owner=request.new_owner)
        world.key_bindings[target] = request.new_owner
        del self.pending[target]
        return RecoveryOutcome.ROTATED
