"""Alternate mempool and the bundler that feeds the entry point.

Submission runs the static shape checks and deduplicates on
(sender, nonce). Simulation dry-runs the entry point's verification loop
on a forked copy of the world, so accepting and later executing can never
disagree on an unchanged state; it also flags deposits into contracts
that expose no way to spend funds. Selection orders candidates by the
one published rule, descending fee then ascending arrival, takes at most
one operation per sender, resolves intents against the configured market,
and builds per-aggregator combined signatures.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .entrypoint import Bundle, EntryPoint, HandleOpsReceipt
from .errors import Duplicate, NoRoute, ValidationError, VerificationReject
from .userop import (
    CallData,
    Intent,
    Market,
    UserOperation,
    digest_user_op,
    resolve_intent,
    static_validate,
    user_op_from_dict,
    user_op_to_dict,
)
from .world import AccountKind, Address


@dataclass(frozen=True)
class BundlerConfig:
    beneficiary: Address
    max_bundle_size: int = 16

    def __post_init__(self) -> None:
        if self.max_bundle_size < 1:
            raise ValueError("max_bundle_size must be at least 1")


@dataclass
class PoolEntry:
    op: UserOperation
    arrival_seq: int


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: Optional[str] = None
    arrival_seq: Optional[int] = None


@dataclass(frozen=True)
class SimReport:
    would_pass: bool
    reason: Optional[str] = None
    warnings: Tuple[str, ...] = ()


class AltMempool:
    """Pending user operations, at most one per (sender, nonce)."""

    def __init__(self) -> None:
        self.entries: Dict[Tuple[bytes, int], PoolEntry] = {}
        self.next_seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, op: UserOperation, arrival_seq: Optional[int] = None) -> int:
        key = (op.sender.payload, op.nonce)
        if key in self.entries:
            raise Duplicate(f"(sender={op.sender.hex}, nonce={op.nonce})")
        if arrival_seq is None:
            arrival_seq = self.next_seq
        self.next_seq = max(self.next_seq, arrival_seq) + 1
        self.entries[key] = PoolEntry(op=op, arrival_seq=arrival_seq)
        return arrival_seq

    def remove(self, op: UserOperation) -> None:
        self.entries.pop((op.sender.payload, op.nonce), None)

    def snapshot(self) -> List[PoolEntry]:
        return list(self.entries.values())

    # ------------------------------ dump / restore -------------------------- #

    def dump_json(self) -> str:
        entries = sorted(self.entries.values(), key=lambda e: e.arrival_seq)
        payload = [
            {"arrival_seq": entry.arrival_seq, "op": user_op_to_dict(entry.op)}
            for entry in entries
        ]
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def restore_json(cls, text: str) -> "AltMempool":
        pool = cls()
        for item in json.loads(text):
            pool.add(user_op_from_dict(item["op"]), arrival_seq=int(item["arrival_seq"]))
        return pool


class Bundler:
    """Watches a pool, simulates candidates, and submits bundles."""

    def __init__(
        self,
        config: BundlerConfig,
        entrypoint: EntryPoint,
        pool: Optional[AltMempool] = None,
        market: Optional[Market] = None,
    ) -> None:
        self.config = config
        self.entrypoint = entrypoint
        self.pool = pool or AltMempool()
        self.market = market

    # ------------------------------ submission ------------------------------ #

    def submit(self, op: UserOperation) -> SubmitResult:
        try:
            static_validate(op)
        except ValidationError as exc:
            return SubmitResult(accepted=False, reason=f"{type(exc).__name__}:{exc}")
        try:
            seq = self.pool.add(op)
        except Duplicate as exc:
            return SubmitResult(accepted=False, reason=f"Duplicate:{exc}")
        return SubmitResult(accepted=True, arrival_seq=seq)

    # ------------------------------ simulation ------------------------------ #

    def simulate(self, op: UserOperation) -> SimReport:
        """Dry-run verification on a forked world; never mutates state."""
        fork_world, fork_ep = copy.deepcopy((self.entrypoint.world, self.entrypoint))
        bundle = self._singleton_bundle(op, fork_ep)
        context = fork_ep.next_bundle_context()
        try:
            fork_ep.verify_op(op, context=context, bundle=bundle)
            would_pass, reason = True, None
        except VerificationReject as rej:
            would_pass, reason = False, rej.reason
        del fork_world  # forked state is discarded wholesale
        return SimReport(
            would_pass=would_pass, reason=reason, warnings=self._warnings(op)
        )

    def _singleton_bundle(self, op: UserOperation, entrypoint: EntryPoint) -> Bundle:
        resolutions: Dict[bytes, CallData] = {}
        if isinstance(op.payload, Intent) and self.market is not None:
            try:
                digest = digest_user_op(op, entrypoint.address, entrypoint.world.chain_id)
                resolutions[digest] = resolve_intent(op.payload, self.market)
            except NoRoute:
                pass
        return Bundle(ops=(op,), resolutions=resolutions)

    def _warnings(self, op: UserOperation) -> Tuple[str, ...]:
        """Target red flags. Advisory only: the pipeline does not reject."""
        warnings: List[str] = []
        payload = op.payload
        if isinstance(payload, CallData) and payload.value > 0:
            account = self.entrypoint.world.accounts.get(payload.target)
            if (
                account is not None
                and account.kind is AccountKind.CONTRACT
                and account.program is not None
            ):
                program = self.entrypoint.world.programs.get(account.program)
                if not program.spend_entrypoints:
                    warnings.append("FrozenFundsRisk")
        return tuple(warnings)

    # ------------------------------ selection ------------------------------- #

    @staticmethod
    def canonical_key(entry: PoolEntry) -> Tuple[int, int]:
        return (-entry.op.max_fee_per_gas, entry.arrival_seq)

    def select_and_order(self) -> Bundle:
        """Build the next bundle following the published ordering rule."""
        candidates = sorted(self.pool.snapshot(), key=self.canonical_key)
        chosen: List[PoolEntry] = []
        taken_senders = set()
        for entry in candidates:
            if len(chosen) >= self.config.max_bundle_size:
                break
            if entry.op.sender.payload in taken_senders:
                continue
            if not self.simulate(entry.op).would_pass:
                continue
            chosen.append(entry)
            taken_senders.add(entry.op.sender.payload)
        for entry in chosen:
            self.pool.remove(entry.op)
        ops = tuple(entry.op for entry in chosen)
        return Bundle(
            ops=ops,
            aggregates=self._build_aggregates(ops),
            resolutions=self._build_resolutions(ops),
        )

    def _build_aggregates(self, ops: Tuple[UserOperation, ...]) -> Dict[Address, object]:
        groups: Dict[Address, List[UserOperation]] = {}
        for op in ops:
            if op.aggregator_ref is not None:
                groups.setdefault(op.aggregator_ref, []).append(op)
        aggregates: Dict[Address, object] = {}
        for addr, members in groups.items():
            aggregator = self.entrypoint.aggregators.get(addr)
            if aggregator is None:
                continue
            aggregates[addr] = aggregator.aggregate_ops(members, self.entrypoint.world.sig)
        return aggregates

    def _build_resolutions(self, ops: Tuple[UserOperation, ...]) -> Dict[bytes, CallData]:
        resolutions: Dict[bytes, CallData] = {}
        if self.market is None:
            return resolutions
        for op in ops:
            if isinstance(op.payload, Intent):
                try:
                    digest = digest_user_op(
                        op, self.entrypoint.address, self.entrypoint.world.chain_id
                    )
                    resolutions[digest] = resolve_intent(op.payload, self.market)
                except NoRoute:
                    continue
        return resolutions

    # ------------------------------ submission to chain --------------------- #

    def submit_bundle(self, bundle: Bundle) -> HandleOpsReceipt:
        return self.entrypoint.handle_ops(bundle, self.config.beneficiary)
