"""Aggregate signatures: one combined check over a whole bundle.

Tags of the simulated scheme live in a prime field and add, so the
aggregate of a group is the field sum of its members' tags. Verification
recomputes each member's expected tag from (signer, operation digest) and
compares the sum; any single-member tampering of a covered field or of the
combined tag breaks the equality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import MixedSchemes
from .sigscheme import FIELD_PRIME, Signature, SimulatedScheme
from .userop import UserOperation, digest_user_op
from .world import Address


@dataclass(frozen=True)
class AggregateSignature:
    scheme: str
    tag: int  # field element; 0 is the identity of the empty aggregate
    count: int


def aggregate(signatures: Sequence[Signature], scheme_id: str) -> AggregateSignature:
    """Fold signatures into one; order does not matter."""
    combined = 0
    for sig in signatures:
        if sig.scheme != scheme_id:
            raise MixedSchemes(f"{sig.scheme!r} != {scheme_id!r}")
        combined = (combined + sig.tag) % FIELD_PRIME
    return AggregateSignature(scheme=scheme_id, tag=combined, count=len(signatures))


@dataclass(frozen=True)
class Aggregator:
    """A deployed aggregation contract bound to one entry point."""

    address: Address
    entrypoint: Address
    chain_id: int

    def aggregate_ops(self, ops: Sequence[UserOperation], scheme: SimulatedScheme) -> AggregateSignature:
        signatures = []
        for op in ops:
            sigs = op.signatures()
            if len(sigs) != 1:
                raise MixedSchemes("aggregated operations carry exactly one signature")
            signatures.append(sigs[0])
        return aggregate(signatures, scheme.scheme_id)

    def verify_aggregate(
        self,
        ops: Sequence[UserOperation],
        agg: AggregateSignature,
        scheme: SimulatedScheme,
    ) -> bool:
        """True iff the combined tag matches the sum expected from every
        (signer, digest) pair; false under any tampering."""
        if agg.scheme != scheme.scheme_id or agg.count != len(ops):
            return False
        expected = 0
        for op in ops:
            if op.aggregator_ref != self.address:
                return False
            sigs = op.signatures()
            if len(sigs) != 1 or sigs[0].scheme != scheme.scheme_id:
                return False
            signer = sigs[0].signer
            if not scheme.is_registered(signer):
                return False
            digest = digest_user_op(op, self.entrypoint, self.chain_id)
            expected = (expected + scheme.expected_tag(signer, digest)) % FIELD_PRIME
        return expected == agg.tag
