"""Pluggable signature scheme with additive aggregation.

The default scheme is a non-cryptographic stand-in: a tag is the hash of
(secret || digest) reduced into a fixed 256-bit prime field, and verification
consults an in-simulator registry that maps public identifiers back to
secrets. Tags of one scheme add in the field, which is what makes one
combined check over a whole bundle possible. The interface (keygen, sign,
verify, aggregate, verify_aggregate on the consumer side) admits a real
pairing-based scheme as a drop-in replacement.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict

from .errors import UnknownKey

# Order of the tag field: the secp256k1 base-field prime.
FIELD_PRIME = 2**256 - 2**32 - 977

SCHEME_ID = "sim-additive-v1"


def _h(*parts: bytes) -> bytes:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(len(part).to_bytes(4, "big"))
        digest.update(part)
    return digest.digest()


@dataclass(frozen=True)
class Signature:
    """A single tag over a 32-byte digest.

    ``tag`` is an element of the integers mod :data:`FIELD_PRIME`.
    """

    scheme: str
    signer: bytes  # 32-byte public identifier
    tag: int

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "signer": self.signer.hex(), "tag": str(self.tag)}

    @classmethod
    def from_dict(cls, data: dict) -> "Signature":
        return cls(scheme=data["scheme"], signer=bytes.fromhex(data["signer"]), tag=int(data["tag"]))


class SimulatedScheme:
    """Registry-backed signing: deterministic, reproducible, not secure.

    Secrets never leave the registry; verification recomputes the expected
    tag from the stored secret. ``keygen`` is deterministic in its seed so
    worlds built from the same genesis hold identical key material.
    """

    scheme_id = SCHEME_ID

    def __init__(self) -> None:
        self._secrets_by_pub: Dict[bytes, bytes] = {}

    # ------------------------------ key lifecycle -------------------------- #

    def keygen(self, seed: bytes) -> bytes:
        """Derive and register a key pair; returns the public identifier."""
        secret = _h(b"secret", seed)
        pub = _h(b"public", secret)
        self._secrets_by_pub[pub] = secret
        return pub

    def is_registered(self, pub: bytes) -> bool:
        return pub in self._secrets_by_pub

    # ------------------------------ signing -------------------------------- #

    def _tag(self, secret: bytes, digest: bytes) -> int:
        return int.from_bytes(_h(b"tag", secret, digest), "big") % FIELD_PRIME

    def sign(self, pub: bytes, digest: bytes) -> Signature:
        secret = self._secrets_by_pub.get(pub)
        if secret is None:
            raise UnknownKey(f"no secret registered for {pub.hex()}")
        return Signature(scheme=self.scheme_id, signer=pub, tag=self._tag(secret, digest))

    def verify(self, pub: bytes, digest: bytes, tag: int) -> bool:
        secret = self._secrets_by_pub.get(pub)
        if secret is None:
            return False
        return self._tag(secret, digest) == tag

    def expected_tag(self, pub: bytes, digest: bytes) -> int:
        """The tag a holder of ``pub``'s secret would produce over ``digest``."""
        secret = self._secrets_by_pub.get(pub)
        if secret is None:
            raise UnknownKey(f"no secret registered for {pub.hex()}")
        return self._tag(secret, digest)
