"""Build a full simulation environment from one genesis config.

A genesis file describes the block context, the accounts (externally owned
ones by seed, contracts by explicit address with a program and storage),
token balances and allowances, validation policies, paymasters with their
entry-point deposits, and recovery configurations. Values may reference
named accounts with ``@``-prefixed strings so a file never hardcodes
derived addresses or public keys:

* ``@addr:NAME``   20-byte address of the named account
* ``@addr32:NAME`` the same address left-aligned in a 32-byte word
* ``@pub:NAME``    the named account's bound public identifier (hex)
* ``@slot_addr:PREFIX:NAME`` per-account storage slot used by programs
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

from .entrypoint import EntryPoint
from .errors import ParseError, UnknownActor
from .mempool import AltMempool, Bundler, BundlerConfig
from .paymaster import Paymaster, policy_from_spec as paymaster_policy_from_spec
from .wallet import RecoveryConfig, RecoveryRegistry, policy_from_spec as wallet_policy_from_spec
from .world import (
    Address,
    BlockContext,
    WorldState,
    addr_slot,
    eoa_address,
    load_accounts,
    parse_amount,
    slot,
    word_addr,
)
from .programs import builtin_registry


@dataclass
class Env:
    """Everything a scenario or a demo needs, wired together."""

    world: WorldState
    entrypoint: EntryPoint
    bundler: Bundler
    names: Dict[str, Address]
    paymasters: Dict[str, Paymaster] = field(default_factory=dict)
    recovery: RecoveryRegistry = field(default_factory=RecoveryRegistry)

    def addr(self, name: str) -> Address:
        try:
            return self.names[name]
        except KeyError:
            raise UnknownActor(name) from None

    def pub(self, name: str) -> bytes:
        addr = self.addr(name)
        pub = self.world.key_bindings.get(addr)
        if pub is None:
            raise UnknownActor(f"{name} has no bound key")
        return pub

    def total_wei(self) -> int:
        return self.world.total_wei() + self.entrypoint.total_deposits()


def load_genesis(source: Union[dict, str, Path]) -> dict:
    if isinstance(source, dict):
        return source
    path = Path(source)
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot load genesis {path}: {exc}") from exc


def build_env(genesis: Union[dict, str, Path]) -> Env:
    """Instantiate a world plus its pipeline from a genesis description."""
    config = load_genesis(genesis)
    block_spec = config.get("block", {})
    block = BlockContext(
        number=int(block_spec.get("number", 0)),
        timestamp=int(block_spec.get("timestamp", 1_000)),
        seed=_parse_seed_int(block_spec.get("seed", 0)),
        gas_limit=int(block_spec.get("gas_limit", BlockContext.gas_limit)),
    )
    world = WorldState(
        block=block,
        chain_id=int(config.get("chain_id", 4337)),
        programs=builtin_registry(),
    )

    # Two passes: derive every name first so storage and policy values can
    # reference accounts declared later in the file.
    raw_accounts = config.get("accounts", [])
    names = _derive_names(raw_accounts)
    resolver = _Resolver(names)
    resolved_accounts = [
        {**entry, "storage": resolver.resolve_storage(entry.get("storage", {}))}
        for entry in raw_accounts
    ]
    created = load_accounts(world, resolved_accounts)
    names.update(created)

    if "coinbase" in block_spec:
        world.block.coinbase = _resolve_actor(block_spec["coinbase"], names)

    entrypoint = EntryPoint(world)

    # Policies need keys to exist, so they resolve after account creation.
    for entry in raw_accounts:
        if "policy" in entry and entry.get("name"):
            addr = names[entry["name"]]
            world.policies[addr] = wallet_policy_from_spec(
                _resolve_tree(entry["policy"], world, names)
            )

    for token_spec in config.get("tokens", []):
        token = token_spec["id"]
        for owner, amount in token_spec.get("balances", {}).items():
            world.tokens.mint(token, _resolve_actor(owner, names), parse_amount(amount))
        for allowance in token_spec.get("allowances", []):
            world.tokens.approve(
                token,
                _resolve_actor(allowance["owner"], names),
                _resolve_actor(allowance["spender"], names),
                parse_amount(allowance["amount"]),
                world._journal,
            )
        world.journal_commit()

    paymasters: Dict[str, Paymaster] = {}
    for pm_spec in config.get("paymasters", []):
        name = pm_spec["name"]
        addr = names.get(name)
        if addr is None:
            raise ParseError(f"paymaster {name!r} must also be declared as an account")
        policy = paymaster_policy_from_spec(
            pm_spec["policy"], lambda actor: _resolve_actor(actor, names)
        )
        paymaster = Paymaster(address=addr, policy=policy)
        entrypoint.register_paymaster(paymaster)
        deposit = parse_amount(pm_spec.get("deposit", 0))
        if deposit:
            entrypoint.deposit_to(addr, deposit)
        paymasters[name] = paymaster

    recovery = RecoveryRegistry()
    for rec_spec in config.get("recovery", []):
        target = _resolve_actor(rec_spec["account"], names)
        recovery.configure(
            target,
            RecoveryConfig(
                guardians=tuple(
                    world.key_bindings[_resolve_actor(g, names)]
                    for g in rec_spec["guardians"]
                ),
                threshold=int(rec_spec["threshold"]),
                delay=int(rec_spec["delay"]),
            ),
        )

    bundler_spec = config.get("bundler", {})
    beneficiary_name = bundler_spec.get("beneficiary", "bundler")
    if beneficiary_name in names:
        beneficiary = names[beneficiary_name]
    else:
        beneficiary = world.create_eoa(b"\x00" * 31 + b"\xbd", 0)
        names[beneficiary_name] = beneficiary
    bundler = Bundler(
        config=BundlerConfig(
            beneficiary=beneficiary,
            max_bundle_size=int(bundler_spec.get("max_bundle_size", 16)),
        ),
        entrypoint=entrypoint,
        pool=AltMempool(),
    )

    return Env(
        world=world,
        entrypoint=entrypoint,
        bundler=bundler,
        names=names,
        paymasters=paymasters,
        recovery=recovery,
    )


# --------------------------------------------------------------------------- #
# Reference resolution
# --------------------------------------------------------------------------- #

def _derive_names(raw_accounts) -> Dict[str, Address]:
    names: Dict[str, Address] = {}
    for entry in raw_accounts:
        name = entry.get("name")
        if not name:
            continue
        if "seed" in entry:
            seed_text = entry["seed"]
            body = seed_text[2:] if seed_text.startswith("0x") else seed_text
            names[name] = eoa_address(bytes.fromhex(body).rjust(32, b"\x00"))
        elif "address" in entry:
            names[name] = Address.from_hex(entry["address"])
    return names


def _resolve_actor(ref: str, names: Dict[str, Address]) -> Address:
    if ref.startswith("0x"):
        return Address.from_hex(ref)
    if ref in names:
        return names[ref]
    raise UnknownActor(ref)


class _Resolver:
    def __init__(self, names: Dict[str, Address]):
        self.names = names

    def resolve_storage(self, storage: dict) -> dict:
        return {
            self._resolve_key(key): self._resolve_value(value)
            for key, value in storage.items()
        }

    def _resolve_key(self, key: str) -> str:
        if key.startswith("@slot_addr:"):
            _, prefix, name = key.split(":", 2)
            addr = self.names.get(name)
            if addr is None:
                raise UnknownActor(name)
            return "0x" + addr_slot(addr, prefix).hex()
        return key

    def _resolve_value(self, value) -> str:
        if isinstance(value, str) and value.startswith("@addr32:"):
            name = value.split(":", 1)[1]
            addr = self.names.get(name)
            if addr is None:
                raise UnknownActor(name)
            return "0x" + word_addr(addr).hex()
        return value


def _resolve_tree(spec, world: WorldState, names: Dict[str, Address]):
    """Resolve @pub:/@addr: references anywhere inside a nested spec."""
    if isinstance(spec, dict):
        return {k: _resolve_tree(v, world, names) for k, v in spec.items()}
    if isinstance(spec, list):
        return [_resolve_tree(v, world, names) for v in spec]
    if isinstance(spec, str):
        if spec.startswith("@pub:"):
            name = spec.split(":", 1)[1]
            addr = names.get(name)
            if addr is None or addr not in world.key_bindings:
                raise UnknownActor(name)
            return "0x" + world.key_bindings[addr].hex()
        if spec.startswith("@addr:"):
            name = spec.split(":", 1)[1]
            addr = names.get(name)
            if addr is None:
                raise UnknownActor(name)
            return addr.hex
    return spec


def _parse_seed_int(value) -> int:
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        return int(value, 16) if value.startswith("0x") else int(value, 10)
    raise ParseError(f"bad block seed: {value!r}")
