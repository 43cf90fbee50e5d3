"""Deterministic ledger and miniature contract VM.

The world holds externally owned and contract accounts, applies the two
legacy transaction kinds (contract creation and message call), and runs
contract behavior as registered handler programs instead of bytecode. A
handler is a plain function over a :class:`CallContext`; every observable
effect goes through the context so gas is metered and mutations are
journaled for atomic rollback.

Semantics worth knowing before reading on:

* Every applied transaction charges at least the 21,000 intrinsic gas.
* Gas fees are transfers to the block's coinbase account, never burned,
  so the sum of all balances (plus module-held ledgers) is conserved.
* Handler arithmetic on storage words wraps modulo 2**256.
* A failed call rolls back to the pre-call state except for the gas
  charge. The one deliberate exception: execution that crosses the block
  gas budget halts where it stands and keeps the partial state, which is
  how over-long loops corrupt naive contracts on the legacy rail.
* Call depth is capped at 1,024 frames; an inner call that would exceed
  the cap fails and the outer frame observes the failure.
"""

from __future__ import annotations

import contextlib
import copy
import hashlib
import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .errors import (
    AddressCollision,
    BadNonce,
    BlockGasExhausted,
    DuplicateSeed,
    HandlerRevert,
    InsufficientBalance,
    InsufficientFunds,
    MalformedInput,
    OutOfGas,
    ParseError,
    UnknownAccount,
    UnknownProgram,
    UnknownTarget,
)
from .sigscheme import SimulatedScheme

# --------------------------------------------------------------------------- #
# Constants
# --------------------------------------------------------------------------- #

WORD_BYTES = 32
WORD_MOD = 1 << 256  # handler arithmetic wraps here

INTRINSIC_GAS = 21_000
MAX_CALL_DEPTH = 1_024

# Declared per-operation gas costs. Any positive metering suffices for the
# accounting properties; storage writes are deliberately the expensive op.
GAS_STEP = 1
GAS_SLOAD = 1
GAS_SSTORE = 100
GAS_TRANSFER = 1
GAS_CALL = 2
GAS_LOG = 1
GAS_SIG_VERIFY = 3
GAS_SELFDESTRUCT = 100

DEFAULT_BLOCK_GAS_LIMIT = 30_000_000
DEFAULT_CHAIN_ID = 4337


def call_depth_guard(current_depth: int) -> bool:
    """True while a call at ``current_depth`` frames is still allowed."""
    return current_depth <= MAX_CALL_DEPTH


@contextlib.contextmanager
def _deep_recursion() -> Iterator[None]:
    """Temporarily widen the interpreter stack for 1,024-frame call chains."""
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 100_000))
    try:
        yield
    finally:
        sys.setrecursionlimit(old)


# --------------------------------------------------------------------------- #
# Address
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, order=True)
class Address:
    """20-byte opaque identifier, rendered as 0x + 40 hex chars."""

    payload: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.payload, bytes) or len(self.payload) != 20:
            raise ParseError(f"address payload must be exactly 20 bytes, got {len(self.payload)}")

    @classmethod
    def unchecked(cls, raw: bytes) -> "Address":
        """Build an address without the 20-byte check.

        Exists only so malformed (short) addresses can be modeled by attack
        scenarios; well-formed code never needs this.
        """
        addr = object.__new__(cls)
        object.__setattr__(addr, "payload", bytes(raw))
        return addr

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        body = text[2:] if text.startswith("0x") else text
        try:
            raw = bytes.fromhex(body)
        except ValueError as exc:
            raise ParseError(f"bad address hex: {text!r}") from exc
        if len(raw) != 20:
            raise ParseError(f"address must be 20 bytes, got {len(raw)}: {text!r}")
        return cls(raw)

    @property
    def hex(self) -> str:
        return "0x" + self.payload.hex()

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Address({self.hex})"


def eoa_address(seed: bytes) -> Address:
    return Address(hashlib.sha256(b"aasim/eoa/" + seed).digest()[:20])


def contract_address(deployer: Address, nonce: int) -> Address:
    material = b"aasim/contract/" + deployer.payload + nonce.to_bytes(8, "big")
    return Address(hashlib.sha256(material).digest()[:20])


def counterfactual_address(program: str, seed: bytes, policy_digest: bytes) -> Address:
    material = b"aasim/deploy/" + program.encode() + b"/" + seed + b"/" + policy_digest
    return Address(hashlib.sha256(material).digest()[:20])


# --------------------------------------------------------------------------- #
# Accounts
# --------------------------------------------------------------------------- #

class AccountKind(Enum):
    EXTERNALLY_OWNED = "eoa"
    CONTRACT = "contract"


@dataclass
class Account:
    kind: AccountKind
    balance: int = 0
    nonce: int = 0
    program: Optional[str] = None  # registry key; contracts only
    storage: Dict[bytes, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.balance < 0:
            raise ParseError("balance must be non-negative")
        if self.kind is AccountKind.EXTERNALLY_OWNED and (self.program or self.storage):
            raise ParseError("externally owned accounts carry no program or storage")


# --------------------------------------------------------------------------- #
# Gas
# --------------------------------------------------------------------------- #

@dataclass
class GasMeter:
    """Monotone gas counter with a hard limit and an optional block stop.

    ``block_stop`` is the remaining block budget at meter creation; when it
    is tighter than ``limit``, crossing it raises :class:`BlockGasExhausted`
    (halt, keep state) instead of :class:`OutOfGas` (revert).
    """

    limit: int
    price: int = 1
    used: int = 0
    block_stop: Optional[int] = None

    def charge(self, amount: int) -> None:
        if amount < 0:
            raise ValueError("gas charge must be positive")
        self.used += amount
        stop = self.limit if self.block_stop is None else min(self.limit, self.block_stop)
        if self.used > stop:
            if stop < self.limit:
                self.used = min(self.used, self.limit)
                raise BlockGasExhausted(f"block budget {stop} crossed")
            self.used = self.limit
            raise OutOfGas(f"gas limit {self.limit} exhausted")

    def remaining(self) -> int:
        stop = self.limit if self.block_stop is None else min(self.limit, self.block_stop)
        return max(stop - self.used, 0)


# --------------------------------------------------------------------------- #
# Block context
# --------------------------------------------------------------------------- #

@dataclass
class BlockContext:
    """Injectable block environment.

    ``timestamp`` and ``seed`` are proposer-controlled on the legacy rail,
    which is exactly what several attack scenarios exploit.
    """

    number: int = 0
    timestamp: int = 1_000
    seed: int = 0
    coinbase: Optional[Address] = None
    gas_limit: int = DEFAULT_BLOCK_GAS_LIMIT


# --------------------------------------------------------------------------- #
# Transactions and results
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ContractCreation:
    program: str
    endowment: int = 0


@dataclass(frozen=True)
class MessageCall:
    target: Address
    value: int = 0
    input: bytes = b""


TxKind = Union[ContractCreation, MessageCall]


@dataclass(frozen=True)
class LegacyTransaction:
    origin: Address
    kind: TxKind
    gas_limit: int
    gas_price: int = 1
    nonce: int = 0


@dataclass(frozen=True)
class LogRecord:
    source: Address
    topic: str
    data: bytes = b""


@dataclass
class ExecutionResult:
    success: bool
    output: bytes = b""
    gas_used: int = 0
    logs: Tuple[LogRecord, ...] = ()
    error: Optional[str] = None
    created: Optional[Address] = None
    partial: bool = False  # true only for block-budget halts


@dataclass
class CallResult:
    success: bool
    output: bytes = b""
    error: Optional[str] = None


# --------------------------------------------------------------------------- #
# Call input encoding
# --------------------------------------------------------------------------- #
#
# Canonical call input: 1-byte function-name length, the name, a 4-byte
# big-endian declared argument length, then the arguments. The declared
# length lets the strict decoder reject truncated payloads while the
# permissive decoder emulates zero-padding of short arguments.

def encode_input(fn: str, args: bytes = b"", declared_len: Optional[int] = None) -> bytes:
    name = fn.encode()
    if len(name) > 255:
        raise ParseError("function name too long")
    declared = len(args) if declared_len is None else declared_len
    return bytes([len(name)]) + name + declared.to_bytes(4, "big") + args


def decode_input(data: bytes, pad_short: bool) -> Tuple[str, bytes]:
    """Split call input into (function name, argument bytes).

    ``pad_short`` selects the permissive mode: arguments shorter than the
    declared length are right-padded with zero bytes and longer ones are
    truncated. Strict mode raises :class:`MalformedInput` on any mismatch.
    """
    if not data:
        return "", b""
    name_len = data[0]
    header_end = 1 + name_len + 4
    if len(data) < header_end:
        raise MalformedInput("truncated call header")
    fn = data[1 : 1 + name_len].decode(errors="replace")
    declared = int.from_bytes(data[1 + name_len : header_end], "big")
    args = data[header_end:]
    if len(args) != declared:
        if not pad_short:
            raise MalformedInput(
                f"declared {declared} argument bytes, got {len(args)}"
            )
        args = args[:declared].ljust(declared, b"\x00")
    return fn, args


def check_input_shape(data: bytes) -> None:
    """Strict shape check used by static validation; raises on mismatch."""
    if data:
        decode_input(data, pad_short=False)


# Storage slot helpers shared by programs, genesis files and predicates.

def slot(label: str) -> bytes:
    """Fixed 32-byte storage key for a short ASCII label."""
    raw = label.encode()
    if len(raw) > WORD_BYTES:
        raise ParseError(f"storage label too long: {label!r}")
    return raw.ljust(WORD_BYTES, b"\x00")


def addr_slot(addr: Address, prefix: str = "") -> bytes:
    raw = prefix.encode() + addr.payload
    if len(raw) > WORD_BYTES:
        raise ParseError("slot prefix too long")
    return raw.ljust(WORD_BYTES, b"\x00")


def word_int(value: int) -> bytes:
    return (value % WORD_MOD).to_bytes(WORD_BYTES, "big")


def word_addr(addr: Address) -> bytes:
    return addr.payload.ljust(WORD_BYTES, b"\x00")


def as_int(word: bytes) -> int:
    return int.from_bytes(word, "big")


def as_addr(word: bytes) -> Address:
    return Address(word[:20])


def as_label(word: bytes) -> str:
    return word.rstrip(b"\x00").decode()


ZERO_WORD = b"\x00" * WORD_BYTES


# --------------------------------------------------------------------------- #
# Programs
# --------------------------------------------------------------------------- #

Handler = Callable[["CallContext"], Optional[bytes]]


@dataclass(frozen=True)
class Program:
    """A named bundle of deterministic handlers.

    ``spend_entrypoints`` declares which functions can move funds out of
    the account; an empty set on a value-receiving program is the signal
    bundler simulation uses to warn about unrecoverable deposits.
    """

    name: str
    entrypoints: Mapping[str, Handler]
    spend_entrypoints: frozenset = frozenset()


class ProgramRegistry:
    def __init__(self) -> None:
        self._programs: Dict[str, Program] = {}

    def register(self, program: Program) -> None:
        self._programs[program.name] = program

    def get(self, name: str) -> Program:
        try:
            return self._programs[name]
        except KeyError:
            raise UnknownProgram(name) from None

    def has(self, name: str) -> bool:
        return name in self._programs

    def copy(self) -> "ProgramRegistry":
        clone = ProgramRegistry()
        clone._programs = dict(self._programs)
        return clone


# --------------------------------------------------------------------------- #
# Call context (what a handler sees)
# --------------------------------------------------------------------------- #

class CallContext:
    """Single call frame handed to a handler.

    All state access is mediated here so that gas is charged and every
    mutation lands in the world's journal. ``origin`` carries the legacy
    transaction originator on the legacy rail; on the account-abstraction
    rail it always equals the immediate caller, so origin-based
    authentication degenerates to caller-based authentication there.
    """

    def __init__(
        self,
        world: "WorldState",
        meter: GasMeter,
        caller: Address,
        origin: Address,
        self_address: Address,
        value: int,
        args: bytes,
        rail: str,
        depth: int,
        block: BlockContext,
        logs: List[LogRecord],
    ) -> None:
        self.world = world
        self.meter = meter
        self.caller = caller
        self.origin = origin
        self.self_address = self_address
        self.value = value
        self.input = args
        self.rail = rail
        self.depth = depth
        self.block = block
        self._logs = logs

    # ------------------------------ gas ------------------------------------ #

    def step(self, count: int = 1) -> None:
        self.meter.charge(GAS_STEP * count)

    def gas_remaining(self) -> int:
        return self.meter.remaining()

    # ------------------------------ storage --------------------------------- #

    def sload(self, key: bytes) -> bytes:
        self.meter.charge(GAS_SLOAD)
        account = self.world.get_account(self.self_address)
        return account.storage.get(key, ZERO_WORD)

    def sstore(self, key: bytes, value: bytes) -> None:
        if len(key) != WORD_BYTES or len(value) != WORD_BYTES:
            raise ParseError("storage keys and values are exactly 32 bytes")
        self.meter.charge(GAS_SSTORE)
        self.world._set_storage(self.self_address, key, value)

    # ------------------------------ balances -------------------------------- #

    def balance(self, addr: Address) -> int:
        self.meter.charge(GAS_STEP)
        account = self.world.accounts.get(addr)
        return 0 if account is None else account.balance

    @property
    def self_balance(self) -> int:
        return self.world.get_account(self.self_address).balance

    def transfer(self, to: Address, amount: int) -> None:
        """Move wei from this account without running the target's code."""
        self.meter.charge(GAS_TRANSFER)
        self.world.transfer(self.self_address, to, amount)

    # ------------------------------ calls ----------------------------------- #

    def call(self, target: Address, fn: str = "", args: bytes = b"", value: int = 0) -> CallResult:
        """Nested call; an inner failure is observed, not propagated."""
        self.meter.charge(GAS_CALL)
        return self.world._execute_call(
            caller=self.self_address,
            target=target,
            value=value,
            fn=fn,
            args=args,
            meter=self.meter,
            rail=self.rail,
            origin=self.origin,
            depth=self.depth + 1,
            block=self.block,
            logs=self._logs,
        )

    # ------------------------------ tokens ----------------------------------- #

    def token_balance(self, token: str, owner: Address) -> int:
        self.meter.charge(GAS_SLOAD)
        return self.world.tokens.balance_of(token, owner)

    def token_transfer(self, token: str, src: Address, dst: Address, amount: int) -> None:
        """Move token units; only the account itself or its caller may be debited."""
        if src not in (self.self_address, self.caller):
            raise HandlerRevert("TokenSourceNotAuthorized")
        self.meter.charge(GAS_SSTORE)
        try:
            self.world.tokens.transfer(token, src, dst, amount, self.world._journal)
        except InsufficientBalance as exc:
            raise HandlerRevert(f"InsufficientTokenBalance:{exc}") from exc

    # ------------------------------ misc ------------------------------------ #

    def emit(self, topic: str, data: bytes = b"") -> None:
        self.meter.charge(GAS_LOG)
        self._logs.append(LogRecord(self.self_address, topic, data))

    def verify_signature(self, pub: bytes, digest: bytes, tag: int) -> bool:
        self.meter.charge(GAS_SIG_VERIFY)
        return self.world.sig.verify(pub, digest, tag)

    def selfdestruct(self, beneficiary: Address) -> None:
        """Erase this contract's program and storage, sweeping the balance."""
        self.meter.charge(GAS_SELFDESTRUCT)
        self.world._erase_program(self.self_address)
        balance = self.world.get_account(self.self_address).balance
        if balance:
            self.world.transfer(self.self_address, beneficiary, balance)

    def revert(self, reason: str = "revert") -> None:
        raise HandlerRevert(reason)


# --------------------------------------------------------------------------- #
# Token ledger
# --------------------------------------------------------------------------- #

class TokenLedger:
    """Balances and allowances for fungible tokens, by token id.

    Supply per token is constant under transfers; minting happens only at
    genesis time.
    """

    def __init__(self) -> None:
        self.balances: Dict[str, Dict[Address, int]] = {}
        self.allowances: Dict[str, Dict[Tuple[Address, Address], int]] = {}

    def mint(self, token: str, owner: Address, amount: int) -> None:
        if amount < 0:
            raise ParseError("token amounts are non-negative")
        book = self.balances.setdefault(token, {})
        book[owner] = book.get(owner, 0) + amount

    def balance_of(self, token: str, owner: Address) -> int:
        return self.balances.get(token, {}).get(owner, 0)

    def allowance(self, token: str, owner: Address, spender: Address) -> int:
        return self.allowances.get(token, {}).get((owner, spender), 0)

    def approve(self, token: str, owner: Address, spender: Address, amount: int, journal: List) -> None:
        if amount < 0:
            raise ParseError("allowance is non-negative")
        book = self.allowances.setdefault(token, {})
        key = (owner, spender)
        old = book.get(key, 0)
        journal.append(lambda: book.__setitem__(key, old))
        book[key] = amount

    def transfer(self, token: str, src: Address, dst: Address, amount: int, journal: List) -> None:
        if amount < 0:
            raise ParseError("token amounts are non-negative")
        book = self.balances.setdefault(token, {})
        have = book.get(src, 0)
        if have < amount:
            raise InsufficientBalance(f"token {token}: {have} < {amount}")
        old_src, old_dst = have, book.get(dst, 0)
        journal.append(lambda: (book.__setitem__(src, old_src), book.__setitem__(dst, old_dst)))
        book[src] = have - amount
        book[dst] = old_dst + amount

    def spend_allowance(self, token: str, owner: Address, spender: Address, amount: int, journal: List) -> None:
        have = self.allowance(token, owner, spender)
        if have < amount:
            raise InsufficientBalance(f"allowance {token}: {have} < {amount}")
        self.approve(token, owner, spender, have - amount, journal)

    def supply(self, token: str) -> int:
        return sum(self.balances.get(token, {}).values())


# --------------------------------------------------------------------------- #
# World state
# --------------------------------------------------------------------------- #

class WorldState:
    """The full application-layer state of one simulated chain.

    Single-threaded by design; distinct worlds share nothing mutable and a
    world can be deep-copied to fork an identical universe (bundler
    simulation relies on that). Mutations made during execution go through
    journal entries so a failed call can be rolled back precisely.
    """

    def __init__(
        self,
        block: Optional[BlockContext] = None,
        chain_id: int = DEFAULT_CHAIN_ID,
        programs: Optional[ProgramRegistry] = None,
    ) -> None:
        self.accounts: Dict[Address, Account] = {}
        self.block = block or BlockContext()
        self.chain_id = chain_id
        self.programs = programs.copy() if programs else ProgramRegistry()
        self.sig = SimulatedScheme()
        self.tokens = TokenLedger()
        # public key each account authenticates with (bound at creation)
        self.key_bindings: Dict[Address, bytes] = {}
        # explicit validation policies; accounts without one fall back to
        # a single-key policy over their bound key
        self.policies: Dict[Address, object] = {}
        self.sim_time = 0
        self._used_seeds: Set[bytes] = set()
        self._journal: List[Callable[[], None]] = []
        if self.block.coinbase is None:
            self.block.coinbase = self._create_system_account(b"coinbase")

    # ------------------------------ account lifecycle ----------------------- #

    def _create_system_account(self, tag: bytes) -> Address:
        addr = Address(hashlib.sha256(b"aasim/system/" + tag).digest()[:20])
        self.accounts[addr] = Account(kind=AccountKind.EXTERNALLY_OWNED)
        return addr

    def create_eoa(self, seed: bytes, initial_balance: int = 0) -> Address:
        """Create an externally owned account from a 32-byte seed.

        The address, key pair and authentication binding are all
        deterministic functions of the seed.
        """
        seed = bytes(seed)
        if seed in self._used_seeds:
            raise DuplicateSeed(seed.hex())
        addr = eoa_address(seed)
        if addr in self.accounts:
            raise AddressCollision(addr.hex)
        self._used_seeds.add(seed)
        self.accounts[addr] = Account(kind=AccountKind.EXTERNALLY_OWNED, balance=initial_balance)
        self.key_bindings[addr] = self.sig.keygen(seed)
        return addr

    def create_contract(
        self,
        program: str,
        balance: int = 0,
        storage: Optional[Dict[bytes, bytes]] = None,
        address: Optional[Address] = None,
        journal: bool = False,
    ) -> Address:
        if not self.programs.has(program):
            raise UnknownProgram(program)
        if address is None:
            address = Address(hashlib.sha256(b"aasim/static/" + program.encode()).digest()[:20])
        if address in self.accounts:
            raise AddressCollision(address.hex)
        account = Account(
            kind=AccountKind.CONTRACT,
            balance=balance,
            program=program,
            storage=dict(storage or {}),
        )
        if journal:
            self._journal.append(lambda: self.accounts.pop(address, None))
        self.accounts[address] = account
        return address

    def get_account(self, addr: Address) -> Account:
        try:
            return self.accounts[addr]
        except KeyError:
            raise UnknownAccount(addr.hex) from None

    # ------------------------------ journaled mutation ---------------------- #

    def journal_mark(self) -> int:
        return len(self._journal)

    def journal_revert(self, mark: int) -> None:
        while len(self._journal) > mark:
            undo = self._journal.pop()
            undo()

    def journal_commit(self) -> None:
        self._journal.clear()

    def _set_balance(self, addr: Address, value: int) -> None:
        account = self.get_account(addr)
        old = account.balance
        self._journal.append(lambda: setattr(account, "balance", old))
        account.balance = value

    def _set_nonce(self, addr: Address, value: int) -> None:
        account = self.get_account(addr)
        old = account.nonce
        self._journal.append(lambda: setattr(account, "nonce", old))
        account.nonce = value

    def _set_storage(self, addr: Address, key: bytes, value: bytes) -> None:
        storage = self.get_account(addr).storage
        old = storage.get(key)
        if old is None:
            self._journal.append(lambda: storage.pop(key, None))
        else:
            self._journal.append(lambda: storage.__setitem__(key, old))
        storage[key] = value

    def _erase_program(self, addr: Address) -> None:
        account = self.get_account(addr)
        old_program, old_storage = account.program, account.storage

        def undo() -> None:
            account.program = old_program
            account.storage = old_storage

        self._journal.append(undo)
        account.program = None
        account.storage = {}

    def transfer(self, src: Address, dst: Address, amount: int) -> None:
        if amount < 0:
            raise ParseError("transfer amounts are non-negative")
        src_acct = self.get_account(src)
        if src_acct.balance < amount:
            raise InsufficientBalance(f"{src.hex}: {src_acct.balance} < {amount}")
        if dst not in self.accounts:
            raise UnknownAccount(dst.hex)
        self._set_balance(src, src_acct.balance - amount)
        self._set_balance(dst, self.get_account(dst).balance + amount)

    # ------------------------------ execution ------------------------------- #

    def _execute_call(
        self,
        caller: Address,
        target: Address,
        value: int,
        fn: str,
        args: bytes,
        meter: GasMeter,
        rail: str,
        origin: Address,
        depth: int,
        block: BlockContext,
        logs: List[LogRecord],
    ) -> CallResult:
        if not call_depth_guard(depth):
            return CallResult(False, error="CallDepthExceeded")
        mark = self.journal_mark()
        try:
            target_acct = self.accounts.get(target)
            if target_acct is None:
                raise HandlerRevert("UnknownTarget")
            if value:
                self.transfer(caller, target, value)
            if target_acct.kind is AccountKind.EXTERNALLY_OWNED or not fn:
                # bare credit: no code runs
                return CallResult(True)
            if target_acct.program is None:
                raise HandlerRevert("ProgramErased")
            program = self.programs.get(target_acct.program)
            handler = program.entrypoints.get(fn)
            if handler is None:
                raise HandlerRevert(f"UnknownEntryPointFunction:{fn}")
            ctx = CallContext(
                world=self,
                meter=meter,
                caller=caller,
                origin=origin if rail == "legacy" else caller,
                self_address=target,
                value=value,
                args=args,
                rail=rail,
                depth=depth,
                block=block,
                logs=logs,
            )
            output = handler(ctx)
            return CallResult(True, output=output or b"")
        except HandlerRevert as revert:
            self.journal_revert(mark)
            return CallResult(False, error=revert.reason)
        except InsufficientBalance as exc:
            self.journal_revert(mark)
            return CallResult(False, error=f"InsufficientBalance:{exc}")
        # OutOfGas and BlockGasExhausted propagate to the transaction level.

    def run_call(
        self,
        caller: Address,
        target: Address,
        value: int,
        input_data: bytes,
        meter: GasMeter,
        rail: str,
        block: Optional[BlockContext] = None,
        strict_input: bool = False,
    ) -> ExecutionResult:
        """Top-level call under an existing meter; used by both rails.

        Reverts (including out-of-gas) roll everything back and report
        failure; a block-budget halt keeps partial state and is flagged.
        """
        block = block or self.block
        logs: List[LogRecord] = []
        mark = self.journal_mark()
        try:
            fn, args = decode_input(input_data, pad_short=not strict_input)
        except MalformedInput as exc:
            return ExecutionResult(False, gas_used=meter.used, error=f"MalformedInput:{exc}")
        with _deep_recursion():
            try:
                result = self._execute_call(
                    caller=caller,
                    target=target,
                    value=value,
                    fn=fn,
                    args=args,
                    meter=meter,
                    rail=rail,
                    origin=caller,
                    depth=1,
                    block=block,
                    logs=logs,
                )
            except OutOfGas:
                self.journal_revert(mark)
                return ExecutionResult(False, gas_used=meter.used, error="OutOfGas")
            except BlockGasExhausted:
                # Deliberate non-atomic halt: state stays where it was.
                return ExecutionResult(
                    False, gas_used=meter.used, logs=tuple(logs),
                    error="BlockGasExhausted", partial=True,
                )
        if not result.success:
            return ExecutionResult(
                False, output=result.output, gas_used=meter.used,
                logs=tuple(logs), error=result.error,
            )
        return ExecutionResult(True, output=result.output, gas_used=meter.used, logs=tuple(logs))

    # ------------------------------ legacy transactions --------------------- #

    def apply_legacy_tx(
        self, tx: LegacyTransaction, block_gas_remaining: Optional[int] = None
    ) -> ExecutionResult:
        """Validate, include and execute one legacy transaction.

        Pre-inclusion failures raise and touch nothing. Once included,
        the origin nonce advances exactly once and gas is charged whether
        or not execution succeeds; fees flow to the coinbase account.
        """
        origin = self.accounts.get(tx.origin)
        if origin is None:
            raise UnknownTarget(f"origin {tx.origin.hex} does not exist")
        if origin.kind is not AccountKind.EXTERNALLY_OWNED:
            raise TransactionNotFromEOA(tx.origin.hex)
        if tx.nonce != origin.nonce:
            raise BadNonce(f"expected {origin.nonce}, got {tx.nonce}")
        if tx.gas_limit < INTRINSIC_GAS:
            raise OutOfGas(f"gas limit {tx.gas_limit} below intrinsic {INTRINSIC_GAS}")
        if isinstance(tx.kind, ContractCreation):
            moved = tx.kind.endowment
        else:
            moved = tx.kind.value
        upfront = tx.gas_limit * tx.gas_price + moved
        if origin.balance < upfront:
            raise InsufficientFunds(f"{origin.balance} < {upfront}")
        if isinstance(tx.kind, MessageCall) and tx.kind.target not in self.accounts:
            raise UnknownTarget(tx.kind.target.hex)
        if isinstance(tx.kind, ContractCreation):
            if not self.programs.has(tx.kind.program):
                raise UnknownProgram(tx.kind.program)
            if contract_address(tx.origin, origin.nonce) in self.accounts:
                raise AddressCollision(contract_address(tx.origin, origin.nonce).hex)

        # Included: reserve the full gas allowance and advance the nonce.
        assert not self._journal, "journal must be empty between transactions"
        nonce_used = origin.nonce
        self._set_nonce(tx.origin, nonce_used + 1)
        self._set_balance(tx.origin, origin.balance - tx.gas_limit * tx.gas_price)

        meter = GasMeter(limit=tx.gas_limit, price=tx.gas_price, block_stop=block_gas_remaining)
        try:
            meter.charge(INTRINSIC_GAS)
        except (OutOfGas, BlockGasExhausted):
            # Unreachable for OutOfGas (limit >= intrinsic); a block budget
            # below intrinsic halts before any execution.
            result = ExecutionResult(False, gas_used=meter.used, error="BlockGasExhausted", partial=True)
            self._settle_gas(tx, meter)
            self.journal_commit()
            return result

        if isinstance(tx.kind, ContractCreation):
            new_addr = contract_address(tx.origin, nonce_used)
            self.create_contract(tx.kind.program, balance=0, address=new_addr, journal=True)
            if tx.kind.endowment:
                self.transfer(tx.origin, new_addr, tx.kind.endowment)
            result = ExecutionResult(True, gas_used=meter.used, created=new_addr)
        else:
            result = self.run_call(
                caller=tx.origin,
                target=tx.kind.target,
                value=tx.kind.value,
                input_data=tx.kind.input,
                meter=meter,
                rail="legacy",
            )
        self._settle_gas(tx, meter)
        self.journal_commit()
        result.gas_used = meter.used
        return result

    def _settle_gas(self, tx: LegacyTransaction, meter: GasMeter) -> None:
        refund = (tx.gas_limit - meter.used) * tx.gas_price
        if refund:
            self._set_balance(tx.origin, self.get_account(tx.origin).balance + refund)
        fee = meter.used * tx.gas_price
        if fee:
            coinbase = self.block.coinbase
            assert coinbase is not None
            if coinbase not in self.accounts:
                self.accounts[coinbase] = Account(kind=AccountKind.EXTERNALLY_OWNED)
            self._set_balance(coinbase, self.get_account(coinbase).balance + fee)

    # ------------------------------ introspection --------------------------- #

    def total_wei(self) -> int:
        return sum(account.balance for account in self.accounts.values())

    def state_digest(self) -> bytes:
        """Order-independent digest of the observable world state."""
        h = hashlib.sha256()
        for addr in sorted(self.accounts):
            account = self.accounts[addr]
            h.update(addr.payload)
            h.update(account.kind.value.encode())
            h.update(account.balance.to_bytes(32, "big"))
            h.update(account.nonce.to_bytes(8, "big"))
            h.update((account.program or "").encode())
            for key in sorted(account.storage):
                h.update(key)
                h.update(account.storage[key])
        for token in sorted(self.tokens.balances):
            h.update(token.encode())
            for owner in sorted(self.tokens.balances[token]):
                h.update(owner.payload)
                h.update(self.tokens.balances[token][owner].to_bytes(32, "big"))
        return h.digest()

    def clone(self) -> "WorldState":
        assert not self._journal, "cannot clone mid-execution"
        return copy.deepcopy(self)


class TransactionNotFromEOA(BadNonce):
    """Contract accounts cannot originate legacy transactions."""


# --------------------------------------------------------------------------- #
# Genesis account loading
# --------------------------------------------------------------------------- #

def load_accounts(world: WorldState, entries: Sequence[dict]) -> Dict[str, Address]:
    """Instantiate genesis accounts; returns name -> address.

    Accounts are created in lexicographic address order regardless of file
    order so identical genesis content always produces an identical world.
    Entries carry either a ``seed`` (externally owned) or an explicit
    ``address`` plus optional ``program``/``storage`` (contract).
    """
    prepared = []
    for entry in entries:
        name = entry.get("name")
        if "seed" in entry:
            seed = _parse_seed(entry["seed"])
            addr = eoa_address(seed)
            prepared.append((addr, name, entry, seed))
        elif "address" in entry:
            addr = Address.from_hex(entry["address"])
            prepared.append((addr, name, entry, None))
        else:
            raise ParseError(f"account entry needs a seed or an address: {entry!r}")
    names: Dict[str, Address] = {}
    for addr, name, entry, seed in sorted(prepared, key=lambda item: item[0]):
        balance = parse_amount(entry.get("balance", 0))
        if seed is not None:
            world.create_eoa(seed, balance)
        else:
            program = entry.get("program")
            if program:
                storage = {
                    _parse_storage_key(k): _parse_storage_value(v)
                    for k, v in entry.get("storage", {}).items()
                }
                world.create_contract(program, balance=balance, storage=storage, address=addr)
            else:
                if addr in world.accounts:
                    raise AddressCollision(addr.hex)
                world.accounts[addr] = Account(kind=AccountKind.EXTERNALLY_OWNED, balance=balance)
        if name:
            names[name] = addr
    return names


def parse_amount(value) -> int:
    if isinstance(value, int):
        amount = value
    elif isinstance(value, str):
        try:
            amount = int(value, 10)
        except ValueError as exc:
            raise ParseError(f"bad amount: {value!r}") from exc
    else:
        raise ParseError(f"bad amount: {value!r}")
    if amount < 0:
        raise ParseError("amounts are non-negative")
    return amount


def _parse_seed(text: str) -> bytes:
    body = text[2:] if text.startswith("0x") else text
    try:
        raw = bytes.fromhex(body)
    except ValueError as exc:
        raise ParseError(f"bad seed hex: {text!r}") from exc
    if len(raw) > 32:
        raise ParseError("seeds are at most 32 bytes")
    return raw.rjust(32, b"\x00")


def _parse_storage_key(text: str) -> bytes:
    if text.startswith("0x"):
        raw = bytes.fromhex(text[2:])
        if len(raw) != WORD_BYTES:
            raise ParseError(f"storage key must be 32 bytes: {text!r}")
        return raw
    return slot(text)


def _parse_storage_value(text: str) -> bytes:
    if isinstance(text, int):
        return word_int(text)
    if text.startswith("0x"):
        raw = bytes.fromhex(text[2:])
        if len(raw) != WORD_BYTES:
            raise ParseError(f"storage value must be 32 bytes: {text!r}")
        return raw
    if text.startswith("int:"):
        return word_int(int(text[4:], 10))
    raise ParseError(f"bad storage value: {text!r}")
